"""Dyadic grids, tensor Haar systems, and transforms on truncated trees.

Functions live on the leaves (depth ``L``) of a dyadic grid over the unit
cube [0,1)^d.  A Haar expansion carries the coarse mean on the root plus one
coefficient per (cube, cancellative signature) pair for levels 0..L-1, so
Parseval closes exactly on the finite tree.

Everything here is a pure function of immutable inputs; per-level arrays keep
the spatial axes first and value axes last, so all tree walks are vectorized.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import CompletenessError, ShapeError


# ---------------------------------------------------------------------------
# Grids and cubes
# ---------------------------------------------------------------------------

class Grid:
    """A truncated dyadic grid on [0,1)^d with leaves at level L.

    ``shift`` is either "standard" or an index t in {1..2^d} selecting the
    third-shifted grid whose level-k cubes are 2^{-k}([0,1)^d + m + (-1)^k s)
    with s = (bits of t-1)/3.  The standard truncated grid is the one used
    for computation; shifted grids matter for covering arbitrary cubes.
    """

    def __init__(self, d, L, shift="standard"):
        if d < 1 or L < 1:
            raise ValueError("dimension and depth must be positive")
        if shift != "standard" and not (1 <= int(shift) <= 2 ** d):
            raise ValueError(f"shift index must be in 1..{2 ** d}")
        self.d = int(d)
        self.L = int(L)
        self.shift = shift if shift == "standard" else int(shift)

    @property
    def n_leaves(self):
        return (1 << self.L) ** self.d

    @property
    def leaf_shape(self):
        return (1 << self.L,) * self.d

    @property
    def leaf_measure(self):
        return 2.0 ** (-self.L * self.d)

    def shift_vector(self):
        """Per-coordinate shift numerators over 3 (0 for the standard grid)."""
        if self.shift == "standard":
            return (0,) * self.d
        bits = [(self.shift - 1) >> (self.d - 1 - i) & 1 for i in range(self.d)]
        return tuple(bits)

    def root(self):
        return Cube(self, 0, (0,) * self.d)

    def cube(self, level, offset):
        return Cube(self, level, tuple(offset))

    def cubes_at_level(self, k):
        side = 1 << k
        return [Cube(self, k, m) for m in itertools.product(range(side), repeat=self.d)]

    def all_cubes(self, max_level=None):
        top = self.L if max_level is None else max_level
        out = []
        for k in range(top + 1):
            out.extend(self.cubes_at_level(k))
        return out

    def __eq__(self, other):
        return (isinstance(other, Grid) and self.d == other.d
                and self.L == other.L and self.shift == other.shift)

    def __hash__(self):
        return hash((self.d, self.L, self.shift))

    def __repr__(self):
        return f"Grid(d={self.d}, L={self.L}, shift={self.shift!r})"

    def to_json(self):
        return json.dumps({"d": self.d, "L": self.L, "shift": self.shift})

    @classmethod
    def from_json(cls, text):
        spec = json.loads(text) if isinstance(text, str) else text
        return cls(spec["d"], spec["L"], spec.get("shift", "standard"))


@dataclass(frozen=True)
class Cube:
    """Dyadic cube 2^{-k}([0,1)^d + m + (-1)^k s) identified by (level, offset)."""

    grid: Grid
    level: int
    offset: tuple

    @property
    def side(self):
        return 2.0 ** (-self.level)

    @property
    def measure(self):
        return 2.0 ** (-self.level * self.grid.d)

    def bounds(self):
        """Exact per-coordinate (lo, hi) as Fractions."""
        s = self.grid.shift_vector()
        sgn = -1 if self.level % 2 else 1
        lo = tuple(Fraction(3 * m + sgn * t, 3 * (1 << self.level)) if self.level >= 0
                   else Fraction(3 * m + sgn * t, 3) * (1 << -self.level)
                   for m, t in zip(self.offset, s))
        step = Fraction(1, 1 << self.level) if self.level >= 0 else Fraction(1 << -self.level)
        return [(a, a + step) for a in lo]

    def children(self):
        # child offsets follow the (-1)^k alternation so nesting is exact
        sgn = -1 if self.level % 2 else 1
        shift = self.grid.shift_vector()
        base = tuple(2 * m + (sgn if t else 0) for m, t in zip(self.offset, shift))
        kids = []
        for corner in itertools.product((0, 1), repeat=self.grid.d):
            kids.append(Cube(self.grid, self.level + 1,
                             tuple(b + c for b, c in zip(base, corner))))
        return kids

    def parent(self):
        if self.level == 0:
            raise ValueError("root cube has no parent")
        # invert children(): m_child = 2*m_parent + sgn_parent*tau + corner
        sgn_parent = -1 if (self.level - 1) % 2 else 1
        shift = self.grid.shift_vector()
        par = tuple((m - (sgn_parent if t else 0)) // 2 for m, t in zip(self.offset, shift))
        return Cube(self.grid, self.level - 1, par)

    def contains(self, other):
        """Exact containment check via rational bounds."""
        for (a, b), (c, e) in zip(self.bounds(), other.bounds()):
            if not (a <= c and e <= b):
                return False
        return True

    def contains_point(self, point):
        return all(a <= x < b for (a, b), x in zip(self.bounds(), point))


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------

def signatures(d):
    """All cancellative signatures {0,1}^d minus the all-ones tuple, lex order."""
    return [eps for eps in itertools.product((0, 1), repeat=d) if eps != (1,) * d]


def is_cancellative(eps):
    return tuple(eps) != (1,) * len(eps)


def haar_sign_table(d):
    """Signs of h^eps on the 2^d child corners: S[sig, corner] = (-1)^{sum of
    corner bits where eps is 0}.  Corners are flattened in lex (first axis
    major) order, matching split_children."""
    sigs = signatures(d)
    corners = list(itertools.product((0, 1), repeat=d))
    S = np.empty((len(sigs), len(corners)))
    for i, eps in enumerate(sigs):
        for j, c in enumerate(corners):
            S[i, j] = (-1.0) ** sum(cb for eb, cb in zip(eps, c) if eb == 0)
    return S


def signature_product(eps, eps_prime):
    """Pointwise product rule |I|^{1/2} h^eps h^{eps'} = sign * h^{psi}.

    Coordinatewise psi_i = XNOR(eps_i, eps'_i); the global sign is +1 in every
    coordinate (products of one-dimensional Haar values never flip sign), but
    it is tracked explicitly and validated leafwise in the tests.  The result
    is cancellative iff eps != eps'.
    """
    eps, eps_prime = tuple(eps), tuple(eps_prime)
    if len(eps) != len(eps_prime):
        raise ShapeError("signatures must share a dimension")
    psi = tuple(1 - (a ^ b) for a, b in zip(eps, eps_prime))
    return psi, 1


# ---------------------------------------------------------------------------
# Per-level array plumbing
# ---------------------------------------------------------------------------

def coarsen_mean(a, d):
    """Average sibling blocks: (2m,)*d + rest -> (m,)*d + rest."""
    for ax in range(d):
        n = a.shape[ax]
        a = a.reshape(a.shape[:ax] + (n // 2, 2) + a.shape[ax + 1:])
        a = a.mean(axis=ax + 1)
    return a


def coarsen_sum(a, d):
    """Sum sibling blocks: (2m,)*d + rest -> (m,)*d + rest."""
    for ax in range(d):
        n = a.shape[ax]
        a = a.reshape(a.shape[:ax] + (n // 2, 2) + a.shape[ax + 1:])
        a = a.sum(axis=ax + 1)
    return a


def refine(a, d):
    """Broadcast cube values to their 2^d children: (m,)*d + rest -> (2m,)*d + rest."""
    for ax in range(d):
        a = np.repeat(a, 2, axis=ax)
    return a


def split_children(a, d):
    """(2m,)*d + rest -> (m,)*d + rest + (2^d,) with sibling corners trailing.

    Corner index is lex over coordinates (first coordinate major), matching
    haar_sign_table.
    """
    for ax in range(d):
        n = a.shape[ax]
        a = a.reshape(a.shape[:ax] + (n // 2, 2) + a.shape[ax + 1:])
        a = np.moveaxis(a, ax + 1, -1)
    if d > 1:
        a = a.reshape(a.shape[:-d] + ((1 << d),))
    return a


def merge_children(a, d):
    """Inverse of split_children."""
    if d > 1:
        a = a.reshape(a.shape[:-1] + (2,) * d)
    for ax in reversed(range(d)):
        a = np.moveaxis(a, -1, ax + 1)
        sh = a.shape
        a = a.reshape(sh[:ax] + (sh[ax] * 2,) + sh[ax + 2:])
    return a


def mean_pyramid(values, d, L):
    """Cube means at every level: list of arrays, level k shaped (2^k,)*d + rest."""
    means = [None] * (L + 1)
    means[L] = np.asarray(values, dtype=float)
    for k in range(L - 1, -1, -1):
        means[k] = coarsen_mean(means[k + 1], d)
    return means


def subtree_sums(per_level, d):
    """out[k] = per_level[k] + sum over all strict descendants, levelwise arrays."""
    L = len(per_level) - 1
    out = [None] * (L + 1)
    out[L] = np.asarray(per_level[L], dtype=float)
    for k in range(L - 1, -1, -1):
        out[k] = per_level[k] + coarsen_sum(out[k + 1], d)
    return out


# ---------------------------------------------------------------------------
# Step functions and Haar expansions
# ---------------------------------------------------------------------------

VALUE_KINDS = ("scalar", "vector", "matrix")


class StepFunction:
    """Function constant on depth-L leaf cells, with scalar/vector/matrix values.

    values has shape (2^L,)*d + value_shape; value_shape is () for scalars,
    (n,) for vectors and (n, n) for matrices.
    """

    def __init__(self, grid, values, kind=None):
        values = np.asarray(values, dtype=float)
        if values.shape[:grid.d] != grid.leaf_shape:
            raise ShapeError(f"leaf axes {values.shape[:grid.d]} do not match grid {grid.leaf_shape}")
        vshape = values.shape[grid.d:]
        if kind is None:
            kind = VALUE_KINDS[len(vshape)]
        if kind not in VALUE_KINDS:
            raise ShapeError(f"unknown value kind {kind!r}")
        if len(vshape) != VALUE_KINDS.index(kind):
            raise ShapeError(f"value shape {vshape} inconsistent with kind {kind!r}")
        if kind == "matrix" and vshape[0] != vshape[1]:
            raise ShapeError("matrix values must be square")
        self.grid = grid
        self.values = values
        self.kind = kind

    @property
    def value_shape(self):
        return self.values.shape[self.grid.d:]

    def _check_same_grid(self, other):
        if self.grid != other.grid:
            raise ShapeError("step functions live on different grids")

    def __add__(self, other):
        self._check_same_grid(other)
        if self.kind != other.kind:
            raise ShapeError("cannot add values of different kinds")
        return StepFunction(self.grid, self.values + other.values, self.kind)

    def __sub__(self, other):
        self._check_same_grid(other)
        if self.kind != other.kind:
            raise ShapeError("cannot subtract values of different kinds")
        return StepFunction(self.grid, self.values - other.values, self.kind)

    def __mul__(self, scalar):
        return StepFunction(self.grid, self.values * float(scalar), self.kind)

    __rmul__ = __mul__

    def matvec(self, vec):
        """Pointwise matrix-vector product of a matrix step function with a vector one."""
        if self.kind != "matrix" or vec.kind != "vector":
            raise ShapeError("matvec needs a matrix step function and a vector one")
        self._check_same_grid(vec)
        out = np.einsum("...ij,...j->...i", self.values, vec.values)
        return StepFunction(self.grid, out, "vector")

    def integral(self):
        """Exact integral over [0,1)^d (leaf values times leaf measure)."""
        axes = tuple(range(self.grid.d))
        return self.values.sum(axis=axes) * self.grid.leaf_measure

    def norm_l2(self):
        """Unweighted L^2 norm; for matrix values the Hilbert-Schmidt norm is used."""
        return float(np.sqrt((self.values ** 2).sum() * self.grid.leaf_measure))

    @classmethod
    def constant(cls, grid, value):
        value = np.asarray(value, dtype=float)
        values = np.broadcast_to(value, grid.leaf_shape + value.shape).copy()
        return cls(grid, values)


class HaarExpansion:
    """Coarse mean plus coefficients over (cube, cancellative signature) pairs.

    coeffs[k] has shape (2^k,)*d + (2^d - 1,) + value_shape for k in 0..L-1.
    """

    def __init__(self, grid, mean, coeffs, kind=None):
        mean = np.asarray(mean, dtype=float)
        if kind is None:
            kind = VALUE_KINDS[mean.ndim]
        self.grid = grid
        self.mean = mean
        self.kind = kind
        if len(coeffs) != grid.L:
            raise CompletenessError(f"expected {grid.L} coefficient levels, got {len(coeffs)}")
        nsig = (1 << grid.d) - 1
        for k, c in enumerate(coeffs):
            want = (1 << k,) * grid.d + (nsig,) + mean.shape
            if c.shape != want:
                raise CompletenessError(f"level {k} coefficients have shape {c.shape}, want {want}")
        self.coeffs = list(coeffs)

    @property
    def value_shape(self):
        return self.mean.shape

    def coefficient(self, cube, eps):
        """Single coefficient f_I^eps (cube from the expansion's grid)."""
        sig_index = signatures(self.grid.d).index(tuple(eps))
        return self.coeffs[cube.level][cube.offset + (sig_index,)]

    def parseval_total(self):
        """|Q0| |mean|^2 + sum of squared coefficients (equals the squared L^2 norm)."""
        total = float((self.mean ** 2).sum())
        for c in self.coeffs:
            total += float((c ** 2).sum())
        return total

    def to_csv(self, path):
        """Rows: level, offset coordinates, signature bits, coefficient entries."""
        sigs = signatures(self.grid.d)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            off_cols = [f"m{i}" for i in range(self.grid.d)]
            sig_cols = [f"eps{i}" for i in range(self.grid.d)]
            val_cols = [f"c{i}" for i in range(int(np.prod(self.value_shape, dtype=int)) or 1)]
            writer.writerow(["level", *off_cols, *sig_cols, *val_cols])
            for k, arr in enumerate(self.coeffs):
                side = 1 << k
                for off in itertools.product(range(side), repeat=self.grid.d):
                    for s, eps in enumerate(sigs):
                        vals = np.ravel(arr[off + (s,)])
                        writer.writerow([k, *off, *eps, *(repr(float(v)) for v in vals)])


def haar_analyze(values, d, L):
    """Array-level forward transform.

    values: (2^L,)*d + value_shape.  Returns (mean, coeffs, means_pyramid)
    with coeffs[k] shaped (2^k,)*d + (2^d - 1,) + value_shape; the signature
    axis sits right after the spatial axes.  Value axes are arbitrary, so a
    trailing batch axis rides along for free.
    """
    sign = haar_sign_table(d)
    means = mean_pyramid(values, d, L)
    coeffs = []
    for k in range(L):
        ch = split_children(means[k + 1], d)          # (2^k,)*d + vshape + (2^d,)
        co = ch @ sign.T                              # -> ... + (2^d - 1,)
        co = np.moveaxis(co, -1, d)                   # signature axis after spatial
        scale = 2.0 ** (-k * d / 2.0) / (1 << d)
        coeffs.append(co * scale)
    return means[0][(0,) * d], coeffs, means


def haar_synthesize(mean, coeffs, d, L):
    """Array-level inverse transform: leaf values of mean + sum f_I^eps h_I^eps."""
    sign = haar_sign_table(d)
    cur = np.broadcast_to(mean, (1,) * d + np.shape(mean)).copy()
    for k in range(L):
        contrib = np.moveaxis(coeffs[k], d, -1) @ sign       # ... + (2^d,)
        scale = 2.0 ** (k * d / 2.0)
        ch = contrib * scale + cur[..., None]
        cur = merge_children(ch, d)
    return cur


def haar_transform(f: StepFunction) -> HaarExpansion:
    """Forward transform: exact coefficients f_I^eps = int f h_I^eps from leaf values."""
    mean, coeffs, _ = haar_analyze(f.values, f.grid.d, f.grid.L)
    return HaarExpansion(f.grid, mean, coeffs, f.kind)


def inverse_haar(e: HaarExpansion) -> StepFunction:
    """Reconstruct leaf values; exact inverse of haar_transform."""
    vals = haar_synthesize(e.mean, e.coeffs, e.grid.d, e.grid.L)
    return StepFunction(e.grid, vals, e.kind)


def random_step(grid, value_shape=(), rng=None, scale=1.0):
    rng = np.random.default_rng(rng)
    vals = rng.standard_normal(grid.leaf_shape + tuple(value_shape)) * scale
    return StepFunction(grid, vals)


# ---------------------------------------------------------------------------
# Covering of arbitrary cubes by shifted-grid cubes
# ---------------------------------------------------------------------------

def find_covering_cube(lo, hi, max_ratio=6):
    """Find (t, cube) with cube in the t-th shifted grid, [lo,hi) inside it and
    side length at most ``max_ratio`` times the input's.

    lo, hi are per-coordinate rationals (anything Fraction accepts).  The
    search scans the at most three candidate levels and all 2^d shifts; a
    result is guaranteed by the third-shift covering lemma.
    """
    lo = [Fraction(x) for x in lo]
    hi = [Fraction(x) for x in hi]
    d = len(lo)
    h = max(b - a for a, b in zip(lo, hi))
    if h <= 0:
        raise ValueError("degenerate cube")
    # candidate levels: 2^{-k} in [h, max_ratio*h], largest k (smallest cube) first
    k = 0
    while _pow2(-(k + 1)) >= h:
        k += 1
    while _pow2(-k) < h:
        k -= 1
    candidates = [kk for kk in (k, k - 1, k - 2) if _pow2(-kk) <= max_ratio * h]
    for kk in sorted(candidates, reverse=True):
        step = _pow2(-kk)
        sgn = -1 if kk % 2 else 1
        for t in range(1, (1 << d) + 1):
            bits = [(t - 1) >> (d - 1 - i) & 1 for i in range(d)]
            offs = []
            ok = True
            for a, b, tau in zip(lo, hi, bits):
                shift = Fraction(sgn * tau, 3) * step
                m = (a - shift) / step
                mi = m.numerator // m.denominator  # floor
                if b > step * (mi + 1) + shift:
                    ok = False
                    break
                offs.append(mi)
            if ok:
                grid = Grid(d, 1, shift="standard" if t == 1 else t)
                return t, Cube(grid, kk, tuple(offs))
    raise AssertionError("covering lemma failed; should be unreachable")


def _pow2(k):
    return Fraction(1 << k) if k >= 0 else Fraction(1, 1 << -k)


# ---------------------------------------------------------------------------
# Chain maxima and the scalar Carleson bound
# ---------------------------------------------------------------------------

def sequence_maximal(per_level, d) -> np.ndarray:
    """Leafwise a*(x) = max over the chain of cubes containing x's leaf.

    per_level: nonnegative arrays for levels 0..L, level k shaped (2^k,)*d.
    Returns the leaf array of chain maxima.
    """
    cur = np.asarray(per_level[0], dtype=float)
    for k in range(1, len(per_level)):
        cur = np.maximum(refine(cur, d), per_level[k])
    return cur


def levels_from_cube_map(grid, mapping, default=0.0, max_level=None):
    """Per-level arrays from a {Cube: value} map (missing cubes get ``default``)."""
    top = grid.L if max_level is None else max_level
    out = [np.full((1 << k,) * grid.d, float(default)) for k in range(top + 1)]
    for cube, val in mapping.items():
        out[cube.level][cube.offset] = val
    return out


def carleson_intensity(lam_levels, d):
    """Smallest C with sup_J (1/|J|) sum_{I subset J, eps} lam_I^eps <= C.

    lam_levels: per-level arrays shaped (2^k,)*d + (nsig,), levels 0..L-1.
    Returns (C, per-level normalized subtree sums).
    """
    L = len(lam_levels)
    per_cube = [np.asarray(a, dtype=float).sum(axis=-1) for a in lam_levels]
    per_cube.append(np.zeros((1 << L,) * d))  # leaves carry no coefficients
    sums = subtree_sums(per_cube, d)
    best = 0.0
    normalized = []
    for k, s in enumerate(sums):
        meas = 2.0 ** (-k * d)
        normalized.append(s / meas)
        best = max(best, float(s.max()) / meas)
    return best, normalized
