"""Finite linear operators: paraproducts, Haar multipliers, shifts, commutators,
the weighted embedding operator, square functions, and operator norms.

Every operator acts on vector step functions.  The array-level kernels accept
leaf values shaped grid + (n,) or grid + (n, B); the trailing batch axis is
how dense matrices get assembled in one vectorized pass.  All operators
annihilate the coarse mean (their sums run over cancellative Haar terms); the
mean channel of the input still matters wherever cube averages appear.

Each operator also carries its unweighted-L^2 adjoint kernel (the leaf basis
is orthogonal with equal cell measures, so the adjoint is the dense
transpose), which makes matrix-free norm iterations possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .dyadic import (
    Grid, StepFunction, haar_analyze, haar_synthesize, mean_pyramid, refine,
    signature_product, signatures,
)
from .errors import ShapeError, ShiftMapError
from .weights import MatrixWeight, reducing_pyramid


def _mv(mats, vecs):
    """Matrix-vector product broadcasting over leading axes; vecs may carry a
    trailing batch axis (then it is a plain batched matmul)."""
    if vecs.ndim == mats.ndim:
        return mats @ vecs
    return np.einsum("...ij,...j->...i", mats, vecs)


def _transpose(mats):
    return np.swapaxes(mats, -1, -2)


# ---------------------------------------------------------------------------
# Symbols, sequences, shifts
# ---------------------------------------------------------------------------

class MatrixSymbol:
    """Matrix-valued step function with cached Haar coefficients and cube means."""

    def __init__(self, step: StepFunction):
        if step.kind != "matrix":
            raise ShapeError("a symbol must be a matrix step function")
        self.step = step
        self.grid = step.grid
        self.n = step.value_shape[0]
        mean, coeffs, means = haar_analyze(step.values, self.grid.d, self.grid.L)
        self.mean = mean
        self.coeffs = coeffs          # levels 0..L-1, (2^k,)*d + (S, n, n)
        self.means = means            # levels 0..L, (2^k,)*d + (n, n)

    @classmethod
    def from_values(cls, grid, values):
        return cls(StepFunction(grid, values, "matrix"))

    def transpose(self):
        return MatrixSymbol(StepFunction(self.grid, _transpose(self.step.values), "matrix"))

    def hs_parseval_gap(self):
        """Parseval defect of the cached coefficients against int ||B||_HS^2."""
        total = float((self.mean ** 2).sum())
        for c in self.coeffs:
            total += float((c ** 2).sum())
        norm2 = float((self.step.values ** 2).sum()) * self.grid.leaf_measure
        return abs(total - norm2)


class MatrixSequence:
    """Coefficient sequence A_I^eps: per-level arrays (2^k,)*d + (S, n, n)."""

    def __init__(self, grid: Grid, levels, n=None):
        self.grid = grid
        nsig = (1 << grid.d) - 1
        self.levels = [np.asarray(a, dtype=float) for a in levels]
        if len(self.levels) != grid.L:
            raise ShapeError(f"need {grid.L} coefficient levels")
        self.n = n if n is not None else self.levels[0].shape[-1]
        for k, a in enumerate(self.levels):
            want = (1 << k,) * grid.d + (nsig, self.n, self.n)
            if a.shape != want:
                raise ShapeError(f"level {k} has shape {a.shape}, want {want}")

    @classmethod
    def zeros(cls, grid, n=2):
        nsig = (1 << grid.d) - 1
        return cls(grid, [np.zeros((1 << k,) * grid.d + (nsig, n, n)) for k in range(grid.L)], n)

    @classmethod
    def constant(cls, grid, mat):
        mat = np.asarray(mat, dtype=float)
        nsig = (1 << grid.d) - 1
        levels = [np.broadcast_to(mat, (1 << k,) * grid.d + (nsig,) + mat.shape).copy()
                  for k in range(grid.L)]
        return cls(grid, levels, mat.shape[0])

    @classmethod
    def from_symbol(cls, B: MatrixSymbol):
        return cls(B.grid, [c.copy() for c in B.coeffs], B.n)

    @classmethod
    def random(cls, grid, n=2, rng=None, scale=1.0, haar_normalized=True):
        """Random sequence; with haar_normalized the size of A_I^eps shrinks like
        |I|^{1/2}, mimicking Haar coefficients of a bounded-oscillation symbol."""
        rng = np.random.default_rng(rng)
        nsig = (1 << grid.d) - 1
        levels = []
        for k in range(grid.L):
            size = scale * (2.0 ** (-k * grid.d / 2.0) if haar_normalized else 1.0)
            levels.append(rng.standard_normal((1 << k,) * grid.d + (nsig, n, n)) * size)
        return cls(grid, levels, n)

    def transpose(self):
        return MatrixSequence(self.grid, [_transpose(a) for a in self.levels], self.n)

    def with_entry(self, level, offset, sig_index, mat):
        """Copy with one coefficient overwritten (test utility)."""
        levels = [a.copy() for a in self.levels]
        levels[level][tuple(offset) + (sig_index,)] = np.asarray(mat, dtype=float)
        return MatrixSequence(self.grid, levels, self.n)


class ShiftMap:
    """sigma = (sigma_cube, sigma_sig): the cube component maps each cube to one
    of its children (2 ell(sigma(I)) = ell(I), sigma(I) inside I); the signature
    component maps cancellative signatures to cancellative signatures (identity
    by default, bijective or not).  The components act independently so the
    commutator case analysis stays well defined."""

    def __init__(self, grid: Grid, corner_levels, sig_map=None):
        self.grid = grid
        d = grid.d
        self.corners = [np.asarray(c, dtype=int) for c in corner_levels]
        if len(self.corners) != grid.L:
            raise ShiftMapError(f"need corner choices for levels 0..{grid.L - 1}")
        for k, c in enumerate(self.corners):
            if c.shape != (1 << k,) * d + (d,):
                raise ShiftMapError(f"level {k} corner array has shape {c.shape}")
            if c.min() < 0 or c.max() > 1:
                raise ShiftMapError("corner entries must be child-selector bits")
        nsig = (1 << d) - 1
        if sig_map is None:
            sig_map = np.arange(nsig)
        self.sig_map = np.asarray(sig_map, dtype=int)
        if self.sig_map.shape != (nsig,) or self.sig_map.min() < 0 or self.sig_map.max() >= nsig:
            raise ShiftMapError("signature map must send cancellative signatures to themselves")

    @classmethod
    def left_child(cls, grid, sig_map=None):
        corners = [np.zeros((1 << k,) * grid.d + (grid.d,), dtype=int) for k in range(grid.L)]
        return cls(grid, corners, sig_map)

    @classmethod
    def random_child(cls, grid, seed=0, sig_map=None):
        rng = np.random.default_rng(seed)
        corners = [rng.integers(0, 2, size=(1 << k,) * grid.d + (grid.d,))
                   for k in range(grid.L)]
        return cls(grid, corners, sig_map)

    def target_offset(self, level, offset):
        """sigma(I)'s offset at level+1 for the cube (level, offset)."""
        corner = self.corners[level][tuple(offset)]
        return tuple(2 * m + int(c) for m, c in zip(offset, corner))

    def flat_targets(self, level):
        """Flattened child-level indices of sigma over all cubes at ``level``."""
        d = self.grid.d
        side = 1 << level
        grids = np.meshgrid(*[np.arange(side)] * d, indexing="ij")
        corner = self.corners[level]
        tgt = np.zeros((side,) * d, dtype=int)
        for ax in range(d):
            comp = 2 * grids[ax] + corner[..., ax]
            tgt = tgt * (2 * side) + comp
        return tgt.reshape(-1)


# ---------------------------------------------------------------------------
# Operator kernels (array level)
# ---------------------------------------------------------------------------

def _synthesize_coeffs(grid, coeffs, value_shape):
    return haar_synthesize(np.zeros(value_shape), coeffs, grid.d, grid.L)


def _sig_first(arr, d):
    """View with the signature axis moved to the front."""
    return np.moveaxis(arr, d, 0)


def _paraproduct_values(B: MatrixSymbol, vals):
    """pi_B f = sum_{I,eps} B_I^eps (m_I f) h_I^eps."""
    grid = B.grid
    d = grid.d
    means = mean_pyramid(vals, d, grid.L)
    out = []
    for k in range(grid.L):
        m = means[k][..., None, :, :] if vals.ndim == d + 2 else means[k][..., None, :]
        out.append(_mv(B.coeffs[k], m))
    return _synthesize_coeffs(grid, out, vals.shape[d:])


def _adjoint_paraproduct_values(B: MatrixSymbol, vals):
    """sum_{I,eps} B_I^eps f_I^eps chi_I / |I| (adjoint of pi with transposed
    coefficients; with real symbols this is (pi_{B^*})^*)."""
    grid = B.grid
    d, L = grid.d, grid.L
    _, fc, _ = haar_analyze(vals, d, L)
    acc = None
    for k in range(L):
        t = _mv(B.coeffs[k], fc[k]).sum(axis=d) * (2.0 ** (k * d))
        acc = t if acc is None else refine(acc, d) + t
    return refine(acc, d)


def _haar_multiplier_values(A: MatrixSequence, vals):
    """T_A f: coefficientwise f_I^eps -> A_I^eps f_I^eps; coarse mean dropped."""
    grid = A.grid
    _, fc, _ = haar_analyze(vals, grid.d, grid.L)
    out = [_mv(A.levels[k], fc[k]) for k in range(grid.L)]
    return _synthesize_coeffs(grid, out, vals.shape[grid.d:])


def _means_multiplier_values(B: MatrixSymbol, vals):
    """Haar multiplier whose coefficient matrices are the cube means m_I(B)."""
    grid = B.grid
    d = grid.d
    _, fc, _ = haar_analyze(vals, d, grid.L)
    out = []
    for k in range(grid.L):
        m = B.means[k][..., None, :, :]
        out.append(_mv(np.broadcast_to(m, fc[k].shape[:d + 1] + (B.n, B.n)), fc[k]))
    return _synthesize_coeffs(grid, out, vals.shape[d:])


def _shift_values(sigma: ShiftMap, vals):
    """Q_sigma f = sum f_I^eps h_{sigma(I)}^{sigma(eps)}; coefficients pushed
    below the leaf level are dropped (finite-tree truncation)."""
    grid = sigma.grid
    d, L = grid.d, grid.L
    _, fc, _ = haar_analyze(vals, d, L)
    out = [np.zeros_like(c) for c in fc]
    nsig = (1 << d) - 1
    for k in range(L - 1):
        relabeled = np.zeros_like(fc[k])
        src = _sig_first(fc[k], d)
        dst = _sig_first(relabeled, d)
        for s in range(nsig):
            dst[sigma.sig_map[s]] += src[s]
        flat_src = relabeled.reshape((-1,) + relabeled.shape[d:])
        flat_out = out[k + 1].reshape((-1,) + out[k + 1].shape[d:])
        np.add.at(flat_out, sigma.flat_targets(k), flat_src)
        out[k + 1] = flat_out.reshape(out[k + 1].shape)
    return _synthesize_coeffs(grid, out, vals.shape[d:])


def _shift_transpose_values(sigma: ShiftMap, vals):
    """Adjoint of Q_sigma: (Q^T g)_I^eps = g_{sigma(I)}^{sigma(eps)} (gather)."""
    grid = sigma.grid
    d, L = grid.d, grid.L
    _, gc, _ = haar_analyze(vals, d, L)
    out = [np.zeros_like(c) for c in gc]
    nsig = (1 << d) - 1
    for k in range(L - 1):
        flat_next = gc[k + 1].reshape((-1,) + gc[k + 1].shape[d:])
        gathered = flat_next[sigma.flat_targets(k)].reshape(gc[k].shape)
        src = _sig_first(gathered, d)
        dst = _sig_first(out[k], d)
        for s in range(nsig):
            dst[s] += src[sigma.sig_map[s]]
    return _synthesize_coeffs(grid, out, vals.shape[d:])


def _signature_mixer_values(B: MatrixSymbol, vals, transpose=False):
    """sum_I sum_{eps != eps'} |I|^{-1/2} B_I^{eps'} f_I^eps h_I^{psi(eps',eps)}."""
    grid = B.grid
    d, L = grid.d, grid.L
    sigs = signatures(d)
    _, fc, _ = haar_analyze(vals, d, L)
    out = [np.zeros_like(c) for c in fc]
    pairs = []
    for sp, ep in enumerate(sigs):
        for s, e in enumerate(sigs):
            if sp == s:
                continue
            psi, sign = signature_product(ep, e)
            pairs.append((sp, s, sigs.index(psi), sign))
    for k in range(L):
        scale = 2.0 ** (k * d / 2.0)   # |I|^{-1/2}
        Bs = _sig_first(B.coeffs[k], d)
        fs = _sig_first(fc[k], d)
        os = _sig_first(out[k], d)
        for sp, s, spsi, sign in pairs:
            mat = Bs[sp].swapaxes(-1, -2) if transpose else Bs[sp]
            if transpose:
                # adjoint: dense transpose swaps the roles of eps and psi
                os[s] += sign * scale * _mv(mat, fs[spsi])
            else:
                os[spsi] += sign * scale * _mv(mat, fs[s])
    return _synthesize_coeffs(grid, out, vals.shape[d:])


def product_decomposition_values(B: MatrixSymbol, vals):
    """Exact finite-tree pointwise-product identity
    B g = pi_B g + (means multiplier) g + (adjoint paraproduct) g
          + (signature mixer) g + m(B) m(g) chi."""
    d = B.grid.d
    means = mean_pyramid(vals, d, B.grid.L)
    const = _mv(B.mean, means[0][(0,) * d])
    flat = np.broadcast_to(const, vals.shape)
    return (_paraproduct_values(B, vals) + _means_multiplier_values(B, vals)
            + _adjoint_paraproduct_values(B, vals) + _signature_mixer_values(B, vals)
            + flat)


def _commutator_values(B: MatrixSymbol, sigma: ShiftMap, vals, mode="direct"):
    if mode == "direct":
        qf = _shift_values(sigma, vals)
        return _mv(B.step.values, qf) - _shift_values(sigma, _mv(B.step.values, vals))
    if mode != "decomposed":
        raise ValueError("mode must be 'direct' or 'decomposed'")
    # case sum: triangular terms pi_B Q f and Q pi_B f, diagonal terms through
    # the cube means, the adjoint-paraproduct channel, and the signature-mixing
    # channel; this regroups the same-cube/shifted-cube case analysis exactly
    # on the finite tree (constant channels die under Q).
    qf = _shift_values(sigma, vals)
    out = _paraproduct_values(B, qf) - _shift_values(sigma, _paraproduct_values(B, vals))
    out += _means_multiplier_values(B, qf) - _shift_values(sigma, _means_multiplier_values(B, vals))
    out += _adjoint_paraproduct_values(B, qf) - _shift_values(sigma, _adjoint_paraproduct_values(B, vals))
    out += _signature_mixer_values(B, qf) - _shift_values(sigma, _signature_mixer_values(B, vals))
    return out


def _big_pi_values(A: MatrixSequence, W: MatrixWeight, p, vals, reducing):
    """Pi_A f = sum V_I A_I^eps m_I(W^{-1/p} f) h_I^eps."""
    grid = A.grid
    d = grid.d
    g = _mv(W.leaf_averages(grid, -1.0 / p), vals)
    means = mean_pyramid(g, d, grid.L)
    out = []
    for k in range(grid.L):
        m = means[k][..., None, :, :] if vals.ndim == d + 2 else means[k][..., None, :]
        VA = reducing["V"][k][..., None, :, :] @ A.levels[k]
        out.append(_mv(VA, m))
    return _synthesize_coeffs(grid, out, vals.shape[d:])


# ---------------------------------------------------------------------------
# Public operator API
# ---------------------------------------------------------------------------

@dataclass
class Operator:
    """A linear map on vector step functions with a batched array kernel and,
    when available, the kernel of its unweighted-L^2 adjoint."""

    grid: Grid
    n: int
    kernel: object
    kernel_T: object = None
    name: str = "operator"

    def __call__(self, f: StepFunction) -> StepFunction:
        if f.grid != self.grid:
            raise ShapeError("operator and argument live on different grids")
        if f.kind != "vector" or f.value_shape != (self.n,):
            raise ShapeError(f"expected vector values of dimension {self.n}")
        return StepFunction(self.grid, self.kernel(f.values), "vector")

    def apply_batched(self, vals):
        return self.kernel(vals)

    def apply_transpose(self, vals):
        if self.kernel_T is None:
            raise ShapeError(f"{self.name} has no adjoint kernel")
        return self.kernel_T(vals)


def paraproduct_op(B: MatrixSymbol):
    Bt = B.transpose()
    return Operator(B.grid, B.n,
                    lambda v: _paraproduct_values(B, v),
                    lambda v: _adjoint_paraproduct_values(Bt, v),
                    "paraproduct")


def adjoint_paraproduct_op(B: MatrixSymbol):
    Bt = B.transpose()
    return Operator(B.grid, B.n,
                    lambda v: _adjoint_paraproduct_values(B, v),
                    lambda v: _paraproduct_values(Bt, v),
                    "adjoint-paraproduct")


def haar_multiplier_op(A: MatrixSequence):
    At = A.transpose()
    return Operator(A.grid, A.n,
                    lambda v: _haar_multiplier_values(A, v),
                    lambda v: _haar_multiplier_values(At, v),
                    "haar-multiplier")


def shift_op(sigma: ShiftMap, n=2):
    return Operator(sigma.grid, n,
                    lambda v: _shift_values(sigma, v),
                    lambda v: _shift_transpose_values(sigma, v),
                    "haar-shift")


def multiplication_op(B: MatrixSymbol):
    vals = B.step.values
    valsT = _transpose(vals)
    return Operator(B.grid, B.n,
                    lambda v: _mv(vals, v),
                    lambda v: _mv(valsT, v),
                    "multiplication")


def commutator_op(B: MatrixSymbol, sigma: ShiftMap, mode="direct"):
    kernel = lambda v: _commutator_values(B, sigma, v, mode)

    valsT = _transpose(B.step.values)

    def kernel_T(v):
        qt = _shift_transpose_values(sigma, _mv(valsT, v))
        return qt - _mv(valsT, _shift_transpose_values(sigma, v))

    return Operator(B.grid, B.n, kernel, kernel_T, f"commutator-{mode}")


def big_pi_op(A: MatrixSequence, W: MatrixWeight, p, reducing=None):
    if reducing is None:
        reducing = reducing_pyramid(W, A.grid, p)
    return Operator(A.grid, A.n,
                    lambda v: _big_pi_values(A, W, p, v, reducing),
                    None, "embedding")


def composed_op(outer: Operator, inner: Operator, name=None):
    kT = None
    if outer.kernel_T is not None and inner.kernel_T is not None:
        kT = lambda v: inner.kernel_T(outer.kernel_T(v))
    return Operator(outer.grid, outer.n,
                    lambda v: outer.kernel(inner.kernel(v)), kT,
                    name or f"{outer.name}*{inner.name}")


def apply_paraproduct(B: MatrixSymbol, f: StepFunction) -> StepFunction:
    return paraproduct_op(B)(f)


def apply_adjoint_paraproduct(B: MatrixSymbol, f: StepFunction) -> StepFunction:
    return adjoint_paraproduct_op(B)(f)


def apply_haar_multiplier(A: MatrixSequence, f: StepFunction) -> StepFunction:
    return haar_multiplier_op(A)(f)


def apply_haar_shift(sigma: ShiftMap, f: StepFunction) -> StepFunction:
    return shift_op(sigma, f.value_shape[0])(f)


def apply_commutator(B: MatrixSymbol, sigma: ShiftMap, f: StepFunction, mode="direct") -> StepFunction:
    return commutator_op(B, sigma, mode)(f)


def apply_big_pi(A: MatrixSequence, W: MatrixWeight, p, f: StepFunction, reducing=None) -> StepFunction:
    return big_pi_op(A, W, p, reducing)(f)


def square_function(W: MatrixWeight, f: StepFunction):
    """Weighted dyadic square function at p=2.

    Returns (scalar step values S(x), aggregate) with
    S(x)^2 = sum_{I contains x, eps} |(m_I W)^{1/2} f_I^eps|^2 / |I| and
    aggregate = sum_{I,eps} |(m_I W)^{1/2} f_I^eps|^2.
    """
    grid = f.grid
    d, L = grid.d, grid.L
    _, fc, _ = haar_analyze(f.values, d, L)
    Vhalf = [linalg.sqrtm_spd(a) for a in W.average_pyramid(grid, 1.0)]
    acc = None
    aggregate = 0.0
    for k in range(L):
        term = _mv(Vhalf[k][..., None, :, :], fc[k])
        q = (term ** 2).sum(axis=(d, d + 1))
        aggregate += float(q.sum())
        q_over_measure = q * (2.0 ** (k * d))
        acc = q_over_measure if acc is None else refine(acc, d) + q_over_measure
    acc = refine(acc, d)
    return np.sqrt(acc), aggregate


# ---------------------------------------------------------------------------
# Dense matrices and weighted operator norms
# ---------------------------------------------------------------------------

DENSE_DIM_CAP = 4096


@dataclass
class NormReport:
    value: float
    kind: str                     # "exact" | "lower-bound"
    witness: np.ndarray = None
    details: dict = field(default_factory=dict)

    def to_json(self):
        out = {"value": self.value, "kind": self.kind, "details": self.details}
        if self.witness is not None:
            out["witness"] = np.asarray(self.witness).ravel().tolist()
        return json.dumps(out)


def dense_matrix(op: Operator, cap=DENSE_DIM_CAP):
    """Dense matrix of op in the leaf-value basis (leaf-major, component-minor)."""
    grid, n = op.grid, op.n
    dim = grid.n_leaves * n
    if dim > cap:
        raise ShapeError(f"dense dimension {dim} exceeds cap {cap}")
    basis = np.eye(dim).reshape(grid.leaf_shape + (n, dim))
    out = op.apply_batched(basis)
    return out.reshape(dim, dim)


def whitened_op(op: Operator, W: MatrixWeight):
    """x -> m_leaf(W)^{1/2} op(m_leaf(W)^{-1/2} x); on the uniform grid this is
    the leaf-basis matrix of the L^2(W) action (cell measures cancel).

    Both halves come from the same Gram block m_leaf(W), so the conjugation is
    exactly the weighted quadratic form's whitening."""
    gram = W.leaf_averages(op.grid, 1.0)
    half = linalg.powm_spd(gram, 0.5)
    half_inv = linalg.powm_spd(gram, -0.5)
    kernel = lambda v: _mv(half, op.kernel(_mv(half_inv, v)))
    kT = None
    if op.kernel_T is not None:
        kT = lambda v: _mv(half_inv, op.kernel_T(_mv(half, v)))
    return Operator(op.grid, op.n, kernel, kT, f"whitened-{op.name}")


def weighted_operator_norm(op: Operator, W: MatrixWeight, p=2.0, seed=0,
                           ascent_iters=200, restarts=3, cap=DENSE_DIM_CAP) -> NormReport:
    """Weighted operator norm of ``op`` on L^p(W).

    p = 2: the dense matrix of W^{1/2} op W^{-1/2} in the leaf basis is
    assembled and its largest singular value returned (exact).  Above the
    dense cap a matrix-free two-sided power iteration runs instead and the
    converged value is reported as a certified lower bound.
    p != 2: lower bound via normalized gradient ascent on the Rayleigh
    quotient of the leaf gauges, with the witness vector returned.
    """
    grid, n = op.grid, op.n
    dim = grid.n_leaves * n
    if p == 2.0:
        conj = whitened_op(op, W)
        if dim <= cap:
            mat = dense_matrix(conj, cap)
            return NormReport(float(linalg.spectral_norm(mat)), "exact", details={"dim": dim})
        if conj.kernel_T is None:
            raise ShapeError("matrix-free norm needs an adjoint kernel above the dense cap")
        shape = grid.leaf_shape + (n,)
        val, wit = linalg.matfree_spectral_norm(
            lambda x: conj.kernel(x.reshape(shape)).reshape(-1),
            lambda y: conj.kernel_T(y.reshape(shape)).reshape(-1),
            dim, seed=seed)
        return NormReport(float(val), "lower-bound", wit,
                          {"dim": dim, "method": "matrix-free power iteration"})
    return _ascent_lower_bound(op, W, p, seed, ascent_iters, restarts)


def _ascent_lower_bound(op, W, p, seed, iters, restarts):
    grid, n = op.grid, op.n
    M_in = W.leaf_averages(grid, 2.0 / p)
    meas = grid.leaf_measure
    rng = np.random.default_rng(seed)

    def norm_p(vals):
        q = np.einsum("...i,...ij,...j->...", vals, M_in, vals)
        return float((np.maximum(q, 0.0) ** (p / 2.0)).sum() * meas)

    def grad_norm_p(vals):
        q = np.einsum("...i,...ij,...j->...", vals, M_in, vals)
        w = np.maximum(q, 1e-300) ** (p / 2.0 - 1.0)
        return p * meas * w[..., None] * _mv(M_in, vals)

    if op.kernel_T is None:
        matT = dense_matrix(op).T
        shape = grid.leaf_shape + (n,)
        adjoint = lambda v: (matT @ v.reshape(-1)).reshape(shape)
    else:
        adjoint = op.kernel_T

    best_val, best_wit = 0.0, None
    for _ in range(restarts):
        f = rng.standard_normal(grid.leaf_shape + (n,))
        f /= np.abs(f).max()
        step = 0.5
        for _ in range(iters):
            Tf = op.kernel(f)
            A, Bv = norm_p(Tf), norm_p(f)
            if Bv <= 0:
                break
            ratio = (A / max(Bv, 1e-300)) ** (1.0 / p)
            if ratio > best_val:
                best_val, best_wit = ratio, f.copy()
            g = adjoint(grad_norm_p(Tf)) / max(A, 1e-300) - grad_norm_p(f) / max(Bv, 1e-300)
            gn = np.abs(g).max()
            if gn <= 0:
                break
            f_new = f + step * g / gn
            A2, B2 = norm_p(op.kernel(f_new)), norm_p(f_new)
            if B2 > 0 and A2 / B2 > A / Bv:
                f = f_new / np.abs(f_new).max()
                step = min(step * 1.25, 2.0)
            else:
                step *= 0.5
                if step < 1e-9:
                    break
    return NormReport(float(best_val), "lower-bound", best_wit,
                      {"p": p, "method": "rayleigh ascent"})


def unweighted_operator_norm(op: Operator, cap=DENSE_DIM_CAP) -> NormReport:
    """Largest singular value on unweighted L^2 (uniform leaf measures)."""
    return weighted_operator_norm(op, MatrixWeight.identity(op.n), 2.0, cap=cap)
