"""Weighted maximal functions, the local N_Q quantity, weak-type checks, and
sparse operators.

All maximal functions are finite maxima over the dyadic chain of each leaf.
Within a leaf the weight enters through its exact first-power averages (for
the integrands) and L^2 representatives (for the pointwise conjugations), the
same discretization used everywhere else, so the proof-chain inequalities
verified here are exact statements about computed numbers.
"""

from __future__ import annotations

import itertools
import json

import numpy as np

from . import linalg
from .dyadic import Cube, Grid, mean_pyramid, refine
from .errors import SparsenessError
from .operators import Operator, _mv
from .weights import MatrixWeight


def _chain_averages(outer_levels, t_leaf, grid):
    """A_k(x) = (1/|I_k(x)|) sum_{leaf in I_k(x)} w |O_{I_k} t_leaf| for the
    level-k ancestor I_k(x) of each leaf; returns per-level leaf arrays."""
    d, L = grid.d, grid.L
    out = []
    for k in range(L + 1):
        O = outer_levels[k]
        for _ in range(L - k):
            O = refine(O, d)
        vals = np.linalg.norm(_mv(O, t_leaf), axis=-1)
        avg = mean_pyramid(vals, d, L)[k]
        for _ in range(L - k):
            avg = refine(avg, d)
        out.append(avg)
    return out


def maximal_mw_prime(W: MatrixWeight, f, p=2.0):
    """Christ/Goldberg-type auxiliary maximal function.

    p = 2: M'f(x) = sup_{I: x in I} (1/|I|) int_I |(m_I W^{-1})^{-1/2} W^{-1/2}(y) f(y)| dy.
    p != 2: the reducing-operator form sup_I m_I |V_I W^{-1/p} f|.
    Returns a scalar leaf array.
    """
    grid = f.grid
    if p == 2.0:
        outer = [linalg.powm_spd(a, -0.5) for a in W.average_pyramid(grid, -1.0)]
        t_leaf = _mv(W.leaf_reps(grid, -0.5), f.values)
    else:
        from .weights import reducing_pyramid
        red = reducing_pyramid(W, grid, p)
        outer = red["V"]
        t_leaf = _mv(W.leaf_reps(grid, -1.0 / p), f.values)
    levels = _chain_averages(outer, t_leaf, grid)
    return np.maximum.reduce(levels)


def half_power_maximal(W: MatrixWeight, f):
    """sup_I (1/|I|) int_I |(m_I(W^{-1/2}))^{-1/2} W^{-1/2}(y) f(y)| dy with the
    integrand's leaf value m_leaf(W^{-1/2}) f_leaf; the variant the sparse
    domination chain runs through."""
    grid = f.grid
    outer = [linalg.powm_spd(a, -0.5) for a in W.average_pyramid(grid, -0.5)]
    t_leaf = _mv(W.leaf_averages(grid, -0.5), f.values)
    levels = _chain_averages(outer, t_leaf, grid)
    return np.maximum.reduce(levels)


def maximal_mw(W: MatrixWeight, f):
    """M_W f(x) = sup_{I: x in I} (1/|I|) int_I |W^{1/2}(x) W^{-1/2}(y) f(y)| dy,
    with the x-dependence through the leaf value of W^{1/2} (d = 1)."""
    grid = f.grid
    if grid.d != 1:
        raise ValueError("the two-sided maximal function is implemented for d=1")
    L = grid.L
    N = 1 << L
    Mw = W.leaf_averages(grid, 1.0)
    t_leaf = _mv(W.leaf_reps(grid, -0.5), f.values)
    quad = np.einsum("lij,mi,mj->lm", Mw, t_leaf, t_leaf)
    P = np.sqrt(np.maximum(quad, 0.0))        # P[x-leaf, y-leaf] = |W^{1/2}(x)-rep t_y|
    best = np.full(N, -np.inf)
    for k in range(L + 1):
        avg = P.copy()
        for _ in range(L - k):
            nn = avg.shape[1]
            avg = avg.reshape(N, nn // 2, 2).mean(axis=2)
        anc = np.arange(N) >> (L - k)
        best = np.maximum(best, avg[np.arange(N), anc])
    return best


def local_nq(W: MatrixWeight, Q: Cube, grid: Grid = None):
    """N_Q(x) = sup_{R: x in R, R in Q} ||W^{1/2}(x) (m_R W^{-1})^{1/2}|| on Q's
    leaves, plus its normalized square integral (1/|Q|) int_Q N_Q^2."""
    grid = grid or Q.grid
    d, L = grid.d, grid.L
    reps = W.leaf_reps(grid, 0.5)
    halves = [linalg.sqrtm_spd(a) for a in W.average_pyramid(grid, -1.0)]
    sl = tuple(slice(m << (L - Q.level), (m + 1) << (L - Q.level)) for m in Q.offset)
    reps_q = reps[sl]
    best = None
    for k in range(Q.level, L + 1):
        Hk = halves[k][tuple(slice(m << (k - Q.level), (m + 1) << (k - Q.level))
                             for m in Q.offset)]
        for _ in range(L - k):
            Hk = refine(Hk, d)
        vals = linalg.opnorm(reps_q @ Hk)
        best = vals if best is None else np.maximum(best, vals)
    avg_sq = float((best ** 2).mean())
    return best, avg_sq


def weak_type_check(W: MatrixWeight, f, p=2.0):
    """Exhaustive weak (2,2) check for M' with the explicit constant n.

    Returns (max over attained thresholds of lam^2 |{M' > lam}| / ||f||_2^2,
    the threshold achieving it).  The trace identity behind the proof makes
    the bound lam^2 |{M' > lam}| <= n ||f||^2 exact in this discretization.
    """
    grid = f.grid
    m = maximal_mw_prime(W, f, p).ravel()
    norm2 = float((f.values ** 2).sum() * grid.leaf_measure)
    order = np.argsort(m)
    sorted_vals = m[order]
    N = m.size
    worst, worst_lam = 0.0, 0.0
    uniq = np.unique(sorted_vals)
    for lam in uniq:
        count = N - np.searchsorted(sorted_vals, lam, side="right")
        meas = count * grid.leaf_measure
        val = lam ** 2 * meas / norm2
        if val > worst:
            worst, worst_lam = float(val), float(lam)
    return worst, worst_lam


def mw_proof_certificate(W: MatrixWeight, f):
    """Constructive selection behind the M_W bound: for each leaf x pick the
    argmax cube R_x, its dyadic scale class j_x (via the M'-type average), and
    the maximal same-class cube S containing R_x; returns the per-leaf ratio
    M_W(x) / (2^{j_x + 1} N_S(x)), which the chain argument bounds by 8.
    """
    grid = f.grid
    L = grid.L
    N = 1 << L
    Mw = W.leaf_averages(grid, 1.0)
    t_leaf = _mv(W.leaf_reps(grid, -0.5), f.values)
    quad = np.einsum("lij,mi,mj->lm", Mw, t_leaf, t_leaf)
    P = np.sqrt(np.maximum(quad, 0.0))
    mw_avgs = []
    for k in range(L + 1):
        avg = P.copy()
        for _ in range(L - k):
            nn = avg.shape[1]
            avg = avg.reshape(N, nn // 2, 2).mean(axis=2)
        anc = np.arange(N) >> (L - k)
        mw_avgs.append(avg[np.arange(N), anc])
    mw_avgs = np.stack(mw_avgs)          # (L+1, N)
    k_star = mw_avgs.argmax(axis=0)
    mw_val = mw_avgs.max(axis=0)

    outer = [linalg.powm_spd(a, -0.5) for a in W.average_pyramid(grid, -1.0)]
    prime_avgs = np.stack(_chain_averages(outer, t_leaf, grid))  # (L+1, N)
    D = prime_avgs[k_star, np.arange(N)]
    j = np.floor(np.log2(np.maximum(D, 1e-300))).astype(int)

    # group R_x by class j, keep maximal cubes (d=1: intervals by level/offset)
    r_cubes = {}
    for x in range(N):
        lev = int(k_star[x])
        off = x >> (L - lev)
        r_cubes.setdefault(int(j[x]), set()).add((lev, off))
    maximal = {}
    for jj, cubes in r_cubes.items():
        keep = []
        for lev, off in sorted(cubes):
            contained = any(l2 < lev and (off >> (lev - l2)) == o2 for l2, o2 in cubes
                            if l2 != lev or o2 != off)
            if not contained:
                keep.append((lev, off))
        maximal[jj] = keep

    ratios = np.zeros(N)
    for x in range(N):
        lev, off = int(k_star[x]), x >> (L - int(k_star[x]))
        S = next((lv, o) for lv, o in maximal[int(j[x])]
                 if lv <= lev and (off >> (lev - lv)) == o)
        nq, _ = local_nq(W, Cube(grid, S[0], (S[1],)), grid)
        pos = x - (S[1] << (L - S[0]))
        ratios[x] = mw_val[x] / (2.0 ** (j[x] + 1) * nq[pos]) if nq[pos] > 0 else 0.0
    return ratios, mw_val


# ---------------------------------------------------------------------------
# Sparse families and operators
# ---------------------------------------------------------------------------

class SparseFamily:
    """A set of cubes whose in-family children occupy at most half of each
    member, with the exceptional sets E_I = I minus the in-family children."""

    def __init__(self, grid: Grid, cubes, check=True):
        self.grid = grid
        self.cubes = sorted(set((c.level, c.offset) for c in cubes))
        if check:
            self.certify()

    def __len__(self):
        return len(self.cubes)

    def cube_objects(self):
        return [Cube(self.grid, lev, off) for lev, off in self.cubes]

    def _leaf_mask(self, lev, off):
        L, d = self.grid.L, self.grid.d
        mask = np.zeros(self.grid.leaf_shape, dtype=bool)
        sl = tuple(slice(m << (L - lev), (m + 1) << (L - lev)) for m in off)
        mask[sl] = True
        return mask

    def family_children(self, lev, off):
        """Maximal family cubes strictly inside (lev, off)."""
        kids = [(l2, o2) for l2, o2 in self.cubes
                if l2 > lev and all((o >> (l2 - lev)) == m for o, m in zip(o2, off))]
        return [(l2, o2) for l2, o2 in kids
                if not any(l3 < l2 and all((o >> (l2 - l3)) == oo for o, oo in zip(o2, o3))
                           for l3, o3 in kids)]

    def exceptional_sets(self):
        """E_I per family cube as exact leaf masks."""
        out = {}
        for lev, off in self.cubes:
            mask = self._leaf_mask(lev, off)
            for l2, o2 in self.family_children(lev, off):
                mask &= ~self._leaf_mask(l2, o2)
            out[(lev, off)] = mask
        return out

    def certify(self):
        """Child-measure constraint, E_I disjointness and 2|E_I| >= |I|, all in
        exact integer leaf counts."""
        L, d = self.grid.L, self.grid.d
        exc = self.exceptional_sets()
        used = np.zeros(self.grid.leaf_shape, dtype=int)
        for (lev, off), mask in exc.items():
            cube_leaves = 1 << ((L - lev) * d)
            kids = self.family_children(lev, off)
            kid_leaves = sum(1 << ((L - l2) * d) for l2, _ in kids)
            if 2 * kid_leaves > cube_leaves:
                raise SparsenessError(
                    f"children of cube (level {lev}, offset {off}) cover more than half")
            if 2 * int(mask.sum()) < cube_leaves:
                raise SparsenessError(
                    f"exceptional set of (level {lev}, offset {off}) is too small")
            used += mask.astype(int)
        if used.max() > 1:
            raise SparsenessError("exceptional sets overlap")
        return True

    def to_json(self):
        return json.dumps([{"level": lev, "offset": list(off)} for lev, off in self.cubes])


def sparse_generate(grid: Grid, seed=0, density=0.5) -> SparseFamily:
    """Random downward-closed family meeting the half-measure constraint by
    construction: each selected cube passes membership to at most 2^{d-1} of
    its children."""
    if not 0.0 < density <= 0.5:
        raise ValueError("density must lie in (0, 1/2]")
    rng = np.random.default_rng(seed)
    d, L = grid.d, grid.L
    cubes = [(0, (0,) * d)]
    frontier = [(0, (0,) * d)]
    max_kids = 1 << (d - 1)
    while frontier:
        lev, off = frontier.pop()
        if lev >= L:
            continue
        n_sel = rng.binomial(max_kids, min(1.0, 2.0 * density))
        if n_sel == 0:
            continue
        corners = list(itertools.product((0, 1), repeat=d))
        rng.shuffle(corners)
        for corner in corners[:n_sel]:
            child = (lev + 1, tuple(2 * m + c for m, c in zip(off, corner)))
            cubes.append(child)
            frontier.append(child)
    return SparseFamily(grid, [Cube(grid, lev, off) for lev, off in cubes])


def sparse_op(G: SparseFamily, n=2) -> Operator:
    """S f = sum_{I in G} (m_I f) chi_I as a linear operator (self-adjoint on
    unweighted L^2)."""
    grid = G.grid
    d, L = grid.d, grid.L
    by_level = {}
    for lev, off in G.cubes:
        by_level.setdefault(lev, []).append(off)
    masks = {}
    for lev, offs in by_level.items():
        mask = np.zeros((1 << lev,) * d)
        for off in offs:
            mask[off] = 1.0
        masks[lev] = mask

    def kernel(vals):
        means = mean_pyramid(vals, d, L)
        out = np.zeros_like(vals)
        for lev, mask in masks.items():
            contrib = means[lev] * mask.reshape(mask.shape + (1,) * (vals.ndim - d))
            for _ in range(L - lev):
                contrib = refine(contrib, d)
            out = out + contrib
        return out

    return Operator(grid, n, kernel, kernel, "sparse")


def sparse_apply(G: SparseFamily, f):
    """Apply the sparse averaging operator to a step function."""
    return sparse_op(G, f.value_shape[0] if f.kind == "vector" else 1)(f)


def sparse_proof_chain(W: MatrixWeight, G: SparseFamily, f, g, ap_value):
    """The displayed quadratic-form domination chain for S at p=2.

    Returns the chain values [q0, q1, q2, q3, q4]:
      q0 = |sum_I |I| <m_I(W^{-1/2} f), m_I(W^{1/2} g)>|
      q1 = sum_I |I| |<a_I, b_I>|                       (q0 <= q1, constant 1)
      q2 = A2^{1/2} sum_I |I| alpha_I beta_I            (q1 <= q2)
      q3 = 2 A2^{1/2} sum_I |E_I| alpha_I beta_I        (q2 <= q3, constant 2)
      q4 = 2 A2^{1/2} int M~'_W f  M~'_{W^{-1}} g       (q3 <= q4, exact)
    with alpha, beta the half-power averaged quantities and M~' their chain
    suprema.  Each inequality holds termwise for the computed numbers.
    """
    grid = f.grid
    d, L = grid.d, grid.L
    t_f = _mv(W.leaf_averages(grid, -0.5), f.values)
    t_g = _mv(W.leaf_averages(grid, 0.5), g.values)
    a = mean_pyramid(t_f, d, L)
    b = mean_pyramid(t_g, d, L)
    o_f = [linalg.powm_spd(x, -0.5) for x in W.average_pyramid(grid, -0.5)]
    o_g = [linalg.powm_spd(x, -0.5) for x in W.average_pyramid(grid, 0.5)]
    alpha_lv = [mean_pyramid(np.linalg.norm(_mv(_refined(o_f[k], d, L - k), t_f), axis=-1), d, L)[k]
                for k in range(L + 1)]
    beta_lv = [mean_pyramid(np.linalg.norm(_mv(_refined(o_g[k], d, L - k), t_g), axis=-1), d, L)[k]
               for k in range(L + 1)]
    exc = G.exceptional_sets()
    q0_sum = 0.0
    q1 = q2 = q3 = 0.0
    for lev, off in G.cubes:
        meas = 2.0 ** (-lev * d)
        aI, bI = a[lev][off], b[lev][off]
        pair = float(np.dot(aI, bI))
        q0_sum += meas * pair
        q1 += meas * abs(pair)
        al, be = float(alpha_lv[lev][off]), float(beta_lv[lev][off])
        q2 += np.sqrt(ap_value) * meas * al * be
        emeas = float(exc[(lev, off)].sum()) * grid.leaf_measure
        q3 += 2.0 * np.sqrt(ap_value) * emeas * al * be
    mf = half_power_maximal(W, f)
    from .weights import power_of
    mg = half_power_maximal(power_of(W, -1.0), g)
    q4 = 2.0 * np.sqrt(ap_value) * float((mf * mg).sum()) * grid.leaf_measure
    return [abs(q0_sum), q1, q2, q3, q4]


def _refined(arr, d, steps):
    for _ in range(steps):
        arr = refine(arr, d)
    return arr
