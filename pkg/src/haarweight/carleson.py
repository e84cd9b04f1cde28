"""Carleson embedding criteria, weighted BMO norms, stopping trees, and the
scalar sup-vs-Lp equivalence.

The two embedding criteria for a coefficient sequence A are
  (b)  sup_J (1/|J|) sum_{I in J, eps} ||V_I A_I^eps V_I^{-1}||^2
  (c)  the least C with (1/|J|) sum (A_I^eps)^T V_I^2 A_I^eps <= C V_J^2
       (dual form with V' and A V'^2 A^T on the small-exponent side),
both computed exactly on the finite tree by subtree reductions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import linalg
from .dyadic import Cube, Grid, mean_pyramid, refine, subtree_sums
from .errors import ThresholdError
from .operators import MatrixSequence, MatrixSymbol, _mv
from .weights import MatrixWeight, ap_from_reducing, reducing_pyramid


@dataclass
class CarlesonReport:
    value: float
    cube: Cube
    p: float
    kind: str
    per_level: list = field(default_factory=list)
    primal_value: float = None    # condition (c) forms, where computed
    dual_value: float = None

    def to_json(self):
        payload = {
            "value": self.value, "p": self.p, "kind": self.kind,
            "supremizing_cube": {"level": self.cube.level, "offset": list(self.cube.offset)},
        }
        if self.primal_value is not None:
            payload["primal_value"] = self.primal_value
        if self.dual_value is not None:
            payload["dual_value"] = self.dual_value
        return json.dumps(payload)


def _sup_over_cubes(per_level, grid):
    best, cube = -np.inf, None
    for k, arr in enumerate(per_level):
        mx = float(arr.max())
        if mx > best:
            best = mx
            idx = np.unravel_index(int(arr.argmax()), arr.shape)
            cube = Cube(grid, k, tuple(int(i) for i in idx))
    return best, cube


def carleson_b_sup(A: MatrixSequence, W: MatrixWeight, p, reducing=None) -> CarlesonReport:
    """Condition (b): exact supremum with its supremizing cube."""
    grid = A.grid
    if reducing is None:
        reducing = reducing_pyramid(W, grid, p)
    d = grid.d
    per_cube = []
    for k in range(grid.L):
        V = reducing["V"][k][..., None, :, :]
        Vinv = linalg.powm_spd(reducing["V"][k], -1.0)[..., None, :, :]
        lam = linalg.opnorm(V @ A.levels[k] @ Vinv) ** 2
        per_cube.append(lam.sum(axis=d))
    per_cube.append(np.zeros((1 << grid.L,) * d))
    sums = subtree_sums(per_cube, d)
    normalized = [s * (2.0 ** (k * d)) for k, s in enumerate(sums)]
    value, cube = _sup_over_cubes(normalized, grid)
    return CarlesonReport(value, cube, p, "condition-b", normalized)


def carleson_c_constant(A: MatrixSequence, W: MatrixWeight, p, reducing=None) -> CarlesonReport:
    """Condition (c): the least admissible constant, via the top eigenvalue of
    V_J^{-1} [(1/|J|) sum (A_I^eps)^T V_I^2 A_I^eps] V_J^{-1} (p >= 2), or the
    dual form with V' and transposes (p <= 2); at p = 2 the larger of both."""
    grid = A.grid
    if reducing is None:
        reducing = reducing_pyramid(W, grid, p)
    reports = []
    forms = []
    if p >= 2.0:
        forms.append(("primal", "V", False))
    if p <= 2.0:
        forms.append(("dual", "V_prime", True))
    d = grid.d
    for name, vkey, transpose in forms:
        per_cube = []
        for k in range(grid.L):
            Vsq = reducing[vkey][k] @ reducing[vkey][k]
            Ak = A.levels[k]
            if transpose:
                G = Ak @ Vsq[..., None, :, :] @ np.swapaxes(Ak, -1, -2)
            else:
                G = np.swapaxes(Ak, -1, -2) @ Vsq[..., None, :, :] @ Ak
            per_cube.append(G.sum(axis=d))
        per_cube.append(np.zeros((1 << grid.L,) * d + (A.n, A.n)))
        sums = subtree_sums(per_cube, d)
        per_level = []
        for k, s in enumerate(sums):
            Vinv = linalg.powm_spd(reducing[vkey][k], -1.0)
            conj = Vinv @ (s * (2.0 ** (k * d))) @ Vinv
            per_level.append(linalg.lambda_max(conj))
        value, cube = _sup_over_cubes(per_level, grid)
        reports.append((name, CarlesonReport(value, cube, p, f"condition-c-{name}", per_level)))
    by_name = dict(reports)
    best = max((rep for _, rep in reports), key=lambda r: r.value)
    if len(reports) == 2:
        best.per_level = [np.maximum(a, b) for a, b in
                          zip(reports[0][1].per_level, reports[1][1].per_level)]
        best.value = max(rep.value for _, rep in reports)
        best.kind = "condition-c-both"
    best.primal_value = by_name["primal"].value if "primal" in by_name else None
    best.dual_value = by_name["dual"].value if "dual" in by_name else None
    return best


# ---------------------------------------------------------------------------
# Weighted BMO
# ---------------------------------------------------------------------------

def _oscillation_sup(B: MatrixSymbol, weight_reps, V_inv, power, grid):
    """sup_I (1/|I|) sum_{leaves in I} w ||rep_leaf (B - m_I B) V_I^{-1}||^power."""
    d, L = grid.d, grid.L
    best, cube = -np.inf, None
    per_level = []
    vals = B.step.values
    for k in range(L + 1):
        centered = vals - refine_to_leaves(B.means[k], d, L - k)
        X = _mv(weight_reps, centered)
        X = X @ refine_to_leaves(V_inv[k], d, L - k)
        contrib = linalg.opnorm(X) ** power
        avg = mean_pyramid(contrib, d, L)[k]
        per_level.append(avg)
        mx = float(avg.max())
        if mx > best:
            best = mx
            idx = np.unravel_index(int(avg.argmax()), avg.shape)
            cube = Cube(grid, k, tuple(int(i) for i in idx))
    return best, cube, per_level


def refine_to_leaves(arr, d, steps):
    for _ in range(steps):
        arr = refine(arr, d)
    return arr


def bmo_norm(B: MatrixSymbol, W: MatrixWeight, p, variant="primal", reducing=None):
    """Weighted BMO norm of a matrix symbol over the grid's cubes.

    primal:   sup_I (1/|I|) int ||W^{1/p}(x)(B - m_I B) V_I^{-1}||^p
    dual:     sup_I (1/|I|) int ||W^{-1/p}(x)(B^T - m_I B^T) (V_I')^{-1}||^{p'}
    unweighted: sup_I (1/|I|) int ||B - m_I B||^2.
    Returns (value, supremizing cube).
    """
    grid = B.grid
    if variant == "unweighted":
        eye = np.broadcast_to(np.eye(B.n), grid.leaf_shape + (B.n, B.n))
        Vinv = [np.broadcast_to(np.eye(B.n), (1 << k,) * grid.d + (B.n, B.n))
                for k in range(grid.L + 1)]
        val, cube, _ = _oscillation_sup(B, eye, Vinv, 2.0, grid)
        return val, cube
    if reducing is None:
        reducing = reducing_pyramid(W, grid, p)
    pprime = p / (p - 1.0)
    if variant in ("primal", "dyadic"):
        reps = W.leaf_reps(grid, 1.0 / p)
        Vinv = [linalg.powm_spd(v, -1.0) for v in reducing["V"]]
        val, cube, _ = _oscillation_sup(B, reps, Vinv, p, grid)
        return val, cube
    if variant == "dual":
        reps = W.leaf_reps(grid, -1.0 / p)
        Vinv = [linalg.powm_spd(v, -1.0) for v in reducing["V_prime"]]
        val, cube, _ = _oscillation_sup(B.transpose(), reps, Vinv, pprime, grid)
        return val, cube
    raise ValueError(f"unknown BMO variant {variant!r}")


def mean_oscillation(B: MatrixSymbol, W: MatrixWeight, p, lo, hi, center=None):
    """(1/|Q|) int_Q ||W^{1/p}(x)(B(x) - m_Q B) V_Q^{-1}||^p for an arbitrary
    rational interval Q = [lo, hi) in d=1, with exact partial-leaf overlap
    weights.  ``center`` overrides the matrix subtracted from B (the
    infimum-style oscillation uses other centers)."""
    grid = B.grid
    if grid.d != 1:
        raise ValueError("arbitrary-cube oscillation implemented for d=1")
    lo, hi = Fraction(lo), Fraction(hi)
    nleaf = 1 << grid.L
    step = Fraction(1, nleaf)
    i0 = int(lo / step)
    i1 = int(-((-hi) // step))
    weights = []
    idxs = []
    for i in range(max(i0, 0), min(i1, nleaf)):
        a, b = max(lo, step * i), min(hi, step * (i + 1))
        if b > a:
            idxs.append(i)
            weights.append(float(b - a))
    weights = np.array(weights)
    total = float(hi - lo)
    vals = B.step.values[idxs]
    if center is None:
        center = (weights[:, None, None] * vals).sum(axis=0) / total
    avgW = W.average_over_interval(lo, hi, 1.0, grid=grid)
    VQ = linalg.sqrtm_spd(avgW) if p == 2.0 else None
    if VQ is None:
        raise ValueError("arbitrary-cube oscillation uses the p=2 closed form")
    VQinv = linalg.powm_spd(VQ, -1.0)
    reps = W.leaf_reps(grid, 0.5)[idxs]
    X = reps @ (vals - center) @ VQinv
    osc = (linalg.opnorm(X) ** 2 * weights).sum() / total
    return float(osc)


# ---------------------------------------------------------------------------
# Stopping trees
# ---------------------------------------------------------------------------

@dataclass
class StoppingTree:
    root: Cube
    p: float
    lambda1: float
    lambda2: float
    generations: list                                   # generations[j]: list of Cube
    generation_measures: list = field(default_factory=list)

    def to_ndjson(self, path):
        with open(path, "w") as fh:
            for j, gen in enumerate(self.generations):
                fh.write(json.dumps({
                    "generation": j,
                    "cubes": [{"level": c.level, "offset": list(c.offset)} for c in gen],
                    "measure": self.generation_measures[j],
                }) + "\n")


def stopping_constants(n, d, p, slack=0.05):
    """Runtime thresholds lambda1 = 4 C1, lambda2 = 4 C2' ||W||^{p'/p} with the
    dimensional constants traced through the decay proof:
      C1  = n^{p/2} * n^{max(p/2, 1)}   (gauge sandwich + norm-vs-column bounds)
      C2' = n^{p'/2} * n^{max(p'/2, 1)}
    inflated by ``slack`` to absorb the ellipsoid certification tolerance."""
    pp = p / (p - 1.0)
    C1 = n ** (p / 2.0) * n ** max(p / 2.0, 1.0)
    C2 = n ** (pp / 2.0) * n ** max(pp / 2.0, 1.0)
    return 4.0 * C1 * (1.0 + slack), 4.0 * C2 * (1.0 + slack)


def stopping_time_tree(W: MatrixWeight, p, root: Cube = None, lambda1=None,
                       lambda2=None, grid: Grid = None, reducing=None,
                       ap_value=None) -> StoppingTree:
    """Generations of maximal subcubes where the reducing operators deviate:
    J is a stopping child of its stopping ancestor I when
    ||V_J V_I^{-1}||^p > lambda1 or ||V_J^{-1} V_I||^{p'} > lambda2."""
    if grid is None:
        grid = root.grid
    if root is None:
        root = grid.root()
    if reducing is None:
        reducing = reducing_pyramid(W, grid, p)
    if lambda1 is None or lambda2 is None:
        if ap_value is None:
            ap_value = ap_from_reducing(reducing, p)
        l1, l2 = stopping_constants(W.n, grid.d, p)
        lambda1 = lambda1 if lambda1 is not None else l1
        lambda2 = lambda2 if lambda2 is not None else l2 * ap_value ** ((p / (p - 1.0)) / p)
    if lambda1 <= 1.0 or lambda2 <= 1.0:
        raise ThresholdError("stopping thresholds must exceed 1")
    d, L = grid.d, grid.L
    pp = p / (p - 1.0)
    n = W.n
    # ancestor bookkeeping per level: for each cube at the current level, the
    # flattened index (at its own level) of its stopping ancestor and that
    # ancestor's level and generation
    side0 = 1 << root.level
    anc_level = {root.offset: root.level}
    V = reducing["V"]
    Vinv = [linalg.powm_spd(v, -1.0) for v in V]
    gens = [[root]]
    # arrays over the subtree of root, level by level
    def subtree_slice(k):
        return tuple(slice(m << (k - root.level), (m + 1) << (k - root.level))
                     for m in root.offset)

    anc_ptr = np.zeros((1,) * d, dtype=int)        # index into stoppers list
    stoppers = [(root.level, root.offset)]
    gen_of = [0]
    for k in range(root.level + 1, L + 1):
        sl = subtree_slice(k)
        Vk = V[k][sl].reshape(-1, n, n)
        anc_ptr = refine(anc_ptr, d)
        flat_anc = anc_ptr.reshape(-1)
        anc_V = np.stack([V[lev][off] for lev, off in stoppers])
        anc_Vinv = np.stack([Vinv[lev][off] for lev, off in stoppers])
        Vk_inv = Vinv[k][sl].reshape(-1, n, n)
        t1 = linalg.opnorm(Vk @ anc_Vinv[flat_anc]) ** p
        t2 = linalg.opnorm(Vk_inv @ anc_V[flat_anc]) ** pp
        stop = (t1 > lambda1) | (t2 > lambda2)
        if stop.any():
            side = 1 << (k - root.level)
            new_gen_cubes = {}
            stop_grid = stop.reshape((side,) * d)
            idxs = np.argwhere(stop_grid)
            for idx in idxs:
                off = tuple(int(i) + (m << (k - root.level)) for i, m in zip(idx, root.offset))
                g_parent = gen_of[int(flat_anc[np.ravel_multi_index(tuple(idx), (side,) * d)])]
                cube = Cube(grid, k, off)
                new_gen_cubes.setdefault(g_parent + 1, []).append(cube)
                stoppers.append((k, off))
                gen_of.append(g_parent + 1)
                anc_ptr[tuple(idx)] = len(stoppers) - 1
            for gj, cubes in sorted(new_gen_cubes.items()):
                while len(gens) <= gj:
                    gens.append([])
                gens[gj].extend(cubes)
    measures = [float(sum(c.measure for c in gen)) for gen in gens]
    tree = StoppingTree(root, p, float(lambda1), float(lambda2), gens)
    tree.generation_measures = measures
    return tree


# ---------------------------------------------------------------------------
# Scalar NTV equivalence
# ---------------------------------------------------------------------------

def ntv_scalar_equivalence(a_levels, d, p):
    """Both sides of the scalar sup-vs-Lp comparison for a nonnegative sequence:
      sup_form = sup_J ((1/|J|) sum_{I in J} a_I^2)^{1/2}
      lp_form  = sup_J ((1/|J|) int_J (sum_{I in J} a_I^2 chi_I / |I|)^{p/2})^{1/p}
    a_levels: per-level scalar arrays for levels 0..L (leaves may carry values).
    """
    L = len(a_levels) - 1
    sq = [np.asarray(a, dtype=float) ** 2 for a in a_levels]
    sums = subtree_sums(sq, d)
    sup_form = max(float((s * 2.0 ** (k * d)).max()) for k, s in enumerate(sums))
    sup_form = np.sqrt(sup_form)
    # for each J: the integrand restricted to J depends on J only through the
    # truncation of the chain sum above J; build it per level
    lp_form = 0.0
    chain = None
    for k in range(L + 1):
        term = sq[k] * (2.0 ** (k * d))
        chain = term if k == 0 else refine(chain, d) + term
    # chain now holds, per leaf x, the sum over all I containing x of
    # a_I^2 chi_I / |I|; restricting to J drops the strict-ancestor part
    drop = np.zeros((1,) * d)
    for k in range(L + 1):
        if k > 0:
            # drop(J at level k) = sum over strict ancestors I of a_I^2 / |I|
            drop = refine(drop + sq[k - 1] * (2.0 ** ((k - 1) * d)), d)
        dropL = refine_to_leaves(drop, d, L - k)
        integrand = np.maximum(chain - dropL, 0.0) ** (p / 2.0)
        avg = mean_pyramid(integrand, d, L)[k]
        lp_form = max(lp_form, float(avg.max()) ** (1.0 / p))
    return sup_form, lp_form
