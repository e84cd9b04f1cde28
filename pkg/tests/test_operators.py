"""Operator tests: paraproducts, multipliers, shifts, commutators, norms.

The dense-matrix adjoint oracle features throughout: each operator's adjoint
kernel must match the transpose of its dense leaf-basis matrix exactly.
"""

import numpy as np
import pytest

from haarweight.dyadic import Grid, StepFunction, haar_analyze, haar_transform
from haarweight.errors import ShapeError, ShiftMapError
from haarweight.operators import (
    MatrixSequence, MatrixSymbol, NormReport, Operator, ShiftMap,
    adjoint_paraproduct_op, apply_adjoint_paraproduct, apply_big_pi,
    apply_commutator, apply_haar_multiplier, apply_haar_shift,
    apply_paraproduct, big_pi_op, commutator_op, dense_matrix,
    haar_multiplier_op, multiplication_op, paraproduct_op,
    product_decomposition_values, shift_op, square_function,
    weighted_operator_norm, whitened_op,
)
from haarweight.weights import MatrixWeight, lp_norm


def random_symbol(grid, rng, scale=1.0):
    return MatrixSymbol.from_values(grid, rng.standard_normal(grid.leaf_shape + (2, 2)) * scale)


def random_vector(grid, rng):
    return StepFunction(grid, rng.standard_normal(grid.leaf_shape + (2,)))


class TestParaproduct:
    def test_constant_symbol_annihilates(self):
        g = Grid(1, 4)
        B = MatrixSymbol.from_values(g, np.broadcast_to(np.diag([2.0, 3.0]), (16, 2, 2)).copy())
        f = random_vector(g, np.random.default_rng(0))
        np.testing.assert_allclose(apply_paraproduct(B, f).values, 0.0, atol=1e-14)

    def test_single_term_oracle(self):
        # B = h^0_{[0,1)} Id, f = constant e: pi_B f = e h^0_{[0,1)}
        g = Grid(1, 3)
        h_root = np.repeat([1.0, -1.0], 4)          # h^0 on [0,1)
        B = MatrixSymbol.from_values(g, h_root[:, None, None] * np.eye(2))
        e = np.array([1.0, 2.0])
        f = StepFunction.constant(g, e)
        out = apply_paraproduct(B, f)
        np.testing.assert_allclose(out.values, h_root[:, None] * e, atol=1e-12)

    def test_adjoint_identity_dense(self):
        # matrix of the adjoint paraproduct equals the transpose of the
        # paraproduct with transposed coefficient matrices
        rng = np.random.default_rng(1)
        for d, L in [(1, 3), (2, 2)]:
            g = Grid(d, L)
            B = MatrixSymbol.from_values(g, rng.standard_normal(g.leaf_shape + (2, 2)))
            M1 = dense_matrix(adjoint_paraproduct_op(B))
            M2 = dense_matrix(paraproduct_op(B.transpose()))
            np.testing.assert_allclose(M1, M2.T, atol=1e-12)

    def test_pairing_identity_random(self):
        rng = np.random.default_rng(2)
        g = Grid(1, 4)
        B = random_symbol(g, rng)
        f, h = random_vector(g, rng), random_vector(g, rng)
        lhs = (apply_paraproduct(B, f).values * h.values).sum() * g.leaf_measure
        rhs = (f.values * apply_adjoint_paraproduct(B.transpose(), h).values).sum() * g.leaf_measure
        assert lhs == pytest.approx(rhs, rel=1e-11)


class TestAdjointParaproduct:
    def test_constant_symbol(self):
        g = Grid(1, 3)
        B = MatrixSymbol.from_values(g, np.broadcast_to(np.eye(2), (8, 2, 2)).copy())
        f = random_vector(g, np.random.default_rng(3))
        np.testing.assert_allclose(apply_adjoint_paraproduct(B, f).values, 0.0, atol=1e-14)

    def test_single_coefficient_evaluation(self):
        # For f = h^0_{[0,1)} e: output is B^0_{[0,1)} e on all of [0,1)
        rng = np.random.default_rng(4)
        g = Grid(1, 3)
        B = random_symbol(g, rng)
        e = np.array([1.0, -1.0])
        h_root = np.repeat([1.0, -1.0], 4)
        f = StepFunction(g, h_root[:, None] * e)
        out = apply_adjoint_paraproduct(B, f)
        want = B.coeffs[0][0, 0] @ e
        np.testing.assert_allclose(out.values, np.broadcast_to(want, (8, 2)), atol=1e-12)


class TestHaarMultiplier:
    def test_identity_sequence_subtracts_mean(self):
        g = Grid(2, 3)
        A = MatrixSequence.constant(g, np.eye(2))
        f = random_vector(g, np.random.default_rng(5))
        out = apply_haar_multiplier(A, f)
        mean = f.values.mean(axis=(0, 1))
        np.testing.assert_allclose(out.values, f.values - mean, atol=1e-12)

    def test_unweighted_norm_is_max_block_norm(self):
        rng = np.random.default_rng(6)
        g = Grid(1, 4)
        A = MatrixSequence.random(g, rng=7, haar_normalized=False)
        got = weighted_operator_norm(haar_multiplier_op(A), MatrixWeight.identity(), 2.0)
        want = max(np.linalg.svd(a.reshape(-1, 2, 2), compute_uv=False)[..., 0].max()
                   for a in A.levels)
        assert got.kind == "exact"
        assert got.value == pytest.approx(want, rel=1e-10)

    def test_single_block_norm(self):
        g = Grid(1, 3)
        A = MatrixSequence.zeros(g).with_entry(1, (0,), 0, np.diag([3.0, 0.0]))
        got = weighted_operator_norm(haar_multiplier_op(A), MatrixWeight.identity(), 2.0)
        assert got.value == pytest.approx(3.0, rel=1e-12)


class TestShift:
    def test_mean_only_input_gives_zero(self):
        g = Grid(1, 4)
        f = StepFunction.constant(g, np.array([1.0, 2.0]))
        out = apply_haar_shift(ShiftMap.left_child(g), f)
        np.testing.assert_allclose(out.values, 0.0, atol=1e-14)

    def test_single_coefficient_relabeling(self):
        g = Grid(1, 3)
        sigma = ShiftMap.left_child(g)
        mean, coeffs, _ = haar_analyze(np.zeros((8, 2)), 1, 3)
        coeffs[0][0, 0] = [1.0, 0.0]
        from haarweight.dyadic import haar_synthesize
        f = StepFunction(g, haar_synthesize(mean, coeffs, 1, 3))
        out = apply_haar_shift(sigma, f)
        _, oc, _ = haar_analyze(out.values, 1, 3)
        np.testing.assert_allclose(oc[1][0, 0], [1.0, 0.0], atol=1e-12)
        oc[1][0, 0] = 0.0
        assert max(np.abs(c).max() for c in oc) <= 1e-12

    def test_contraction_and_headroom_isometry(self):
        rng = np.random.default_rng(8)
        g = Grid(1, 5)
        sigma = ShiftMap.random_child(g, seed=11)
        f = random_vector(g, rng)
        out = apply_haar_shift(sigma, f)
        # mean channel dies, deepest coefficients truncate: contraction
        assert out.norm_l2() <= f.norm_l2() * (1 + 1e-12)
        # headroom: input supported above the deepest coefficient level,
        # mean-free, injective cube relabeling -> exact isometry
        mean, coeffs, _ = haar_analyze(rng.standard_normal((32, 2)), 1, 5)
        coeffs[4][:] = 0.0
        from haarweight.dyadic import haar_synthesize
        f2 = StepFunction(g, haar_synthesize(np.zeros(2), coeffs, 1, 5))
        out2 = apply_haar_shift(sigma, f2)
        assert out2.norm_l2() == pytest.approx(f2.norm_l2(), rel=1e-12)

    def test_invalid_corner_shape(self):
        g = Grid(1, 2)
        with pytest.raises(ShiftMapError):
            ShiftMap(g, [np.zeros((1, 1), dtype=int), np.zeros((2, 1), dtype=int), np.zeros((4, 1), dtype=int)])

    def test_signature_map_validation(self):
        g = Grid(2, 2)
        with pytest.raises(ShiftMapError):
            ShiftMap.left_child(g, sig_map=[0, 1, 3])


class TestCommutator:
    def test_scalar_constant_symbol_commutes(self):
        g = Grid(1, 4)
        B = MatrixSymbol.from_values(g, np.broadcast_to(2.5 * np.eye(2), (16, 2, 2)).copy())
        f = random_vector(g, np.random.default_rng(9))
        for mode in ("direct", "decomposed"):
            out = apply_commutator(B, ShiftMap.left_child(g), f, mode)
            np.testing.assert_allclose(out.values, 0.0, atol=1e-12)

    def test_product_decomposition_identity(self):
        rng = np.random.default_rng(10)
        for d, L in [(1, 4), (2, 3)]:
            g = Grid(d, L)
            B = MatrixSymbol.from_values(g, rng.standard_normal(g.leaf_shape + (2, 2)))
            vals = rng.standard_normal(g.leaf_shape + (2,))
            direct = np.einsum("...ij,...j->...i", B.step.values, vals)
            np.testing.assert_allclose(product_decomposition_values(B, vals), direct, atol=1e-12)

    @pytest.mark.parametrize("d,L", [(1, 5), (2, 3)])
    def test_modes_agree_scalar_symbol(self, d, L):
        rng = np.random.default_rng(12)
        g = Grid(d, L)
        b = rng.standard_normal(g.leaf_shape)
        B = MatrixSymbol.from_values(g, b[..., None, None] * np.eye(2))
        sigma = ShiftMap.random_child(g, seed=13)
        f = random_vector(g, rng)
        a = apply_commutator(B, sigma, f, "direct")
        bvals = apply_commutator(B, sigma, f, "decomposed")
        assert np.abs(a.values).max() > 1e-3   # generically nonzero
        np.testing.assert_allclose(a.values, bvals.values, atol=1e-10)

    def test_modes_agree_random_instances(self):
        rng = np.random.default_rng(14)
        worst = 0.0
        for trial in range(20):
            d = 1 if trial % 2 == 0 else 2
            L = int(rng.integers(2, 6 if d == 1 else 4))
            g = Grid(d, L)
            B = random_symbol(g, rng)
            sigma = ShiftMap.random_child(g, seed=trial)
            f = random_vector(g, rng)
            a = apply_commutator(B, sigma, f, "direct").values
            b = apply_commutator(B, sigma, f, "decomposed").values
            scale = max(1.0, np.abs(a).max())
            worst = max(worst, np.abs(a - b).max() / scale)
        assert worst <= 1e-10


class TestBigPi:
    def test_zero_sequence(self):
        g = Grid(1, 3)
        A = MatrixSequence.zeros(g)
        f = random_vector(g, np.random.default_rng(15))
        out = apply_big_pi(A, MatrixWeight.identity(), 2.0, f)
        np.testing.assert_allclose(out.values, 0.0)

    def test_identity_weight_collapses_to_paraproduct(self):
        rng = np.random.default_rng(16)
        g = Grid(1, 4)
        B = random_symbol(g, rng)
        A = MatrixSequence.from_symbol(B)
        f = random_vector(g, rng)
        a = apply_big_pi(A, MatrixWeight.identity(), 2.0, f)
        b = apply_paraproduct(B, f)
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_p2_necessity_identity_exact(self):
        # f = W^{1/2} chi_J e: (1/|J|) sum_{I in J} |V_I A_I^eps e|^2
        # <= ||Pi_A||^2 |V_J e|^2, with a leaf-constant weight so the
        # cancellation W^{-1/2} W^{1/2} = Id is exact
        rng = np.random.default_rng(17)
        g = Grid(1, 4)
        W = MatrixWeight.random_spd(23, cond=9.0)
        A = MatrixSequence.random(g, rng=24)
        op = big_pi_op(A, W, 2.0)
        norm = weighted_operator_norm(op, MatrixWeight.identity(), 2.0).value
        from haarweight.weights import reducing_pyramid
        red = reducing_pyramid(W, g, 2.0)
        e = np.array([1.0, 0.0])
        for level, off in [(1, (1,)), (2, (2,))]:
            Whalf = W.leaf_reps(g, 0.5)
            mask = np.zeros(g.leaf_shape)
            lo, hi = off[0] << (g.L - level), (off[0] + 1) << (g.L - level)
            mask[lo:hi] = 1.0
            lhs = 0.0
            for k in range(level, g.L):
                sl = slice(off[0] << (k - level), (off[0] + 1) << (k - level))
                VA = red["V"][k][sl, None] @ A.levels[k][sl]
                lhs += ((VA @ e) ** 2).sum() * 2.0 ** (level - k)
            VJ = red["V"][level][off]
            rhs = norm ** 2 * ((VJ @ e) ** 2).sum()
            assert lhs <= rhs * (1 + 1e-9)


class TestSquareFunction:
    def test_identity_weight_parseval(self):
        rng = np.random.default_rng(18)
        g = Grid(1, 5)
        vals = rng.standard_normal(g.leaf_shape + (2,))
        vals -= vals.mean(axis=0)
        f = StepFunction(g, vals)
        _, agg = square_function(MatrixWeight.identity(), f)
        assert agg == pytest.approx(f.norm_l2() ** 2, rel=1e-12)

    def test_single_coefficient(self):
        g = Grid(1, 3)
        W = MatrixWeight.random_spd(31)
        mean = np.zeros(2)
        _, coeffs, _ = haar_analyze(np.zeros((8, 2)), 1, 3)
        e = np.array([0.6, -0.8])
        coeffs[1][1, 0] = e
        from haarweight.dyadic import haar_synthesize
        f = StepFunction(g, haar_synthesize(mean, coeffs, 1, 3))
        _, agg = square_function(W, f)
        from haarweight.weights import cell_average
        from haarweight import linalg
        V = linalg.sqrtm_spd(cell_average(W, g.cube(1, (1,))))
        assert agg == pytest.approx(((V @ e) ** 2).sum(), rel=1e-10)


class TestWeightedNorms:
    def test_identity_minus_mean_norm_one(self):
        g = Grid(1, 4)
        A = MatrixSequence.constant(g, np.eye(2))
        rep = weighted_operator_norm(haar_multiplier_op(A), MatrixWeight.identity(), 2.0)
        assert rep.kind == "exact"
        assert rep.value == pytest.approx(1.0, rel=1e-12)

    def test_scalar_paraproduct_depth2(self):
        g = Grid(1, 2)
        vals = np.repeat([1.0, -1.0], 2)[:, None, None] * np.eye(2)
        B = MatrixSymbol.from_values(g, vals)   # b = h^0_{[0,1)} Id
        rep = weighted_operator_norm(paraproduct_op(B), MatrixWeight.identity(), 2.0)
        assert rep.value == pytest.approx(1.0, rel=1e-10)

    def test_whitened_matches_direct_quadrature(self):
        # ||T f||_{L^2(W)} / ||f||_{L^2(W)} <= assembled norm, with near-equality
        # at the top singular vector
        rng = np.random.default_rng(19)
        g = Grid(1, 4)
        W = MatrixWeight.diagonal_power([0.5, -0.5])
        B = random_symbol(g, rng)
        op = paraproduct_op(B)
        rep = weighted_operator_norm(op, W, 2.0)
        for _ in range(10):
            f = random_vector(g, rng)
            ratio = lp_norm(op(f), W, 2.0) / lp_norm(f, W, 2.0)
            assert ratio <= rep.value * (1 + 1e-9)

    def test_matrix_free_agrees_with_dense(self):
        rng = np.random.default_rng(20)
        g = Grid(1, 5)
        W = MatrixWeight.diagonal_power([0.3, -0.3])
        B = random_symbol(g, rng)
        sigma = ShiftMap.left_child(g)
        op = commutator_op(B, sigma, "direct")
        dense = weighted_operator_norm(op, W, 2.0)
        free = weighted_operator_norm(op, W, 2.0, cap=8)
        assert free.kind == "lower-bound"
        assert free.value == pytest.approx(dense.value, rel=1e-8)
        assert free.value <= dense.value * (1 + 1e-9)

    def test_p_not_2_lower_bound(self):
        rng = np.random.default_rng(21)
        g = Grid(1, 3)
        W = MatrixWeight.diagonal_power([0.4, -0.4])
        B = random_symbol(g, rng)
        op = paraproduct_op(B)
        rep = weighted_operator_norm(op, W, 3.0, ascent_iters=120, restarts=2)
        assert rep.kind == "lower-bound"
        f = StepFunction(g, rep.witness)
        achieved = lp_norm(op(f), W, 3.0) / lp_norm(f, W, 3.0)
        assert rep.value == pytest.approx(achieved, rel=1e-6)
        # it is a genuine lower bound for the p-norm ratio over random probes
        assert all(lp_norm(op(random_vector(g, rng)), W, 3.0)
                   / lp_norm(random_vector(g, rng), W, 3.0) <= rep.value * 50
                   for _ in range(3))

    def test_norm_report_json(self):
        g = Grid(1, 2)
        A = MatrixSequence.constant(g, np.eye(2))
        rep = weighted_operator_norm(haar_multiplier_op(A), MatrixWeight.identity(), 2.0)
        import json
        data = json.loads(rep.to_json())
        assert data["kind"] == "exact"


class TestAdjointKernels:
    def test_all_adjoints_match_dense_transpose(self):
        rng = np.random.default_rng(22)
        g = Grid(1, 4)
        B = random_symbol(g, rng)
        A = MatrixSequence.random(g, rng=33)
        sigma = ShiftMap.random_child(g, seed=44, sig_map=[0])
        ops = [paraproduct_op(B), adjoint_paraproduct_op(B), haar_multiplier_op(A),
               shift_op(sigma), multiplication_op(B), commutator_op(B, sigma, "direct")]
        for op in ops:
            M = dense_matrix(op)
            MT = dense_matrix(Operator(op.grid, op.n, op.kernel_T))
            np.testing.assert_allclose(MT, M.T, atol=1e-12, err_msg=op.name)

    def test_adjoints_d2_with_noninjective_sig(self):
        rng = np.random.default_rng(23)
        g = Grid(2, 2)
        sigma = ShiftMap.random_child(g, seed=5, sig_map=[2, 2, 0])
        op = shift_op(sigma)
        M = dense_matrix(op)
        MT = dense_matrix(Operator(op.grid, op.n, op.kernel_T))
        np.testing.assert_allclose(MT, M.T, atol=1e-12)


class TestSymbolInvariants:
    def test_symbol_parseval(self):
        rng = np.random.default_rng(24)
        for d, L in [(1, 5), (2, 3)]:
            g = Grid(d, L)
            B = MatrixSymbol.from_values(g, rng.standard_normal(g.leaf_shape + (2, 2)))
            assert B.hs_parseval_gap() <= 1e-12 * (np.abs(B.step.values) ** 2).sum()

    def test_grid_mismatch_raises(self):
        g1, g2 = Grid(1, 3), Grid(1, 4)
        B = MatrixSymbol.from_values(g1, np.broadcast_to(np.eye(2), (8, 2, 2)).copy())
        f = StepFunction(g2, np.zeros((16, 2)))
        with pytest.raises(ShapeError):
            apply_paraproduct(B, f)
