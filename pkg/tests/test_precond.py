import numpy as np
import pytest

from implicitrk.precond import (
    PreconditionerKind,
    apply_preconditioner,
    build_preconditioner,
)
from implicitrk.sparsela import (
    FactorizationError,
    KroneckerStageOperator,
    KrylovSettings,
    SparseMatrix,
    Splitting,
    dirichlet_constrain,
    fgmres,
)
from implicitrk.tableaux import (
    ButcherTableau,
    alexander_dirk,
    ldu_factor,
    lobatto_iiic,
    radau_iia,
    wsodirk433,
)

ALL_KINDS = list(PreconditionerKind)


def spd_pair(m, seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((m, m))
    M = Q @ Q.T + m * np.eye(m)
    Q = rng.standard_normal((m, m))
    K = Q @ Q.T + 0.5 * np.eye(m)
    return SparseMatrix.from_dense(M), SparseMatrix.from_dense(K)


def dense_pc_matrix(pc):
    """Assembled surrogate system the preconditioner represents."""
    Md = pc.M.to_dense()
    m = pc.m
    s = pc.s
    out = np.zeros((s * m, s * m))
    for i in range(s):
        for j in range(s):
            blk = np.zeros((m, m))
            if pc.form is Splitting.IA:
                blk += pc.A_tilde_inv[i, j] * Md
                if i == j:
                    Kd = (pc.Ks[0] if len(pc.Ks) == 1 else pc.Ks[i]).to_dense()
                    blk += pc.dt * Kd
            else:
                if i == j:
                    blk += Md
                Kd = (pc.Ks[0] if len(pc.Ks) == 1 else pc.Ks[i]).to_dense()
                blk += pc.dt * pc.A_tilde[i, j] * Kd
            out[i * m : (i + 1) * m, j * m : (j + 1) * m] = blk
    return out


class TestSurrogates:
    def test_rana_ld_radau2(self):
        pc = build_preconditioner(
            PreconditionerKind.RANA_LD, radau_iia(2), *spd_pair(3, 0), 0.1
        )
        np.testing.assert_allclose(
            pc.A_tilde, [[5 / 12, 0.0], [3 / 4, 2 / 5]], atol=1e-12
        )

    def test_rana_du_is_d_times_u(self):
        tab = radau_iia(3)
        fac = ldu_factor(tab)
        pc = build_preconditioner(
            PreconditionerKind.RANA_DU, tab, *spd_pair(3, 1), 0.1
        )
        np.testing.assert_allclose(pc.A_tilde, np.diag(fac.D) @ fac.U, atol=1e-12)

    def test_block_diagonal_ia_coefficients(self):
        # diagonal blocks (12/5) M + dt K and 4 M + dt K
        M, K = spd_pair(4, 2)
        dt = 0.3
        pc = build_preconditioner(
            PreconditionerKind.BLOCK_DIAGONAL, radau_iia(2), M, K, dt, Splitting.IA
        )
        rng = np.random.default_rng(0)
        b = rng.standard_normal(4)
        x0 = pc.block_factors[0].solve(b)
        np.testing.assert_allclose(
            (12 / 5) * M.to_dense() @ x0 + dt * K.to_dense() @ x0, b, atol=1e-10
        )
        x1 = pc.block_factors[1].solve(b)
        np.testing.assert_allclose(
            4.0 * M.to_dense() @ x1 + dt * K.to_dense() @ x1, b, atol=1e-10
        )

    def test_single_stage_all_kinds_coincide(self):
        M, K = spd_pair(5, 3)
        rng = np.random.default_rng(1)
        r = rng.standard_normal(5)
        outs = []
        for kind in ALL_KINDS:
            for form in Splitting:
                pc = build_preconditioner(kind, radau_iia(1), M, K, 0.2, form)
                outs.append(pc.apply(r))
        for o in outs[1:]:
            np.testing.assert_allclose(o, outs[0], atol=1e-12)


class TestApply:
    @pytest.mark.parametrize("kind", ALL_KINDS, ids=lambda k: k.value)
    @pytest.mark.parametrize("form", list(Splitting), ids=lambda f: f.value)
    @pytest.mark.parametrize(
        "tab",
        [radau_iia(1), radau_iia(2), radau_iia(3), radau_iia(4),
         lobatto_iiic(2), lobatto_iiic(3)],
        ids=lambda t: t.name,
    )
    def test_matches_dense_inverse(self, kind, form, tab):
        m = 7
        M, K = spd_pair(m, tab.s)
        dt = 0.12
        pc = build_preconditioner(kind, tab, M, K, dt, form)
        dense = dense_pc_matrix(pc)
        rng = np.random.default_rng(tab.s + 17)
        r = rng.standard_normal(tab.s * m)
        x = apply_preconditioner(pc, r)
        ref = np.linalg.solve(dense, r)
        np.testing.assert_allclose(x, ref, atol=1e-10 * max(1.0, np.linalg.norm(ref)))

    def test_block_diagonal_keeps_zero_blocks_zero(self):
        M, K = spd_pair(4, 9)
        pc = build_preconditioner(
            PreconditionerKind.BLOCK_DIAGONAL, radau_iia(2), M, K, 0.1, Splitting.IA
        )
        r = np.zeros(8)
        r[:4] = np.random.default_rng(2).standard_normal(4)
        x = pc.apply(r)
        np.testing.assert_array_equal(x[4:], 0.0)

    def test_rana_ld_small_system_vs_dense(self):
        # 2-stage, m=3 toy system against the dense inverse of the assembly
        M, K = spd_pair(3, 12)
        pc = build_preconditioner(
            PreconditionerKind.RANA_LD, radau_iia(2), M, K, 0.25, Splitting.IA
        )
        rng = np.random.default_rng(5)
        r = rng.standard_normal(6)
        np.testing.assert_allclose(
            pc.apply(r), np.linalg.solve(dense_pc_matrix(pc), r), atol=1e-10
        )

    def test_per_stage_jacobian_blocks(self):
        m = 5
        M, _ = spd_pair(m, 20)
        Ks = [spd_pair(m, 30 + i)[1] for i in range(3)]
        tab = radau_iia(3)
        for form in Splitting:
            pc = build_preconditioner(
                PreconditionerKind.RANA_LD, tab, M, Ks, 0.1, form
            )
            dense = dense_pc_matrix(pc)
            r = np.random.default_rng(7).standard_normal(3 * m)
            np.testing.assert_allclose(
                pc.apply(r), np.linalg.solve(dense, r), atol=1e-10
            )

    def test_dimension_error(self):
        M, K = spd_pair(3, 40)
        pc = build_preconditioner(PreconditionerKind.RANA_LD, radau_iia(2), M, K, 0.1)
        with pytest.raises(ValueError):
            pc.apply(np.ones(5))


class TestExactness:
    def test_lower_triangular_tableau_block_lower_is_exact(self):
        # with A lower triangular the AI-form surrogate equals A, so
        # preconditioned FGMRES converges in one iteration
        tab = alexander_dirk()
        m = 9
        M, K = spd_pair(m, 50)
        dt = 0.07
        op = KroneckerStageOperator(np.eye(tab.s), tab.A, M, [K], dt)
        pc = build_preconditioner(
            PreconditionerKind.BLOCK_LOWER, tab, M, K, dt, Splitting.AI
        )
        b = np.random.default_rng(3).standard_normal(tab.s * m)
        res = fgmres(op, b, pc, KrylovSettings(rtol=1e-8))
        assert res.iterations == 1

    def test_rana_ld_exact_for_lower_triangular(self):
        tab = wsodirk433()
        m = 6
        M, K = spd_pair(m, 60)
        dt = 0.05
        op = KroneckerStageOperator(np.eye(tab.s), tab.A, M, [K], dt)
        pc = build_preconditioner(
            PreconditionerKind.RANA_LD, tab, M, K, dt, Splitting.AI
        )
        b = np.random.default_rng(4).standard_normal(tab.s * m)
        res = fgmres(op, b, pc, KrylovSettings(rtol=1e-8))
        assert res.iterations == 1


class TestPcSides:
    def test_upper_kinds_work_under_left_preconditioning(self):
        # lower kinds pair naturally with left preconditioning, upper kinds
        # with right; both sides must converge with either family
        m = 8
        M, K = spd_pair(m, 100)
        tab = radau_iia(3)
        dt = 0.1
        op = KroneckerStageOperator(
            np.linalg.inv(tab.A), np.eye(tab.s), M, [K], dt
        )
        b = np.random.default_rng(7).standard_normal(tab.s * m)
        for kind in (PreconditionerKind.BLOCK_UPPER, PreconditionerKind.RANA_DU,
                     PreconditionerKind.BLOCK_LOWER, PreconditionerKind.RANA_LD):
            pc = build_preconditioner(kind, tab, M, K, dt, Splitting.IA)
            for right in (True, False):
                res = fgmres(
                    op, b, pc,
                    KrylovSettings(rtol=1e-10, right_pc=right, maxit=200),
                )
                err = np.linalg.norm(op.apply(res.x) - b)
                assert err <= 1e-8 * np.linalg.norm(b), f"{kind} right={right}"


class TestValidation:
    def test_rana_needs_nonsingular_leading_minors(self):
        tab = ButcherTableau([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [1.0, 1.0], 1, 1, "swap")
        M, K = spd_pair(3, 70)
        with pytest.raises(Exception):
            build_preconditioner(PreconditionerKind.RANA_LD, tab, M, K, 0.1, Splitting.AI)

    def test_ia_needs_invertible_tableau(self):
        tab = ButcherTableau([[0.0]], [1.0], [0.0], 1, 0, "explicit-euler")
        M, K = spd_pair(3, 71)
        with pytest.raises(FactorizationError):
            build_preconditioner(
                PreconditionerKind.BLOCK_LOWER, tab, M, K, 0.1, Splitting.IA
            )

    def test_singular_diagonal_surrogate(self):
        tab = ButcherTableau([[0.0]], [1.0], [0.0], 1, 0, "explicit-euler")
        M, K = spd_pair(3, 72)
        with pytest.raises(FactorizationError):
            build_preconditioner(
                PreconditionerKind.BLOCK_DIAGONAL, tab, M, K, 0.1, Splitting.IA
            )


class TestConstrained:
    def test_matches_dense_constrained_inverse(self):
        m = 6
        M, K = spd_pair(m, 80)
        dofs = np.array([0, 5])
        tab = radau_iia(2)
        dt = 0.2
        for form in Splitting:
            for kind in (PreconditionerKind.RANA_LD, PreconditionerKind.BLOCK_DIAGONAL,
                         PreconditionerKind.BLOCK_UPPER):
                pc = build_preconditioner(kind, tab, M, K, dt, form, dofs)
                # dense surrogate with the same row/column treatment
                Mc = dirichlet_constrain(M, dofs, 0.0).to_dense()
                Kc = dirichlet_constrain(K, dofs, 0.0).to_dense()
                dense = np.zeros((2 * m, 2 * m))
                for i in range(2):
                    for j in range(2):
                        blk = np.zeros((m, m))
                        if form is Splitting.IA:
                            blk += pc.A_tilde_inv[i, j] * Mc
                            if i == j:
                                blk += dt * Kc
                        else:
                            if i == j:
                                blk += Mc
                            blk += dt * pc.A_tilde[i, j] * Kc
                        if i == j:
                            blk[dofs, dofs] = 1.0
                        dense[i * m : (i + 1) * m, j * m : (j + 1) * m] = blk
                r = np.random.default_rng(11).standard_normal(2 * m)
                np.testing.assert_allclose(
                    pc.apply(r), np.linalg.solve(dense, r), atol=1e-10,
                    err_msg=f"{kind} {form}",
                )

    def test_identity_on_constrained_entries(self):
        m = 5
        M, K = spd_pair(m, 90)
        dofs = np.array([2])
        pc = build_preconditioner(
            PreconditionerKind.RANA_LD, radau_iia(3), M, K, 0.1, Splitting.IA, dofs
        )
        r = np.random.default_rng(13).standard_normal(3 * m)
        x = pc.apply(r)
        for i in range(3):
            assert x[i * m + 2] == pytest.approx(r[i * m + 2], abs=1e-12)
