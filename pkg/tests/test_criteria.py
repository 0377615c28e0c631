import dataclasses

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from eigeninfer import (
    Criterion,
    CriterionUndefined,
    Embedding,
    RowContext,
    constant_weight,
    criterion_eval,
    derive_rng,
    etel_criterion,
    etel_dual,
    generate_latent_curve,
    gmm_criterion,
    gmm_weight_matrix,
    m_criterion,
    moment_sum,
    moment_values,
    rdpg_weight,
    sample_rdpg,
    spectral_embed,
    z_estimate,
)


def tiny_context(weight=None, radius=2.0):
    emb = Embedding(Xtilde=np.array([[1.0], [0.5]]), eigenvalues=np.array([1.25]))
    return RowContext(i=0, a_row=np.array([0.5, 0.25]), embedding=emb,
                      weight=weight or constant_weight(), theta_radius=radius)


def scenario_context(n=60, seed=17, weight=None, radius=1.0, row=7):
    truth = generate_latent_curve(n)
    A = sample_rdpg(truth, derive_rng(seed, 0))
    emb = spectral_embed(A, 1)
    return RowContext(i=row, a_row=A.A[row], embedding=emb,
                      weight=weight or rdpg_weight(), theta_radius=radius)


def moments_context(a_values, xt_values, radius=10.0):
    """Context whose moment vectors at x=0 are a_j * xt_j."""
    xt = np.asarray(xt_values, float).reshape(-1, 1)
    emb = Embedding(Xtilde=xt, eigenvalues=np.array([float(np.sum(xt**2))]))
    return RowContext(i=0, a_row=np.asarray(a_values, float), embedding=emb,
                      weight=constant_weight(), theta_radius=radius)


class TestMCriterion:
    def test_constant_weight_closed_form(self):
        ctx = scenario_context(weight=constant_weight())
        x = np.array([0.37])
        u = ctx.embedding.Xtilde[:, 0] * x[0]
        expected = np.sum(ctx.a_row * u - u**2 / 2)
        assert m_criterion(ctx, x) == pytest.approx(expected, rel=1e-12)

    def test_tiny_case_value(self):
        assert m_criterion(tiny_context(), np.array([0.5])) == pytest.approx(0.15625, abs=1e-15)

    def test_gradient_is_scaled_moment_sum(self):
        for w in (rdpg_weight(), constant_weight()):
            ctx = scenario_context(weight=w)
            x = np.array([0.42])
            h = 1e-6
            fd = (m_criterion(ctx, x + h) - m_criterion(ctx, x - h)) / (2 * h)
            expected = ctx.n * moment_sum(ctx, x)[0]
            assert fd == pytest.approx(expected, rel=1e-5)

    def test_quadrature_path_matches_closed_form_and_oracle(self):
        # strip the declared antiderivative to force the quadrature route
        w = rdpg_weight()
        w_quad = dataclasses.replace(w, antiderivative=None)
        ctx_cf = scenario_context(weight=w)
        ctx_q = scenario_context(weight=w_quad)
        x = np.array([0.42])
        v_cf = m_criterion(ctx_cf, x)
        v_q = m_criterion(ctx_q, x)
        assert v_q == pytest.approx(v_cf, abs=1e-9)
        oracle = 0.0
        for j in range(ctx_cf.n):
            s = ctx_cf.s_row[j]
            a = ctx_cf.a_row[j]
            u = ctx_cf.embedding.Xtilde[j, 0] * x[0]
            val, _ = quad(lambda t: (a - t) / (s * (1 - t)), 0.0, u,
                          epsabs=1e-13, epsrel=1e-13)
            oracle += val
        assert v_q == pytest.approx(oracle, abs=1e-9)

    def test_out_of_domain_is_undefined(self):
        ctx = tiny_context(weight=rdpg_weight())
        with pytest.raises(CriterionUndefined):
            m_criterion(ctx, np.array([1.5]))
        assert criterion_eval("M", ctx, np.array([1.5])) is None


class TestGmm:
    def test_weight_matrix_scalar_formula(self):
        ctx = scenario_context(n=40, seed=3)
        G = moment_values(ctx, ctx.embedding.row(ctx.i))
        expected = 1.0 / np.mean(G[:, 0] ** 2)
        assert gmm_weight_matrix(ctx)[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_tiny_case_cache_and_value(self):
        ctx = tiny_context()
        C = gmm_weight_matrix(ctx)
        assert C[0, 0] == pytest.approx(1 / 0.1328125, rel=1e-12)
        val = gmm_criterion(ctx, np.array([0.0]), C)
        assert val == pytest.approx(-7.52941176470588 * 0.3125**2, rel=1e-10)

    def test_zero_at_estimator(self):
        ctx = scenario_context()
        z = z_estimate(ctx)
        C = gmm_weight_matrix(ctx)
        assert abs(gmm_criterion(ctx, z.x, C)) < 1e-15

    def test_never_positive(self):
        ctx = scenario_context(n=60, seed=29)
        C = gmm_weight_matrix(ctx)
        rng = derive_rng(30, 0)
        for _ in range(50):
            x = np.array([rng.uniform(-0.9, 0.9)])
            assert gmm_criterion(ctx, x, C) <= 0.0

    def test_cache_positive_definite(self):
        rng = derive_rng(35, 0)
        Xt = 0.4 * rng.standard_normal((30, 2))
        emb = Embedding(Xtilde=Xt, eigenvalues=np.array([2.0, 1.0]))
        ctx = RowContext(i=0, a_row=rng.random(30), embedding=emb,
                         weight=constant_weight(), theta_radius=5.0)
        C = gmm_weight_matrix(ctx)
        assert np.linalg.eigvalsh(C).min() > 0

    def test_invariant_under_moment_rescaling(self):
        rng = derive_rng(36, 0)
        Xt = 0.4 * rng.standard_normal((30, 2))
        emb = Embedding(Xtilde=Xt, eigenvalues=np.array([2.0, 1.0]))
        ctx = RowContext(i=0, a_row=rng.random(30), embedding=emb,
                         weight=constant_weight(), theta_radius=5.0)
        x = np.array([0.2, -0.1])
        val = gmm_criterion(ctx, x, gmm_weight_matrix(ctx))
        # transform the moment vectors by an invertible M, consistently
        M = np.array([[2.0, 0.3], [-0.5, 1.4]])
        G0 = moment_values(ctx, ctx.embedding.row(0)) @ M.T
        Gx = moment_values(ctx, x) @ M.T
        C = np.linalg.inv(G0.T @ G0 / ctx.n)
        gbar = Gx.mean(axis=0)
        val_t = -0.5 * ctx.n * gbar @ C @ gbar
        assert val_t == pytest.approx(val, abs=1e-8)


class TestEtel:
    def test_uniform_at_estimator(self):
        ctx = scenario_context()
        z = z_estimate(ctx)
        sol = etel_dual(ctx, z.x)
        assert sol.converged
        np.testing.assert_allclose(sol.lam, 0.0, atol=1e-12)
        np.testing.assert_allclose(sol.probs, 1.0 / ctx.n, atol=1e-8)
        assert abs(sol.probs.sum() - 1.0) < 1e-12

    def test_symmetric_two_point(self):
        ctx = moments_context([0.7, -0.7], [1.0, 1.0])
        sol = etel_dual(ctx, np.array([0.0]))
        assert sol.converged
        assert sol.lam[0] == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(sol.probs, 0.5, atol=1e-8)

    def test_matches_grid_search_oracle(self):
        # moments (1, 2, -1) at x = 0
        ctx = moments_context([1.0, 2.0, -1.0], [1.0, 1.0, 1.0])
        sol = etel_dual(ctx, np.array([0.0]))
        assert sol.converged
        oracle = minimize_scalar(
            lambda lam: np.mean(np.exp(lam * np.array([1.0, 2.0, -1.0]))),
            bounds=(-20, 20), method="bounded",
            options={"xatol": 1e-12},
        )
        assert sol.lam[0] == pytest.approx(oracle.x, abs=1e-6)
        u = oracle.x * np.array([1.0, 2.0, -1.0])
        oracle_probs = np.exp(u) / np.exp(u).sum()
        np.testing.assert_allclose(sol.probs, oracle_probs, atol=1e-6)
        assert etel_criterion(ctx, np.array([0.0])) == pytest.approx(
            np.log(oracle_probs).sum(), abs=1e-6)

    def test_reweighted_moments_vanish(self):
        ctx = scenario_context(n=50, seed=19)
        x = z_estimate(ctx).x + 0.03
        sol = etel_dual(ctx, x)
        assert sol.converged
        G = moment_values(ctx, x)
        np.testing.assert_allclose((sol.probs[:, None] * G).sum(axis=0), 0.0, atol=1e-8)
        assert sol.probs.min() > 0
        assert abs(sol.probs.sum() - 1.0) < 1e-12

    def test_anchor_value_at_estimator(self):
        ctx = scenario_context(n=80, seed=21)
        z = z_estimate(ctx)
        assert etel_criterion(ctx, z.x) == pytest.approx(-ctx.n * np.log(ctx.n), abs=1e-6)

    def test_never_exceeds_uniform_entropy(self):
        ctx = scenario_context(n=40, seed=22)
        cap = -ctx.n * np.log(ctx.n)
        rng = derive_rng(37, 0)
        for _ in range(20):
            x = np.array([rng.uniform(0.05, 0.8)])
            val = criterion_eval("ETEL", ctx, x)
            if val is not None:
                assert val <= cap + 1e-9

    def test_hull_violation_reports_nonconvergence(self):
        ctx = moments_context([2.0, 3.0, 4.0], [1.0, 1.0, 1.0])
        sol = etel_dual(ctx, np.array([0.0]))
        assert not sol.converged
        with pytest.raises(CriterionUndefined):
            etel_criterion(ctx, np.array([0.0]))
        assert criterion_eval("ETEL", ctx, np.array([0.0])) is None


class TestCriterionEval:
    def test_gmm_at_estimator(self):
        ctx = scenario_context()
        z = z_estimate(ctx)
        assert criterion_eval("GMM", ctx, z.x) == pytest.approx(0.0, abs=1e-15)

    def test_etel_at_estimator(self):
        ctx = scenario_context()
        z = z_estimate(ctx)
        assert criterion_eval("ETEL", ctx, z.x) == pytest.approx(
            -ctx.n * np.log(ctx.n), abs=1e-6)

    def test_criterion_object_with_cache(self):
        ctx = scenario_context()
        crit = Criterion("GMM").for_row(ctx)
        assert crit.gmm_cache is not None
        z = z_estimate(ctx)
        assert criterion_eval(crit, ctx, z.x) == pytest.approx(0.0, abs=1e-15)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            Criterion("QUASI")

    @pytest.mark.parametrize("kind", ["M", "GMM", "ETEL"])
    def test_maximized_at_estimator(self, kind):
        ctx = scenario_context(n=50, seed=25)
        z = z_estimate(ctx)
        base = criterion_eval(kind, ctx, z.x)
        for delta in np.concatenate([np.geomspace(1e-4, 1e-1, 8),
                                     -np.geomspace(1e-4, 1e-1, 8)]):
            val = criterion_eval(kind, ctx, z.x + delta)
            assert val is None or val <= base + 1e-12
