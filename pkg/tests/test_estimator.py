import numpy as np
import pytest
from scipy.integrate import quad

from eigeninfer import (
    Embedding,
    RowContext,
    WeightDomainError,
    build_row_contexts,
    builtin_weight,
    completion_weight,
    constant_weight,
    derive_rng,
    generate_latent_curve,
    inverse_variance_weight,
    moment_jacobian,
    moment_outer_mean,
    moment_sum,
    noisy_rdpg_weight,
    rdpg_weight,
    sample_rdpg,
    sandwich_covariance,
    spectral_embed,
    z_estimate,
)


def tiny_context(weight=None, radius=2.0):
    emb = Embedding(Xtilde=np.array([[1.0], [0.5]]), eigenvalues=np.array([1.25]))
    return RowContext(
        i=0,
        a_row=np.array([0.5, 0.25]),
        embedding=emb,
        weight=weight or constant_weight(),
        theta_radius=radius,
    )


def scenario_context(n=60, seed=17, weight=None, radius=1.0, row=7):
    truth = generate_latent_curve(n)
    A = sample_rdpg(truth, derive_rng(seed, 0))
    emb = spectral_embed(A, 1)
    return RowContext(i=row, a_row=A.A[row], embedding=emb,
                      weight=weight or rdpg_weight(), theta_radius=radius)


ALL_WEIGHTS = [
    ("constant", constant_weight()),
    ("rdpg", rdpg_weight()),
    ("completion", completion_weight(0.6)),
    ("inverse_variance", inverse_variance_weight(lambda s: s * (1 - s))),
    ("noisy_rdpg", noisy_rdpg_weight(0.02)),
]


class TestWeights:
    def test_constant(self):
        w = constant_weight()
        assert w.evaluate(0.3, 0.7) == 1.0
        assert w.evaluate_dt(0.3, 0.7) == 0.0

    def test_rdpg_value(self):
        assert rdpg_weight().evaluate(0.5, 0.5) == pytest.approx(4.0, abs=1e-14)

    def test_completion_at_zero(self):
        assert completion_weight(0.6).evaluate(0.4, 0.0) == pytest.approx(0.6, abs=1e-14)

    def test_inverse_variance(self):
        w = inverse_variance_weight(lambda s: s * (1 - s))
        assert w.evaluate(0.5, 0.3) == pytest.approx(4.0, abs=1e-14)

    def test_noisy_rdpg_value(self):
        w = noisy_rdpg_weight(0.1)
        assert w.evaluate(0.5, 0.5) == pytest.approx(1 / (0.25 + 0.01), abs=1e-12)

    def test_builtin_factory_dispatch(self):
        assert builtin_weight("constant").name == "constant"
        assert builtin_weight("rdpg").name == "rdpg"
        assert builtin_weight("completion", p=0.6).name == "completion"
        assert builtin_weight("inverse_variance", var_fn=lambda s: s).name == "inverse_variance"
        with pytest.raises(ValueError):
            builtin_weight("nope")
        with pytest.raises(ValueError):
            builtin_weight("completion")

    @pytest.mark.parametrize("name,w", ALL_WEIGHTS)
    def test_dh_dt_matches_finite_differences(self, name, w):
        rng = derive_rng(23, 0)
        s = 0.05 + 0.9 * rng.random(50)
        t = -0.5 + 1.3 * rng.random(50)  # stays below 1
        eps = 1e-6
        fd = (w.h(s, t + eps) - w.h(s, t - eps)) / (2 * eps)
        an = w.evaluate_dt(s, t)
        np.testing.assert_allclose(an, fd, rtol=1e-5, atol=1e-8)

    @pytest.mark.parametrize("name,w", ALL_WEIGHTS)
    def test_antiderivative_matches_quadrature(self, name, w):
        rng = derive_rng(24, 0)
        for _ in range(8):
            s = 0.1 + 0.7 * rng.random()
            a = rng.random()
            u = -0.6 + 1.5 * rng.random()
            ref, _ = quad(lambda t: (a - t) * float(w.h(s, t)), 0.0, u,
                          epsabs=1e-12, epsrel=1e-12)
            assert float(w.antiderivative(s, a, u)) == pytest.approx(ref, abs=1e-9)

    def test_rdpg_domain_guard(self):
        w = rdpg_weight()
        with pytest.raises(WeightDomainError):
            w.evaluate(-0.1, 0.5)
        with pytest.raises(WeightDomainError):
            w.evaluate(0.5, 1.0)


class TestRowContext:
    def test_length_mismatch(self):
        emb = Embedding(Xtilde=np.ones((3, 1)), eigenvalues=np.array([3.0]))
        with pytest.raises(ValueError, match="length"):
            RowContext(i=0, a_row=np.ones(2), embedding=emb,
                       weight=constant_weight(), theta_radius=1.0)

    def test_warns_when_embedding_row_outside_ball(self):
        emb = Embedding(Xtilde=np.array([[2.0], [0.5]]), eigenvalues=np.array([4.0]))
        with pytest.warns(UserWarning, match="outside"):
            RowContext(i=0, a_row=np.zeros(2), embedding=emb,
                       weight=constant_weight(), theta_radius=1.0)

    def test_requires_positive_radius(self):
        emb = Embedding(Xtilde=np.ones((2, 1)), eigenvalues=np.array([2.0]))
        with pytest.raises(ValueError):
            RowContext(i=0, a_row=np.zeros(2), embedding=emb,
                       weight=constant_weight(), theta_radius=0.0)


class TestMomentSum:
    def test_tiny_case_root(self):
        ctx = tiny_context()
        assert moment_sum(ctx, np.array([0.5]))[0] == pytest.approx(0.0, abs=1e-15)

    def test_tiny_case_at_zero(self):
        ctx = tiny_context()
        assert moment_sum(ctx, np.array([0.0]))[0] == pytest.approx(0.3125, abs=1e-15)

    def test_zero_at_estimator(self):
        ctx = scenario_context()
        z = z_estimate(ctx)
        assert np.linalg.norm(moment_sum(ctx, z.x)) <= 1e-10

    def test_domain_violation_names_entry(self):
        ctx = tiny_context(weight=rdpg_weight())
        # x large enough that x * xt_j >= 1 breaks t < 1
        with pytest.raises(WeightDomainError):
            moment_sum(ctx, np.array([1.5]))


class TestMomentJacobian:
    def test_constant_weight_is_negative_gram(self):
        ctx = scenario_context(weight=constant_weight())
        Xt = ctx.embedding.Xtilde
        expected = -(Xt.T @ Xt) / ctx.n
        for x in (np.array([0.2]), np.array([0.7])):
            np.testing.assert_allclose(moment_jacobian(ctx, x), expected, atol=1e-14)

    def test_tiny_case_value(self):
        ctx = tiny_context()
        assert moment_jacobian(ctx, np.array([0.5]))[0, 0] == pytest.approx(-0.625, abs=1e-15)

    @pytest.mark.parametrize("weight", [rdpg_weight(), completion_weight(0.6)])
    def test_matches_finite_differences(self, weight):
        ctx = scenario_context(weight=weight)
        x = np.array([0.45])
        step = 1e-6 * (1 + np.linalg.norm(x))
        fd = (moment_sum(ctx, x + step) - moment_sum(ctx, x - step)) / (2 * step)
        np.testing.assert_allclose(moment_jacobian(ctx, x)[0, 0], fd[0], rtol=1e-6)

    def test_finite_differences_d2(self):
        rng = derive_rng(31, 0)
        Xt = 0.4 * rng.standard_normal((30, 2))
        emb = Embedding(Xtilde=Xt, eigenvalues=np.array([2.0, 1.0]))
        ctx = RowContext(i=0, a_row=rng.random(30), embedding=emb,
                         weight=completion_weight(0.7), theta_radius=3.0)
        x = np.array([0.3, -0.2])
        J = moment_jacobian(ctx, x)
        fd = np.empty((2, 2))
        h = 1e-6 * (1 + np.linalg.norm(x))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            fd[:, k] = (moment_sum(ctx, x + e) - moment_sum(ctx, x - e)) / (2 * h)
        np.testing.assert_allclose(J, fd, rtol=1e-6, atol=1e-10)


class TestZEstimate:
    def test_tiny_case(self):
        z = z_estimate(tiny_context())
        assert z.x[0] == pytest.approx(0.5, abs=1e-12)
        assert z.residual_norm <= 1e-10

    def test_constant_weight_recovers_embedding_rows(self):
        rng = derive_rng(32, 0)
        M = rng.standard_normal((30, 30))
        A = (M + M.T) / 2 + 8 * np.eye(30)
        emb = spectral_embed(A, 2)
        ctxs = build_row_contexts(A, emb, constant_weight(), theta_radius=10.0)
        for ctx in ctxs:
            z = z_estimate(ctx)
            np.testing.assert_allclose(z.x, emb.row(ctx.i), atol=1e-8)

    def test_rdpg_weight_matches_iterated_one_step_map(self):
        # oracle: iterate the weighted least-squares refit map, whose fixed
        # point solves the same weighted moment equation
        ctx = scenario_context(n=80, seed=5, row=11)
        Xt = ctx.embedding.Xtilde
        s = ctx.s_row
        x = ctx.embedding.row(ctx.i).copy()
        for _ in range(200):
            h = 1.0 / (s * (1.0 - Xt @ x))
            num = ((ctx.a_row * h)[:, None] * Xt).mean(axis=0)
            den = (h[:, None] * Xt * Xt).mean(axis=0)
            x_new = num / den
            if np.abs(x_new - x).max() < 1e-14:
                x = x_new
                break
            x = x_new
        z = z_estimate(ctx)
        np.testing.assert_allclose(z.x, x, atol=1e-8)

    def test_reported_residual(self):
        ctx = scenario_context(n=50, seed=9)
        z = z_estimate(ctx)
        assert z.residual_norm <= 1e-10
        assert np.linalg.norm(z.x) <= ctx.theta_radius


class TestSandwichCovariance:
    def test_scalar_formula_constant_weight(self):
        ctx = scenario_context(weight=constant_weight())
        z = z_estimate(ctx)
        sw = sandwich_covariance(ctx, z.x)
        xt = ctx.embedding.Xtilde[:, 0]
        resid = ctx.a_row - z.x[0] * xt
        expected = np.sum(resid**2 * xt**2) / np.sum(xt**2) ** 2
        assert sw.cov[0, 0] == pytest.approx(expected, rel=1e-10)

    def test_omega_positive_semidefinite(self):
        ctx = scenario_context(n=40, seed=13)
        z = z_estimate(ctx)
        sw = sandwich_covariance(ctx, z.x)
        assert np.linalg.eigvalsh(sw.Omega).min() >= -1e-14

    def test_orthogonal_equivariance(self):
        rng = derive_rng(33, 0)
        Xt = 0.4 * rng.standard_normal((40, 2))
        A = rng.random((40, 40))
        A = (A + A.T) / 2
        theta = 0.9
        Q = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        emb1 = Embedding(Xtilde=Xt, eigenvalues=np.array([2.0, 1.0]))
        emb2 = Embedding(Xtilde=Xt @ Q, eigenvalues=np.array([2.0, 1.0]))
        w = completion_weight(0.8)
        c1 = RowContext(i=3, a_row=A[3], embedding=emb1, weight=w, theta_radius=5.0)
        c2 = RowContext(i=3, a_row=A[3], embedding=emb2, weight=w, theta_radius=5.0)
        z1, z2 = z_estimate(c1), z_estimate(c2)
        np.testing.assert_allclose(z2.x, Q.T @ z1.x, atol=1e-8)
        s1 = sandwich_covariance(c1, z1.x)
        s2 = sandwich_covariance(c2, z2.x)
        np.testing.assert_allclose(s2.cov, Q.T @ s1.cov @ Q, atol=1e-8)

    def test_approaches_inverse_variance_limit(self):
        # with the variance-inverting weight, n * cov approaches the inverse
        # of mean_j x0_j^2 / (x0_i x0_j (1 - x0_i x0_j))
        errs = {}
        for n in (200, 800):
            truth = generate_latent_curve(n)
            A = sample_rdpg(truth, derive_rng(41, n))
            emb = spectral_embed(A, 1)
            w = inverse_variance_weight(lambda s: s * (1 - s))
            x0 = truth.X0[:, 0]
            rel = []
            for i in range(10, n, n // 8):
                ctx = RowContext(i=i, a_row=A.A[i], embedding=emb, weight=w,
                                 theta_radius=1.0)
                z = z_estimate(ctx)
                cov = sandwich_covariance(ctx, z.x).cov[0, 0]
                limit = 1.0 / np.mean(x0**2 / (x0[i] * x0 * (1 - x0[i] * x0)))
                rel.append(abs(n * cov - limit) / limit)
            errs[n] = np.median(rel)
        assert errs[800] < 0.15
        assert errs[800] < errs[200]


class TestMomentOuterMean:
    def test_matches_direct_sum(self):
        ctx = scenario_context(n=30, seed=3)
        x = np.array([0.4])
        Xt = ctx.embedding.Xtilde[:, 0]
        t = Xt * x[0]
        g = (ctx.a_row - t) / (ctx.s_row * (1 - t)) * Xt
        assert moment_outer_mean(ctx, x)[0, 0] == pytest.approx(np.mean(g**2), rel=1e-12)
