import numpy as np
import pytest
import scipy.linalg

from eigeninfer import (
    IndefiniteSpectrumError,
    align,
    derive_rng,
    generate_latent_curve,
    sample_rdpg,
    spectral_embed,
    sse,
    top_eigen,
)


def random_symmetric(n, rng):
    M = rng.standard_normal((n, n))
    return (M + M.T) / 2


class TestTopEigen:
    def test_diagonal_matrix(self):
        evals, evecs = top_eigen(np.diag([3.0, 1.0]), 1)
        assert evals[0] == pytest.approx(3.0, abs=1e-14)
        np.testing.assert_allclose(np.abs(evecs[:, 0]), [1.0, 0.0], atol=1e-14)

    def test_rank_one(self):
        x = np.array([1.0, 1.0])
        evals, evecs = top_eigen(np.outer(x, x), 1)
        assert evals[0] == pytest.approx(2.0, abs=1e-14)
        np.testing.assert_allclose(np.abs(evecs[:, 0]), [1 / np.sqrt(2)] * 2, atol=1e-12)

    def test_against_full_decomposition_oracle(self):
        rng = derive_rng(10, 0)
        A = random_symmetric(8, rng)
        evals, evecs = top_eigen(A, 3)
        norm_A = np.linalg.norm(A, 2)
        for k in range(3):
            residual = np.linalg.norm(A @ evecs[:, k] - evals[k] * evecs[:, k])
            assert residual <= 1e-8 * norm_A
        np.testing.assert_allclose(evecs.T @ evecs, np.eye(3), atol=1e-10)
        full = scipy.linalg.eigvalsh(A)
        top3 = full[np.argsort(-np.abs(full))][:3]
        np.testing.assert_allclose(evals, top3, atol=1e-10)
        assert (np.abs(np.diff(np.abs(evals))) <= 1e-12).sum() or \
            (np.abs(evals[0]) >= np.abs(evals[1]) >= np.abs(evals[2]))

    def test_rejects_nonsymmetric(self):
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="symmetric"):
            top_eigen(A, 1)

    def test_rejects_bad_rank(self):
        A = np.eye(3)
        for d in (0, 4):
            with pytest.raises(ValueError):
                top_eigen(A, d)


class TestSpectralEmbed:
    def test_identity_degenerate_tie(self):
        emb = spectral_embed(np.eye(2), 1)
        col = emb.Xtilde[:, 0]
        assert np.linalg.norm(col) == pytest.approx(1.0, abs=1e-12)
        # eigenvector of a tie is solver-dependent but axis-aligned here
        assert sorted(np.round(np.abs(col), 10)) in ([0.0, 1.0],)

    def test_noiseless_rank_one_recovery(self):
        truth = generate_latent_curve(50)
        emb = spectral_embed(truth.signal(), 1)
        x0 = truth.X0[:, 0]
        err = min(np.abs(emb.Xtilde[:, 0] - x0).max(),
                  np.abs(emb.Xtilde[:, 0] + x0).max())
        assert err < 1e-8

    def test_reconstruction_matches_retained_spectrum(self):
        rng = derive_rng(11, 0)
        A = random_symmetric(10, rng)
        emb = spectral_embed(A + 6 * np.eye(10), 3)
        evals, evecs = top_eigen(A + 6 * np.eye(10), 3)
        recon = (evecs * evals) @ evecs.T
        np.testing.assert_allclose(emb.Xtilde @ emb.Xtilde.T, recon, atol=1e-8)

    def test_indefinite_spectrum_error_names_eigenvalue(self):
        A = np.diag([-3.0, 1.0])
        with pytest.raises(IndefiniteSpectrumError, match="-3"):
            spectral_embed(A, 1)

    def test_embedding_error_shrinks_with_n(self):
        errs = []
        for n in (200, 800):
            truth = generate_latent_curve(n)
            A = sample_rdpg(truth, derive_rng(21, n))
            emb = spectral_embed(A, 1)
            W = align(emb.Xtilde, truth.X0).W
            errs.append(np.abs(emb.Xtilde @ W - truth.X0).max())
        assert errs[1] < errs[0]
        assert errs[1] < 0.2


class TestAlign:
    def test_already_aligned(self):
        X = derive_rng(1, 0).standard_normal((7, 2))
        np.testing.assert_allclose(align(X, X).W, np.eye(2), atol=1e-12)

    def test_sign_flip(self):
        X = derive_rng(2, 0).standard_normal((5, 1))
        np.testing.assert_allclose(align(-X, X).W, [[-1.0]], atol=1e-12)

    def test_recovers_rotation(self):
        rng = derive_rng(3, 0)
        X = rng.standard_normal((9, 2))
        theta = 0.7
        R = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        W = align(X @ R, X).W
        np.testing.assert_allclose(W, R.T, atol=1e-10)

    def test_result_is_orthogonal(self):
        rng = derive_rng(4, 0)
        for _ in range(20):
            W = align(rng.standard_normal((6, 2)), rng.standard_normal((6, 2))).W
            np.testing.assert_allclose(W.T @ W, np.eye(2), atol=1e-10)
            assert abs(abs(np.linalg.det(W)) - 1.0) < 1e-8

    def test_rank_deficient_cross_product(self):
        X = np.zeros((4, 2))
        with pytest.raises(ValueError, match="rank deficient"):
            align(X, np.ones((4, 2)))


def brute_force_min_sse(Xhat, Xref):
    # scan O(2): rotations and reflections over a fine angle grid,
    # then bisect around the best angle
    def value(theta, reflect):
        R = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        if reflect:
            R = R @ np.diag([1.0, -1.0])
        d = Xhat @ R - Xref
        return np.sum(d * d)

    best = np.inf
    for reflect in (False, True):
        grid = np.linspace(0, 2 * np.pi, 20001)
        vals = [value(t, reflect) for t in grid]
        k = int(np.argmin(vals))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
        for _ in range(60):
            m1 = lo + (hi - lo) / 3
            m2 = hi - (hi - lo) / 3
            if value(m1, reflect) < value(m2, reflect):
                hi = m2
            else:
                lo = m1
        best = min(best, value((lo + hi) / 2, reflect))
    return best


class TestSse:
    def test_zero_for_identical(self):
        X = derive_rng(5, 0).standard_normal((8, 2))
        assert sse(X, X) <= 1e-12 * np.sum(X * X)

    def test_zero_for_sign_flip(self):
        X = derive_rng(6, 0).standard_normal((8, 1))
        assert sse(-X, X) < 1e-20

    def test_matches_rotation_grid_oracle(self):
        rng = derive_rng(7, 0)
        Xhat = rng.standard_normal((6, 2))
        Xref = rng.standard_normal((6, 2))
        assert sse(Xhat, Xref) == pytest.approx(brute_force_min_sse(Xhat, Xref), abs=1e-6)

    def test_invariant_under_orthogonal_right_multiplication(self):
        rng = derive_rng(8, 0)
        Xhat = rng.standard_normal((10, 2))
        Xref = rng.standard_normal((10, 2))
        theta = 1.1
        Q = np.array([[np.cos(theta), -np.sin(theta)],
                      [np.sin(theta), np.cos(theta)]])
        assert sse(Xhat @ Q, Xref) == pytest.approx(sse(Xhat, Xref), abs=1e-9)
