import numpy as np
import pytest

from _oracles import naive_forward_stepwise
from martingale_ci.oga import (
    default_iterations,
    hdbic,
    oga,
    oga_hdbic,
    oga_path_batch,
    truncate_selection,
)


class TestOga:
    def test_orthogonal_single_signal(self):
        rng = np.random.default_rng(0)
        q, _ = np.linalg.qr(rng.standard_normal((30, 8)))
        X = q
        Y = 3.0 * X[:, 4]
        sel = oga(X, Y, 1)
        assert sel.j_hat.tolist() == [4]
        assert np.isclose(sel.beta_oga[4], 3.0)
        assert sel.residual_norms[0] < 1e-12

    def test_matches_naive_forward_stepwise(self):
        rng = np.random.default_rng(1)
        for trial in range(25):
            n = int(rng.integers(12, 30))
            p = int(rng.integers(5, 15))
            m = int(min(rng.integers(2, 8), n // 2, p))
            X = rng.standard_normal((n, p))
            Y = rng.standard_normal(n)
            sel = oga(X, Y, m)
            order, beta = naive_forward_stepwise(X, Y, m)
            assert sel.j_hat.tolist() == order
            assert np.allclose(sel.beta_oga, beta, atol=1e-8)

    def test_full_rank_exact_interpolation(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((9, 9)) + 3 * np.eye(9)
        Y = rng.standard_normal(9)
        sel = oga(X, Y, 9)
        assert sel.m == 9
        assert sel.residual_norms[-1] < 1e-8 * np.linalg.norm(Y)

    def test_qr_invariants(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((40, 20))
        Y = rng.standard_normal(40)
        sel = oga(X, Y, 10)
        assert np.max(np.abs(sel.Q.T @ sel.Q - np.eye(10))) < 1e-8
        assert np.allclose(np.tril(sel.R, -1), 0.0)
        assert np.max(np.abs(sel.Q @ sel.R - X[:, sel.j_hat])) < 1e-8
        outside = np.setdiff1d(np.arange(20), sel.j_hat)
        assert np.all(sel.beta_oga[outside] == 0.0)
        assert np.all(np.diff(sel.residual_norms) <= 1e-10)

    def test_pythagoras(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((35, 12))
        Y = rng.standard_normal(35)
        sel = oga(X, Y, 8)
        lhs = np.linalg.norm(Y) ** 2
        rhs = np.sum(sel.beta_q**2) + sel.residual_norms[-1] ** 2
        assert abs(lhs - rhs) < 1e-8 * lhs

    def test_scaling_unselected_column_keeps_selection(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((30, 10))
        Y = rng.standard_normal(30)
        sel = oga(X, Y, 4)
        unsel = [j for j in range(10) if j not in sel.j_hat][0]
        X2 = X.copy()
        X2[:, unsel] *= 7.5
        sel2 = oga(X2, Y, 4)
        assert sel.j_hat.tolist() == sel2.j_hat.tolist()

    def test_zero_columns_never_selected(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((20, 6))
        X[:, 2] = 0.0
        Y = rng.standard_normal(20)
        sel = oga(X, Y, 5)
        assert 2 not in sel.j_hat

    def test_all_zero_candidates_early_stop(self):
        X = np.zeros((10, 4))
        X[:, 1] = np.arange(10, dtype=float)
        Y = 2.0 * X[:, 1]
        sel = oga(X, Y, 3)
        assert sel.m == 1
        assert sel.early_stopped
        assert sel.j_hat.tolist() == [1]

    def test_truncate_selection(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((30, 12))
        Y = rng.standard_normal(30)
        sel = oga(X, Y, 6)
        cut = truncate_selection(sel, 3, 12)
        assert cut.j_hat.tolist() == sel.j_hat[:3].tolist()
        direct = oga(X, Y, 3)
        assert np.allclose(cut.beta_oga, direct.beta_oga, atol=1e-10)


class TestDefaultIterations:
    def test_formula_values(self):
        # 2 * floor(sqrt(n / log p)) in natural logs.
        assert default_iterations(400, 500) == 16
        assert default_iterations(200, 250) == 12

    def test_caps(self):
        assert default_iterations(10, 300) <= 5
        assert default_iterations(1000, 3) <= 3
        assert default_iterations(16, 1) == 1


class TestHdbic:
    def test_constant_residuals_pick_one(self):
        rn = np.full(6, 2.0)
        assert hdbic(rn, 100, 50) == 1

    def test_zero_residual_wins(self):
        rn = np.array([3.0, 1.0, 0.0, 0.0])
        assert hdbic(rn, 100, 50) == 3

    def test_tradeoff(self):
        # A big SS drop at step 2 and nothing after picks exactly 2.
        rn = np.array([10.0, 1.0, 0.999, 0.998])
        assert hdbic(rn, 60, 40) == 2

    def test_oga_hdbic_pipeline(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((100, 30))
        Y = X[:, 3] * 2.0 + X[:, 11] * 1.5 + 0.3 * rng.standard_normal(100)
        sel = oga_hdbic(X, Y)
        assert set(sel.j_hat[:2].tolist()) == {3, 11}
        assert sel.m <= default_iterations(100, 30)


class TestBatchPath:
    def test_matches_single_path(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((40, 15))
        Yb = rng.standard_normal((40, 6))
        kn = 7
        sel, resid, m_act = oga_path_batch(X, Yb, kn)
        for b in range(6):
            single = oga(X, Yb[:, b], kn)
            assert m_act[b] == single.m
            assert sel[b, : single.m].tolist() == single.j_hat.tolist()
            assert np.allclose(resid[b, : single.m], single.residual_norms,
                               atol=1e-9)

    def test_handles_exact_fit_columns(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((20, 5))
        Yb = np.column_stack([X[:, 0] * 2.0, rng.standard_normal(20)])
        sel, resid, m_act = oga_path_batch(X, Yb, 4)
        assert sel[0, 0] == 0
        single = oga(X, Yb[:, 0], 4)
        assert m_act[0] == single.m


class TestSelectionScale:
    def test_selected_size_large_factor_design(self):
        # Monte-Carlo check at the main experiment scale: the chosen m
        # reliably covers the three strongest signals plus the factor
        # proxies (m >= 4), and the 0.4-signal is essentially always kept.
        from martingale_ci.dgp import DgpConfig, generate, make_beta

        beta = make_beta(500)
        ms, kept_04, kept_02 = [], 0, 0
        for seed in range(30):
            ds = generate(DgpConfig(setting="LAI", n=400, p=500, seed=seed),
                          beta)
            sel = oga_hdbic(ds.X, ds.Y)
            ms.append(sel.m)
            kept_04 += int(2 in sel.j_hat)
            kept_02 += sum(int(j in sel.j_hat) for j in (3, 4, 5))
        assert sum(m >= 4 for m in ms) >= 24  # >= 80% of seeds
        assert kept_04 >= 29
        # 0.2-signals selected at roughly the 40% per-variable rate.
        assert 0.2 <= kept_02 / 90 <= 0.7
