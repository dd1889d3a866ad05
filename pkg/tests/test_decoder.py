import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sparseiqa.decoder import (DecoderHyperparams, DecoderModel,
                               SaturatedUnitError, _objective_core, encode,
                               export_filter_grid, initial_parameters,
                               kl_sparsity, mean_activation, objective, train)


def small_model(n_hidden=7, n_in=10, seed=0, beta=5.0, lam=3e-3):
    rng = np.random.default_rng(seed)
    hp = DecoderHyperparams(n_hidden=n_hidden, beta=beta, weight_decay=lam,
                            max_iterations=50)
    r = 0.5
    return DecoderModel(
        w1=rng.uniform(-r, r, (n_hidden, n_in)),
        b1=rng.uniform(-0.1, 0.1, n_hidden),
        w2=rng.uniform(-r, r, (n_in, n_hidden)),
        b2=rng.uniform(-0.1, 0.1, n_in),
        hyperparams=hp,
    )


def finite_difference_gradient(theta, x, hp, h=1e-5):
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy()
        tp[i] += h
        tm = theta.copy()
        tm[i] -= h
        fp = _objective_core(tp, x, hp, False)[0]
        fm = _objective_core(tm, x, hp, False)[0]
        grad[i] = (fp - fm) / (2.0 * h)
    return grad


class TestEncode:
    def test_zero_weights_give_half(self):
        hp = DecoderHyperparams(n_hidden=5, max_iterations=10)
        model = DecoderModel(w1=np.zeros((5, 12)), b1=np.zeros(5),
                             w2=np.zeros((12, 5)), b2=np.zeros(12), hyperparams=hp)
        acts = encode(model, np.random.default_rng(0).standard_normal((12, 9)))
        np.testing.assert_array_equal(acts, np.full((5, 9), 0.5))

    def test_default_width_is_400(self):
        rng = np.random.default_rng(1)
        hp = DecoderHyperparams()
        model = DecoderModel(w1=rng.uniform(-0.1, 0.1, (400, 192)), b1=np.zeros(400),
                             w2=rng.uniform(-0.1, 0.1, (192, 400)), b2=np.zeros(192),
                             hyperparams=hp)
        acts = encode(model, rng.standard_normal((192, 1)))
        assert acts.shape == (400, 1)

    def test_two_unit_toy_matches_scalar_arithmetic(self):
        hp = DecoderHyperparams(n_hidden=2, max_iterations=10)
        w1 = np.array([[0.5, -1.0, 0.25], [2.0, 0.0, -0.5]])
        b1 = np.array([0.1, -0.2])
        model = DecoderModel(w1=w1, b1=b1, w2=np.zeros((3, 2)), b2=np.zeros(3),
                             hyperparams=hp)
        p = np.array([0.3, 0.6, -0.9])
        acts = encode(model, p[:, None])
        z0 = 0.5 * 0.3 + (-1.0) * 0.6 + 0.25 * (-0.9) + 0.1
        z1 = 2.0 * 0.3 + 0.0 * 0.6 + (-0.5) * (-0.9) + (-0.2)
        np.testing.assert_allclose(
            acts[:, 0], [1 / (1 + math.exp(-z0)), 1 / (1 + math.exp(-z1))], rtol=1e-15)

    def test_dimension_mismatch(self):
        model = small_model()
        with pytest.raises(ValueError, match="rows"):
            encode(model, np.zeros((11, 4)))

    def test_nonfinite_weights_rejected_at_construction(self):
        hp = DecoderHyperparams(n_hidden=2, max_iterations=10)
        w1 = np.array([[np.inf, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="finite"):
            DecoderModel(w1=w1, b1=np.zeros(2), w2=np.zeros((2, 2)),
                         b2=np.zeros(2), hyperparams=hp)

    def test_outputs_strictly_inside_unit_interval(self):
        # float64 only saturates beyond |z| ~ 37; moderate weights stay strict
        rng = np.random.default_rng(2)
        model = small_model(seed=3)
        acts = encode(model, rng.uniform(-5, 5, (10, 200)))
        assert acts.min() > 0.0 and acts.max() < 1.0


class TestKlSparsity:
    def test_zero_at_target(self):
        assert kl_sparsity(0.035, np.full(6, 0.035)) == 0.0

    def test_positive_away_from_target(self):
        assert kl_sparsity(0.035, np.array([0.036])) > 0.0
        assert kl_sparsity(0.035, np.array([0.034])) > 0.0

    def test_frozen_scalar_value(self):
        # 0.035*ln(0.035/0.5) + 0.965*ln(0.965/0.5), evaluated independently
        np.testing.assert_allclose(kl_sparsity(0.035, np.array([0.5])),
                                   0.541432701522059, rtol=1e-13)

    def test_frozen_vector_value(self):
        np.testing.assert_allclose(kl_sparsity(0.035, np.array([0.2, 0.01])),
                                   0.13911442648584552, rtol=1e-13)

    def test_boundary_rejected(self):
        with pytest.raises(SaturatedUnitError):
            kl_sparsity(0.035, np.array([0.2, 0.0]))
        with pytest.raises(SaturatedUnitError):
            kl_sparsity(0.035, np.array([1.0]))

    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_convex_in_rho_hat(self, rho, a, b):
        mid = kl_sparsity(rho, np.array([(a + b) / 2.0]))
        avg = 0.5 * (kl_sparsity(rho, np.array([a])) + kl_sparsity(rho, np.array([b])))
        assert mid <= avg + 1e-12


class TestMeanActivation:
    def test_constant(self):
        np.testing.assert_array_equal(mean_activation(np.full((4, 9), 0.5)),
                                      np.full(4, 0.5))

    def test_single_column(self):
        col = np.array([[0.1], [0.9], [0.4]])
        np.testing.assert_array_equal(mean_activation(col), col[:, 0])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        acts = rng.uniform(0, 1, (3, 4))
        expected = [sum(acts[j, i] for i in range(4)) / 4.0 for j in range(3)]
        np.testing.assert_allclose(mean_activation(acts), expected, rtol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            mean_activation(np.zeros((3, 0)))


class TestObjective:
    def test_perfect_reconstruction_zero_objective(self):
        # w1 = 0 makes s constant; w2 = 0 and b2 = p reproduce the single
        # patch exactly, so with beta = lambda = 0 the objective vanishes
        p = np.random.default_rng(5).standard_normal(6)
        hp = DecoderHyperparams(n_hidden=4, beta=0.0, weight_decay=0.0,
                                max_iterations=10)
        model = DecoderModel(w1=np.zeros((4, 6)), b1=np.zeros(4),
                             w2=np.zeros((6, 4)), b2=p.copy(), hyperparams=hp)
        j, _ = objective(model, p[:, None])
        assert j == 0.0

    def test_sparsity_term_zero_at_target(self):
        # b1 = logit(rho) pins every activation at rho
        rho = 0.035
        hp = DecoderHyperparams(n_hidden=3, beta=5.0, weight_decay=0.0,
                                max_iterations=10)
        b1 = np.full(3, math.log(rho / (1 - rho)))
        model = DecoderModel(w1=np.zeros((3, 5)), b1=b1,
                             w2=np.zeros((5, 3)), b2=np.zeros(5), hyperparams=hp)
        x = np.random.default_rng(6).standard_normal((5, 8))
        theta = np.concatenate([model.w1.ravel(), model.b1, model.w2.ravel(), model.b2])
        _, _, terms = _objective_core(theta, x, hp, False)
        assert abs(terms["sparsity"]) < 1e-12

    def test_saturated_unit_error_names_unit(self):
        hp = DecoderHyperparams(n_hidden=2, beta=5.0, max_iterations=10)
        # huge bias saturates unit 1 to activation 1.0 exactly in float64
        model = DecoderModel(w1=np.zeros((2, 3)), b1=np.array([0.0, 800.0]),
                             w2=np.zeros((3, 2)), b2=np.zeros(3), hyperparams=hp)
        x = np.ones((3, 4))
        with pytest.raises(SaturatedUnitError) as err:
            objective(model, x)
        assert err.value.unit == 1

    def test_saturation_guard_clamps_instead(self):
        hp = DecoderHyperparams(n_hidden=2, beta=5.0, max_iterations=10)
        model = DecoderModel(w1=np.zeros((2, 3)), b1=np.array([0.0, 800.0]),
                             w2=np.zeros((3, 2)), b2=np.zeros(3), hyperparams=hp)
        j, grad = objective(model, np.ones((3, 4)), saturation_guard=True)
        assert np.isfinite(j) and np.all(np.isfinite(grad))

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            objective(small_model(), np.zeros((10, 0)))

    @given(st.integers(0, 2**31))
    @settings(max_examples=20)
    def test_column_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        model = small_model(seed=seed % 1000)
        x = rng.standard_normal((10, 15))
        perm = rng.permutation(15)
        j1, _ = objective(model, x)
        j2, _ = objective(model, x[:, perm])
        # mathematically identical; float summation order differs slightly
        np.testing.assert_allclose(j1, j2, rtol=1e-10)


class TestGradient:
    @pytest.mark.parametrize("beta", [0.0, 5.0])
    @pytest.mark.parametrize("lam", [0.0, 3e-3])
    def test_analytic_matches_central_differences(self, beta, lam):
        rng = np.random.default_rng(int(beta * 100 + lam * 1e5))
        hp = DecoderHyperparams(n_hidden=7, beta=beta, weight_decay=lam,
                                max_iterations=10)
        x = rng.standard_normal((10, 20))
        theta = initial_parameters(7, 10, rng) + 0.05 * rng.standard_normal(7 * 10 + 7 + 10 * 7 + 10)
        _, analytic, _ = _objective_core(theta, x, hp, False)
        numeric = finite_difference_gradient(theta, x, hp)
        rel = np.abs(analytic - numeric) / np.maximum(
            np.maximum(np.abs(analytic), np.abs(numeric)), 1e-2)
        assert rel.max() < 1e-6


class TestTrain:
    def test_objective_decreases(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((10, 60))
        hp = DecoderHyperparams(n_hidden=8, max_iterations=60)
        _, trace = train(x, hp, seed=1)
        assert trace.objective[-1] < trace.objective[0]

    def test_large_beta_pins_mean_activation(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((10, 120))
        hp = DecoderHyperparams(n_hidden=8, beta=50.0, max_iterations=200)
        model, trace = train(x, hp, seed=2)
        rho_hat = mean_activation(encode(model, x))
        assert abs(rho_hat.mean() - 0.035) < 0.01

    def test_seed_determinism_bit_for_bit(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((10, 40))
        hp = DecoderHyperparams(n_hidden=6, max_iterations=30)
        m1, _ = train(x, hp, seed=42)
        m2, _ = train(x, hp, seed=42)
        for name in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(getattr(m1, name), getattr(m2, name))

    def test_weight_decay_shrinks_weights(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((10, 80))
        free = DecoderHyperparams(n_hidden=6, weight_decay=0.0, max_iterations=80)
        decayed = DecoderHyperparams(n_hidden=6, weight_decay=3e-3, max_iterations=80)
        m_free, _ = train(x, free, seed=5)
        m_dec, _ = train(x, decayed, seed=5)

        def wnorm(m):
            return np.sqrt(np.sum(m.w1 ** 2) + np.sum(m.w2 ** 2))

        assert wnorm(m_dec) <= wnorm(m_free)

    def test_trace_exports_csv(self, tmp_path):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((10, 30))
        hp = DecoderHyperparams(n_hidden=4, max_iterations=15)
        _, trace = train(x, hp, seed=3)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].split(",") == ["iteration", "objective", "reconstruction",
                                       "sparsity", "decay", "rho_hat_mean",
                                       "rho_hat_min", "rho_hat_max"]
        assert len(lines) == len(trace.iteration) + 1


class TestHyperparams:
    def test_validation(self):
        with pytest.raises(ValueError):
            DecoderHyperparams(rho=0.0)
        with pytest.raises(ValueError):
            DecoderHyperparams(rho=1.0)
        with pytest.raises(ValueError):
            DecoderHyperparams(beta=-1.0)
        with pytest.raises(ValueError):
            DecoderHyperparams(n_hidden=0)


class TestFilterGrid:
    def test_one_hot_rows_make_single_bright_pixels(self):
        hp = DecoderHyperparams(n_hidden=4, max_iterations=10)
        w1 = np.zeros((4, 192))
        for j in range(4):
            w1[j, j * 17] = 1.0
        model = DecoderModel(w1=w1, b1=np.zeros(4), w2=np.zeros((192, 4)),
                             b2=np.zeros(192), hyperparams=hp)
        grid = export_filter_grid(model)
        assert grid.dtype == np.uint8
        assert (grid == 255).sum() == 4  # one maximal pixel-channel per tile

    def test_constant_rows_render_mid_gray(self):
        hp = DecoderHyperparams(n_hidden=2, max_iterations=10)
        model = DecoderModel(w1=np.full((2, 192), 0.3), b1=np.zeros(2),
                             w2=np.zeros((192, 2)), b2=np.zeros(192), hyperparams=hp)
        grid = export_filter_grid(model, border=0)
        assert set(np.unique(grid)) == {128}

    def test_writes_png(self, tmp_path, mini_model):
        path = tmp_path / "filters.png"
        export_filter_grid(mini_model, path)
        from PIL import Image
        with Image.open(path) as img:
            assert img.mode == "RGB"
