"""Calibrator forward/backward, training, shrinkage, scaling, ensembling."""

import math
from dataclasses import replace

import numpy as np
import pytest

from nodeprompt.calibrate import (
    CalibratorParams,
    FewShotSplit,
    TrainConfig,
    backward,
    ensemble_calibrate,
    forward,
    init_params,
    loss,
    parse_train_config,
    scale_columns,
    shrink,
    train_calibrator,
    train_config_from_mapping,
)
from nodeprompt.errors import ConfigError
from nodeprompt.evaluate import sample_few_shot_split
from nodeprompt.prior import normalize_columns, zero_shot_predict


def oracle_forward(params, z, bn_eps, identity):
    """Plain-loop reimplementation of the calibrator forward pass."""
    x = np.array(z, dtype=float)
    for q in range(params.num_layers - 1):
        u = x @ params.weights[q] + params.biases[q]
        mu = u.mean(axis=0)
        var = ((u - mu) ** 2).mean(axis=0)
        xhat = (u - mu) / np.sqrt(var + bn_eps)
        v = params.gammas[q] * xhat + params.betas[q]
        x = np.where(v > 0, v, 0.0)
    out = x @ params.weights[-1] + params.biases[-1]
    return out + z if identity else out


def randomize(params, rng, scale=0.6):
    for w in params.weights:
        w[...] = rng.normal(scale=scale, size=w.shape)
    for b in params.biases:
        b[...] = rng.normal(scale=0.2, size=b.shape)
    for g in params.gammas:
        g[...] = 1.0 + rng.normal(scale=0.3, size=g.shape)
    for b in params.betas:
        b[...] = rng.normal(scale=0.3, size=b.shape)
    return params


def random_instance(seed, kink_guard=1e-3):
    """Random small calibrator problem, resampled until every hidden
    pre-activation is safely away from the ReLU kink (central differences
    with h=1e-5 would otherwise cross it)."""
    while True:
        rng = np.random.default_rng(seed)
        n = int(rng.integers(6, 13))
        c = int(rng.integers(2, 5))
        hidden = int(rng.integers(2, 6))
        layers = int(rng.integers(1, 4))
        z = rng.normal(size=(n, c))
        params = randomize(init_params(c, hidden, layers, seed), rng)
        train_ids = np.sort(rng.choice(n, size=max(2, n // 3), replace=False))
        y = rng.integers(0, c, size=n)
        identity = bool(rng.integers(0, 2))
        sign = "verbatim" if rng.integers(0, 2) else "minimize"
        _, cache = forward(params, z, identity=identity)
        margins = [np.abs(pre).min() for _, _, _, pre in cache.hidden]
        if not margins or min(margins) > kink_guard:
            return params, z, train_ids, y[train_ids], y, identity, sign
        seed += 7919


def numeric_param_grads(params, z, ids, y_ids, coef, sign, identity, h=1e-5):
    grads = []
    for arr in params.arrays():
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss(forward(params, z, identity=identity)[0], ids, y_ids, coef, sign).value
            flat[i] = orig - h
            lo = loss(forward(params, z, identity=identity)[0], ids, y_ids, coef, sign).value
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * h)
        grads.append(g)
    return grads


class TestInitParams:
    def test_untrained_forward_reproduces_input_bitwise(self):
        rng = np.random.default_rng(0)
        z = np.abs(rng.normal(size=(9, 3))) + 0.01  # avoid -0.0 edge cases
        z *= rng.choice([-1.0, 1.0], size=z.shape)
        params = init_params(3, 16, 3, seed=5)
        out, _ = forward(params, z)
        assert np.array_equal(out, z)

    def test_same_seed_identical(self):
        a = init_params(4, 8, 3, seed=1)
        b = init_params(4, 8, 3, seed=1)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, y)

    def test_different_seed_differs(self):
        a = init_params(4, 8, 3, seed=1)
        b = init_params(4, 8, 3, seed=2)
        assert not np.array_equal(a.weights[0], b.weights[0])

    def test_hidden_weight_range_and_final_zero(self):
        params = init_params(6, 32, 3, seed=3)
        lim0 = math.sqrt(6 / 6)
        lim1 = math.sqrt(6 / 32)
        assert np.abs(params.weights[0]).max() <= lim0
        assert np.abs(params.weights[1]).max() <= lim1
        assert np.array_equal(params.weights[2], np.zeros((32, 6)))
        assert all(np.array_equal(b, np.zeros_like(b)) for b in params.biases)

    def test_single_layer_shapes(self):
        params = init_params(3, 16, 1, seed=0)
        assert params.num_layers == 1
        assert params.weights[0].shape == (3, 3)
        assert params.gammas == [] and params.betas == []


class TestForward:
    def test_single_layer_bias_shift(self):
        params = init_params(3, 16, 1, seed=0)
        params.biases[0][...] = 0.75
        z = np.random.default_rng(1).normal(size=(5, 3))
        out, _ = forward(params, z)
        assert np.allclose(out, z + 0.75, atol=0, rtol=0)

    def test_matches_oracle_on_random_instances(self):
        for seed in range(8):
            params, z, *_ , identity, _ = random_instance(seed * 100 + 1)
            got, _ = forward(params, z, identity=identity)
            want = oracle_forward(params, z, 1e-5, identity)
            assert np.max(np.abs(got - want)) <= 1e-12

    def test_non_finite_reports_layer(self):
        params = init_params(3, 4, 2, seed=0)
        params.weights[0][0, 0] = np.inf
        with pytest.raises(FloatingPointError, match="layer 1"):
            forward(params, np.ones((4, 3)))

    def test_batchnorm_statistics(self):
        rng = np.random.default_rng(6)
        params = init_params(4, 8, 3, seed=6)
        z = rng.normal(size=(50, 4)) * 3.0  # large first-layer pre-activation variance
        _, cache = forward(params, z)
        for layer, (_, normalized, inv_std, _) in enumerate(cache.hidden):
            assert np.max(np.abs(normalized.mean(axis=0))) <= 1e-7
            # normalized variance is var/(var + bn_eps) exactly
            var_u = 1.0 / inv_std**2 - 1e-5
            expected = var_u / (var_u + 1e-5)
            assert np.max(np.abs(normalized.var(axis=0) - expected)) <= 1e-12
            if layer == 0:
                assert var_u.min() > 1.0
                assert np.max(np.abs(normalized.var(axis=0) - 1.0)) <= 1e-5

    def test_shape_validation(self):
        params = init_params(3, 4, 2, seed=0)
        with pytest.raises(ValueError):
            forward(params, np.zeros((4, 2)))


class TestLoss:
    def test_uniform_logits_cross_entropy_is_log_c(self):
        logits = np.zeros((6, 4))
        res = loss(logits, [0, 1, 2], [0, 1, 2], entropy_coef=0.0)
        assert res.cross_entropy == pytest.approx(math.log(4), abs=1e-12)

    def test_uniform_logits_verbatim_entropy_term(self):
        logits = np.zeros((6, 4))
        res = loss(logits, [0], [0], entropy_coef=1.0, entropy_sign="verbatim")
        assert res.entropy_term == pytest.approx(-math.log(4), abs=1e-12)

    def test_confident_correct_rows_have_tiny_ce(self):
        logits = np.full((3, 3), -30.0)
        np.fill_diagonal(logits, 30.0)
        res = loss(logits, [0, 1, 2], [0, 1, 2], entropy_coef=0.0)
        assert res.cross_entropy == pytest.approx(0.0, abs=1e-9)

    def test_floor_invariants(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n, c = rng.integers(2, 20), rng.integers(2, 6)
            logits = rng.normal(size=(n, c)) * rng.uniform(0.1, 20)
            ids = rng.choice(n, size=max(1, n // 2), replace=False)
            res = loss(logits, ids, rng.integers(0, c, size=ids.size), 0.3, "verbatim")
            assert res.cross_entropy >= 0.0
            assert -math.log(c) - 1e-9 <= res.entropy_term <= 0.0

    def test_minimize_sign_negates(self):
        logits = np.random.default_rng(2).normal(size=(5, 3))
        a = loss(logits, [0], [1], 1.0, "verbatim")
        b = loss(logits, [0], [1], 1.0, "minimize")
        assert a.entropy_term == pytest.approx(-b.entropy_term, abs=1e-15)

    def test_logit_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for sign in ("verbatim", "minimize"):
            logits = rng.normal(size=(7, 4))
            ids = np.array([0, 2, 5])
            y_ids = np.array([1, 0, 3])
            res = loss(logits, ids, y_ids, 0.4, sign)
            h = 1e-6
            for idx in np.ndindex(logits.shape):
                bumped = logits.copy()
                bumped[idx] += h
                hi = loss(bumped, ids, y_ids, 0.4, sign).value
                bumped[idx] -= 2 * h
                lo = loss(bumped, ids, y_ids, 0.4, sign).value
                num = (hi - lo) / (2 * h)
                assert num == pytest.approx(res.grad[idx], abs=1e-7, rel=1e-5)

    def test_validation(self):
        logits = np.zeros((4, 2))
        with pytest.raises(ValueError):
            loss(logits, [], [], 0.3)
        with pytest.raises(ValueError):
            loss(logits, [0, 0], [0, 1], 0.3)
        with pytest.raises(ValueError):
            loss(logits, [0], [0], 0.3, entropy_sign="nope")


class TestGradients:
    def test_parameter_gradients_match_central_differences(self):
        for seed in range(5):
            params, z, ids, y_ids, _, identity, sign = random_instance(seed * 31 + 2)
            logits, cache = forward(params, z, identity=identity)
            res = loss(logits, ids, y_ids, 0.3, sign)
            analytic = backward(params, cache, res.grad).arrays()
            numeric = numeric_param_grads(params, z, ids, y_ids, 0.3, sign, identity)
            for a, n in zip(analytic, numeric):
                denom = np.maximum(np.abs(a), np.abs(n))
                mask = denom > 1e-7 / 1e-4
                rel = np.zeros_like(a)
                rel[mask] = np.abs(a - n)[mask] / denom[mask]
                assert np.all(np.abs(a - n)[~mask] <= 1e-7)
                assert np.all(rel <= 1e-4)


def _toy_problem(seed=0, n_per_class=10, c=3):
    rng = np.random.default_rng(seed)
    y = np.repeat(np.arange(c), n_per_class)
    z = rng.normal(size=(c * n_per_class, c)) * 0.6
    z[np.arange(y.size), y] += 1.5
    return normalize_columns(z), y


class TestTraining:
    def test_zero_epochs_returns_initial_params(self):
        z, y = _toy_problem()
        split = sample_few_shot_split(y, 2, seed=0)
        cfg = TrainConfig(epochs=0, seed=9)
        got = train_calibrator(z, split, y, cfg)
        want = init_params(z.shape[1], cfg.hidden, cfg.layers, cfg.seed)
        for a, b in zip(got.arrays(), want.arrays()):
            assert np.array_equal(a, b)

    def test_zero_lr_keeps_params(self):
        z, y = _toy_problem()
        split = sample_few_shot_split(y, 2, seed=0)
        cfg = TrainConfig(epochs=5, lr=0.0, seed=9)
        got = train_calibrator(z, split, y, cfg)
        want = init_params(z.shape[1], cfg.hidden, cfg.layers, cfg.seed)
        for a, b in zip(got.arrays(), want.arrays()):
            assert np.array_equal(a, b)

    def test_loss_descends_over_training(self):
        z, y = _toy_problem(seed=3, n_per_class=7)
        split = sample_few_shot_split(y, 3, seed=1)
        ids = split.all_train_ids
        cfg = TrainConfig(epochs=50, seed=4)
        before = loss(
            forward(init_params(z.shape[1], cfg.hidden, cfg.layers, cfg.seed), z)[0],
            ids, y[ids], cfg.entropy_coef, cfg.entropy_sign,
        ).value
        trained = train_calibrator(z, split, y, cfg)
        after = loss(
            forward(trained, z)[0], ids, y[ids], cfg.entropy_coef, cfg.entropy_sign
        ).value
        assert after <= before

    def test_deterministic_given_seed(self):
        z, y = _toy_problem(seed=5)
        split = sample_few_shot_split(y, 2, seed=2)
        cfg = TrainConfig(epochs=10, seed=11)
        a = train_calibrator(z, split, y, cfg)
        b = train_calibrator(z, split, y, cfg)
        for x, w in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x, w)

    def test_non_finite_scores_abort(self):
        z, y = _toy_problem()
        z = z.copy()
        z[0, 0] = np.nan
        split = sample_few_shot_split(y, 2, seed=0)
        with pytest.raises(FloatingPointError):
            train_calibrator(z, split, y, TrainConfig(epochs=3))

    def test_all_labeled_separable_toy_reaches_perfect_train_accuracy(self):
        #每 node labeled: K = class size, empty test set, no entropy term
        rng = np.random.default_rng(8)
        c, per = 2, 6
        y = np.repeat(np.arange(c), per)
        z = np.zeros((c * per, c))
        z[:, 1] = 1.0  # argmax alone predicts class 1 everywhere
        z[y == 1, 1] += 1.0
        z += rng.normal(size=z.shape) * 0.05
        buckets = tuple(np.flatnonzero(y == k) for k in range(c))
        split = FewShotSplit(buckets, np.empty(0, dtype=np.int64))
        cfg = TrainConfig(entropy_coef=0.0, epochs=300, lr=0.05, seed=1)
        trained = train_calibrator(z, split, y, cfg)
        pred = zero_shot_predict(forward(trained, z)[0])
        assert np.mean(pred == y) == 1.0


class TestShrink:
    def test_alpha_one_is_identity(self):
        params, z, *_ = random_instance(41)
        shrunk = shrink(params, 1.0)
        for a, b in zip(params.arrays(), shrunk.arrays()):
            assert np.array_equal(a, b)
        out, _ = forward(params, z)
        out2, _ = forward(shrunk, z)
        assert np.array_equal(out, out2)

    def test_scalar_multiply(self):
        params = init_params(2, 3, 2, seed=0)
        params.weights[0][0, 0] = 2.0
        assert shrink(params, 0.5).weights[0][0, 0] == 1.0

    def test_alpha_zero_forward_is_input(self):
        params, z, *_ = random_instance(42)
        out, _ = forward(shrink(params, 0.0), z)
        assert np.array_equal(out, z)

    def test_continuity_near_endpoints(self):
        params, z, *_ = random_instance(43)
        base, _ = forward(shrink(params, 0.9), z)
        nudged, _ = forward(shrink(params, 0.9 + 1e-9), z)
        assert np.max(np.abs(base - nudged)) <= 1e-6

    def test_alpha_validation(self):
        params = init_params(2, 3, 2, seed=0)
        with pytest.raises(ValueError):
            shrink(params, 1.5)
        with pytest.raises(ValueError):
            shrink(params, -0.1)


class TestScaleColumns:
    def test_hand_computed_sigma(self):
        out = scale_columns(np.array([[2.0], [-2.0]]))
        assert out[:, 0] == pytest.approx([1.0, -1.0], abs=1e-7)

    def test_constant_column_divided_by_epsilon_only(self):
        out = scale_columns(np.array([[3.0], [3.0]]))
        assert out[:, 0] == pytest.approx([3e8, 3e8], rel=1e-9)

    def test_zero_column_stays_zero(self):
        out = scale_columns(np.zeros((4, 2)))
        assert np.array_equal(out, np.zeros((4, 2)))


class TestEnsemble:
    def _problem(self, seed=0):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(3), 8)
        z = rng.normal(size=(24, 3))
        z[np.arange(24), y] += 1.0
        return normalize_columns(z), y

    def test_single_member_equals_manual_composition(self):
        z, y = self._problem()
        split = sample_few_shot_split(y, 2, seed=3)
        cfg = TrainConfig(n_ensemble=1, epochs=8, seed=21)
        calibrated, pred = ensemble_calibrate(z, split, y, cfg)
        trained = train_calibrator(z, split, y, replace(cfg, seed=cfg.seed + 1))
        out, _ = forward(shrink(trained, cfg.alpha), z)
        manual = scale_columns(out)
        assert np.array_equal(calibrated, manual)
        assert np.array_equal(pred, np.argmax(manual, axis=1)[split.test_ids])

    def test_identical_member_seeds_average_to_member(self):
        z, y = self._problem(1)
        split = sample_few_shot_split(y, 2, seed=1)
        cfg = TrainConfig(n_ensemble=3, epochs=6, seed=5)
        calibrated, _ = ensemble_calibrate(z, split, y, cfg, member_seeds=[7, 7, 7])
        single, _ = ensemble_calibrate(z, split, y, replace(cfg, n_ensemble=1), member_seeds=[7])
        assert np.allclose(calibrated, single, rtol=0, atol=1e-14)

    def test_member_order_invariance(self):
        z, y = self._problem(2)
        split = sample_few_shot_split(y, 2, seed=2)
        cfg = TrainConfig(n_ensemble=3, epochs=6, seed=0)
        a, pa = ensemble_calibrate(z, split, y, cfg, member_seeds=[3, 9, 27])
        b, pb = ensemble_calibrate(z, split, y, cfg, member_seeds=[27, 3, 9])
        assert np.max(np.abs(a - b)) <= 1e-12
        assert np.array_equal(pa, pb)

    def test_alpha_zero_reduces_to_zero_shot(self):
        z, y = self._problem(3)
        split = sample_few_shot_split(y, 2, seed=4)
        cfg = TrainConfig(alpha=0.0, n_ensemble=2, epochs=5, seed=2)
        _, pred = ensemble_calibrate(z, split, y, cfg)
        assert np.array_equal(pred, zero_shot_predict(z)[split.test_ids])


class TestTrainConfig:
    def test_alpha_bounds(self):
        with pytest.raises(ConfigError):
            TrainConfig(alpha=1.0001)
        with pytest.raises(ConfigError):
            TrainConfig(alpha=-0.5)
        TrainConfig(alpha=0.0)  # shrink-to-prior limit is allowed

    def test_other_bounds(self):
        with pytest.raises(ConfigError):
            TrainConfig(n_ensemble=0)
        with pytest.raises(ConfigError):
            TrainConfig(layers=0)
        with pytest.raises(ConfigError):
            TrainConfig(entropy_sign="whatever")
        with pytest.raises(ConfigError):
            TrainConfig(entropy_coef=-0.1)

    def test_mapping_overrides(self):
        cfg = train_config_from_mapping({"lr": "0.5", "identity": "false", "layers": "2"})
        assert cfg.lr == 0.5 and cfg.identity is False and cfg.layers == 2

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            train_config_from_mapping({"nope": "1"})

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="bad value"):
            train_config_from_mapping({"lr": "fast"})

    def test_parse_file(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("# calibrator settings\nepochs=7\nalpha=0.8\nentropy_sign=minimize\n")
        cfg = parse_train_config(path)
        assert cfg.epochs == 7 and cfg.alpha == 0.8 and cfg.entropy_sign == "minimize"

    def test_parse_file_requires_key_value(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text("epochs\n")
        with pytest.raises(ConfigError, match="key=value"):
            parse_train_config(path)


class TestFewShotSplitValidation:
    def test_overlap_rejected(self):
        y = np.array([0, 0, 1, 1])
        split = FewShotSplit((np.array([0]), np.array([2])), np.array([0, 1, 3]))
        with pytest.raises(ValueError, match="overlap"):
            split.validate(y, 4)

    def test_partition_required(self):
        y = np.array([0, 0, 1, 1])
        split = FewShotSplit((np.array([0]), np.array([2])), np.array([3]))
        with pytest.raises(ValueError, match="partition"):
            split.validate(y, 4)

    def test_bucket_class_mismatch(self):
        y = np.array([0, 0, 1, 1])
        split = FewShotSplit((np.array([2]), np.array([0])), np.array([1, 3]))
        with pytest.raises(ValueError, match="different class"):
            split.validate(y, 4)
