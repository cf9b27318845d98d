"""Every analytic gradient against central finite differences (step 1e-5)."""

import numpy as np
import pytest

from freqkd.frequency import (
    BandSplit,
    FrequencyBands,
    normalize_bwd,
    standardize_fwd,
    unit_norm_fwd,
)
from freqkd.losses import (
    LossWeights,
    align_loss,
    cross_entropy,
    logmse_loss,
    mse_loss,
    task_loss,
)
from freqkd.models import LinearHead, MlpEncoder, SharedClassifiers
from freqkd.numerics import SeededRng
from freqkd.train import ExperimentConfig, _distill_step

H = 1e-5
TOL = 1e-4


def numerical_grad(f, x, h=H):
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = f(x)
        x[idx] = orig - h
        down = f(x)
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def rel_err(analytic, numeric):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return np.max(np.abs(analytic - numeric)) / scale


def away_from_zero(rng, shape, margin=0.05):
    """Samples bounded away from 0 so relu/|.| kinks cannot straddle the step."""
    signs = rng.choice([-1.0, 1.0], size=shape)
    return signs * rng.uniform(margin, 2.0, size=shape)


class TestElementwiseLossGradients:
    def test_mse(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            a = rng.standard_normal((3, 7))
            b = rng.standard_normal((3, 7))
            _, grad = mse_loss(a, b)
            numeric = numerical_grad(lambda x: mse_loss(x, b)[0], a.copy())
            assert rel_err(grad, numeric) < TOL

    def test_logmse(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = away_from_zero(rng, (2, 9))
            b = rng.standard_normal((2, 9)) * 3
            _, grad = logmse_loss(a, b)
            numeric = numerical_grad(lambda x: logmse_loss(x, b)[0], a.copy())
            assert rel_err(grad, numeric) < TOL

    def test_cross_entropy(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            logits = rng.standard_normal((4, 3)) * 2
            labels = rng.integers(0, 3, size=4)
            _, grad = cross_entropy(logits, labels)
            numeric = numerical_grad(lambda x: cross_entropy(x, labels)[0],
                                     logits.copy())
            assert rel_err(grad, numeric) < TOL


class TestStandardizeChains:
    def test_mse_through_standardize(self):
        rng = np.random.default_rng(3)
        target, _ = standardize_fwd(rng.standard_normal((3, 8)))
        x = rng.standard_normal((3, 8))

        def forward(v):
            return mse_loss(standardize_fwd(v)[0], target)[0]

        y, cache = standardize_fwd(x)
        _, d_y = mse_loss(y, target)
        analytic = normalize_bwd(cache, d_y)
        assert rel_err(analytic, numerical_grad(forward, x.copy())) < TOL

    def test_logmse_through_unit_norm(self):
        rng = np.random.default_rng(4)
        target, _ = unit_norm_fwd(rng.standard_normal((3, 8)))
        x = away_from_zero(rng, (3, 8))

        def forward(v):
            return logmse_loss(unit_norm_fwd(v)[0], target)[0]

        y, cache = unit_norm_fwd(x)
        _, d_y = logmse_loss(y, target)
        analytic = normalize_bwd(cache, d_y)
        assert rel_err(analytic, numerical_grad(forward, x.copy())) < TOL


def random_heads(rng, dim, classes):
    return SharedClassifiers(
        phi_l=LinearHead(w=rng.standard_normal((dim, classes)) * 0.3,
                         b=rng.standard_normal(classes) * 0.1),
        phi_h=LinearHead(w=rng.standard_normal((dim, classes)) * 0.3,
                         b=rng.standard_normal(classes) * 0.1),
    )


class TestAlignGradients:
    def test_inputs_and_heads(self):
        rng = np.random.default_rng(5)
        dim, classes, n = 8, 3, 3
        heads = random_heads(rng, dim, classes)
        labels = rng.integers(0, classes, size=n)
        low_a, high_a = rng.standard_normal((2, n, dim))
        low_b, high_b = rng.standard_normal((2, n, dim))

        def forward():
            return align_loss(FrequencyBands(low_a, high_a),
                              FrequencyBands(low_b, high_b), heads, labels).loss

        result = align_loss(FrequencyBands(low_a, high_a),
                            FrequencyBands(low_b, high_b), heads, labels)
        for array, analytic in ((low_a, result.d_low_a), (high_a, result.d_high_a),
                                (low_b, result.d_low_b), (high_b, result.d_high_b)):
            numeric = numerical_grad(lambda _: forward(), array)
            assert rel_err(analytic, numeric) < TOL
        for name, tensor in (("phi_l.w", heads.phi_l.w), ("phi_l.b", heads.phi_l.b),
                             ("phi_h.w", heads.phi_h.w), ("phi_h.b", heads.phi_h.b)):
            numeric = numerical_grad(lambda _: forward(), tensor)
            assert rel_err(result.phi_grads[name], numeric) < TOL


class TestTaskGradients:
    def test_inputs_and_heads(self):
        rng = np.random.default_rng(6)
        dim, classes, n = 8, 3, 3
        heads = random_heads(rng, dim, classes)
        private = LinearHead(w=rng.standard_normal((dim, classes)) * 0.3,
                             b=rng.standard_normal(classes) * 0.1)
        labels = rng.integers(0, classes, size=n)
        raw = away_from_zero(rng, (n, dim))  # clear of the rectifier kink
        low, high = rng.standard_normal((2, n, dim))

        def forward():
            return task_loss(raw, FrequencyBands(low, high), heads, private,
                             labels).loss

        result = task_loss(raw, FrequencyBands(low, high), heads, private, labels)
        for array, analytic in ((raw, result.d_raw), (low, result.d_low),
                                (high, result.d_high)):
            numeric = numerical_grad(lambda _: forward(), array)
            assert rel_err(analytic, numeric) < TOL
        for tensor, analytic in ((private.w, result.private_grads["head.w"]),
                                 (private.b, result.private_grads["head.b"]),
                                 (heads.phi_l.w, result.phi_grads["phi_l.w"]),
                                 (heads.phi_h.w, result.phi_grads["phi_h.w"])):
            numeric = numerical_grad(lambda _: forward(), tensor)
            assert rel_err(analytic, numeric) < TOL


class TestEncoderGradients:
    def test_parameters(self):
        rng = np.random.default_rng(7)
        encoder = MlpEncoder.init([4, 5, 6], SeededRng(3), "enc")
        x = rng.standard_normal((3, 4))
        target = rng.standard_normal((3, 6))

        def forward():
            return mse_loss(encoder.forward(x)[0], target)[0]

        feats, cache = encoder.forward(x)
        _, d_feats = mse_loss(feats, target)
        grads = encoder.backward(cache, d_feats)
        for i in range(2):
            for name, tensor in ((f"w{i}", encoder.weights[i]),
                                 (f"b{i}", encoder.biases[i])):
                numeric = numerical_grad(lambda _: forward(), tensor)
                assert rel_err(grads[name], numeric) < TOL


def tiny_distill_setup(seed, **config_kwargs):
    rng = np.random.default_rng(seed)
    n, d_in, dim, classes = 4, 6, 8, 3
    config = ExperimentConfig(feature_dim=dim, hidden=(5,), seed=seed,
                              **config_kwargs).validate()
    encoder = MlpEncoder.init([d_in, 5, dim], SeededRng(seed), "enc.student")
    head = LinearHead(w=rng.standard_normal((dim, classes)) * 0.3,
                      b=np.zeros(classes))
    phi = random_heads(rng, dim, classes)
    teacher_enc = MlpEncoder.init([d_in, 5, dim], SeededRng(seed + 100), "enc.teacher")
    teacher_head = LinearHead(w=np.zeros((dim, classes)), b=np.zeros(classes))
    from freqkd.models import ModelBundle

    teacher = ModelBundle(modality="a", encoder=teacher_enc, head=teacher_head)
    x_s = rng.standard_normal((n, d_in))
    x_t = rng.standard_normal((n, d_in))
    y = rng.integers(0, classes, size=n)
    band = BandSplit.for_dim(dim, config.threshold) if config.freq else None
    weights = LossWeights(config.lambda1, config.lambda2)
    return encoder, head, phi, teacher, x_s, x_t, y, config, band, weights


class TestDistillStepGradients:
    """The composite objective against finite differences, per configuration."""

    @pytest.mark.parametrize("config_kwargs", [
        {},
        {"scale": False, "log": False},
        {"align": False},
        {"align_standardized": True},
        {"freq": False, "align": True, "scale": False, "log": False},
        {"freq": False, "align": False, "scale": False, "log": False},
        {"dedup_student_band_ce": True},
        {"lambda1": 3.0, "lambda2": 0.5},
        {"low_loss": "logmse", "high_loss": "mse"},
    ])
    def test_student_parameter_gradients(self, config_kwargs):
        setup = tiny_distill_setup(11, **config_kwargs)
        encoder, head, phi, teacher, x_s, x_t, y, config, band, weights = setup

        def forward():
            breakdown, _ = _distill_step(encoder, head, phi, teacher, x_s, x_t,
                                         y, config, band, weights)
            return breakdown.total

        _, grads = _distill_step(encoder, head, phi, teacher, x_s, x_t, y,
                                 config, band, weights)
        tensors = {
            "encoder.w0": encoder.weights[0],
            "encoder.b1": encoder.biases[1],
            "head.w": head.w,
            "head.b": head.b,
            "phi_l.w": phi.phi_l.w,
            "phi_h.w": phi.phi_h.w,
        }
        for name, tensor in tensors.items():
            numeric = numerical_grad(lambda _: forward(), tensor)
            assert rel_err(grads[name], numeric) < TOL, name


class TestRandomInstanceSweep:
    def test_twenty_instances(self):
        rng = np.random.default_rng(8)
        for trial in range(20):
            n = int(rng.integers(1, 5))
            d = int(rng.integers(2, 17))
            a = away_from_zero(rng, (n, d))
            b = rng.standard_normal((n, d))
            for loss in (mse_loss, logmse_loss):
                _, grad = loss(a, b)
                numeric = numerical_grad(lambda x: loss(x, b)[0], a.copy())
                assert rel_err(grad, numeric) < TOL
