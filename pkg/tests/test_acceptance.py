"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the summary; criterion 8
needs the CIFAR-10 binary distribution in ``$CIFAR10_DIR``.
"""

import itertools
import os
import time
from pathlib import Path

import numpy as np
import pytest

from fgsmlab import autodiff as ad
from fgsmlab.attacks import AttackSpec, fgsm, input_gradient, pgd
from fgsmlab.autodiff import Tensor, fd_grad, grad, leaf
from fgsmlab.data import synthetic_dataset
from fgsmlab.metrics import detect_double_descent, local_linearity
from fgsmlab.nn import conv2d, cross_entropy, init_params, linear, maxpool2
from fgsmlab.regularizers import gradalign_penalty, orth_penalty
from fgsmlab.rng import stream
from fgsmlab.runner import TrainConfig, analyze, plot, train

import _tiny


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def var(a):
    a = np.asarray(a, dtype=np.float64)
    return leaf(a.shape, a, requires_grad=True)


class _W:
    def __init__(self, w):
        self.w = w

    def weight(self, layer):
        return self.w


# -- 1: every layer and loss vs central differences ---------------------------

def _layer_cases(rng):
    x = rng.uniform(size=(2, 2, 8, 8))
    w = rng.normal(scale=0.3, size=(3, 2, 5, 5))
    b = rng.normal(size=3)
    fw, fb = rng.normal(size=(4, 6)), rng.normal(size=4)
    feats = rng.normal(size=(3, 6))
    pool_in = rng.normal(size=(2, 3, 4, 6))
    logits = rng.normal(scale=2, size=(5, 10))
    y = rng.integers(0, 10, 5)
    mix = rng.normal(size=(2, 3, 4, 4))
    up = rng.normal(size=(2, 3, 2, 3))
    ow = rng.normal(size=(3, 5))
    relu_in = rng.normal(size=(4, 5))
    relu_in = np.where(np.abs(relu_in) < 0.05, 0.1, relu_in)

    def conv_x(t):
        return ad.sum(ad.mul(conv2d(t, Tensor(w), Tensor(b)), Tensor(mix[:, :, :4, :4])))

    def conv_w(t):
        return ad.sum(ad.mul(conv2d(Tensor(x), t, Tensor(b)), Tensor(mix)))

    def conv_b(t):
        return ad.sum(ad.exp(ad.scalar_mul(conv2d(Tensor(x), Tensor(w), t), 0.1)))

    return {
        "conv2d/input": (conv_x, x),
        "conv2d/weight": (conv_w, w),
        "conv2d/bias": (conv_b, b),
        "maxpool2": (lambda t: ad.sum(ad.mul(maxpool2(t), Tensor(up))), pool_in),
        "linear/input": (lambda t: ad.sum(ad.exp(linear(t, Tensor(fw), Tensor(fb)))), feats),
        "linear/weight": (lambda t: ad.sum(ad.exp(linear(Tensor(feats), t, Tensor(fb)))), fw),
        "linear/bias": (lambda t: ad.sum(ad.exp(linear(Tensor(feats), Tensor(fw), t))), fb),
        "relu": (lambda t: ad.sum(ad.mul(ad.relu(t), Tensor(relu_in[::-1].copy()))), relu_in),
        "cross_entropy": (lambda t: cross_entropy(t, y), logits),
        "cross_entropy/sum": (lambda t: cross_entropy(t, y, reduction="sum"), logits),
        "orth_penalty": (lambda t: orth_penalty(_W(t), ["fc1"]), ow),
    }


def _tiny_cnn_case(seed):
    rng = np.random.default_rng(10_000 + seed)
    x, y = _tiny.batch(rng, 2)
    theta = _tiny.random_params(rng).flat()

    def f(t):
        return cross_entropy(_tiny.forward(_unflatten(t), Tensor(x)), y)
    return f, theta


def _unflatten(t):
    """Split a flat parameter tensor into TinyParams while staying on the tape."""
    out, pos = [], 0
    for shape in _tiny.SHAPES.values():
        n = int(np.prod(shape))
        out.append(ad.reshape(ad.crop(t, (slice(pos, pos + n),)), shape))
        pos += n
    return _tiny.TinyParams(*out)


@pytest.mark.criterion(1, "layer and loss gradients vs finite differences, 100 instances, 1e-6")
def test_criterion_1_gradcheck():
    worst = {}
    for seed in range(100):
        cases = _layer_cases(np.random.default_rng(seed))
        cases["cnn/params"] = _tiny_cnn_case(seed)
        for name, (f, x0) in cases.items():
            x = var(x0)
            (g,) = grad(f(x), [x])
            err = rel_err(g.data, fd_grad(f, x0, 1e-6))
            worst[name] = max(worst.get(name, 0.0), err)
    print({k: f"{v:.1e}" for k, v in worst.items()})
    bad = {k: v for k, v in worst.items() if not v <= 1e-6}
    assert not bad, bad


# -- 2: double backprop through the alignment penalty -------------------------

@pytest.mark.criterion(2, "grad_theta of gradalign_penalty vs finite differences, 20 seeds, 1e-5")
def test_criterion_2_double_backprop():
    assert _tiny.n_params() <= 1000
    errs = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x, y = _tiny.batch(rng, 3)
        theta0 = _tiny.random_params(rng).flat()
        eps = 16 / 255

        def penalty(t, create_graph=False):
            return gradalign_penalty(_unflatten(t), x, y, eps, samples=2, create_graph=create_graph,
                                     rng=stream(seed, "eta"), loss_fn=_tiny.loss_fn)

        theta = var(theta0)
        (g,) = grad(penalty(theta, create_graph=True), [theta])
        errs.append(rel_err(g.data, fd_grad(penalty, theta0, 1e-6)))
    print(f"worst relative error {max(errs):.2e}")
    assert max(errs) <= 1e-5, errs


# -- 3: FGSM is optimal for linear losses ------------------------------------

def _corner_max(w, x, eps):
    best = -np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=len(x)):
        best = max(best, float(np.clip(x + eps * np.array(signs), 0.0, 1.0) @ w))
    return best


@pytest.mark.criterion(3, "FGSM equals the best clipped eps-box corner for linear losses, d <= 12, 1e-12")
def test_criterion_3_fgsm_optimality():
    worst = 0.0
    for seed in range(120):
        rng = np.random.default_rng(seed)
        d = 1 + seed % 12
        w = rng.normal(size=d)
        w[rng.uniform(size=d) < 0.1] = 0.0
        x = rng.uniform(size=d)
        x[rng.uniform(size=d) < 0.2] = rng.choice([0.0, 1.0])
        eps = float(rng.uniform(0.0, 0.6))

        def loss_fn(params, t, labels):
            return ad.sum(ad.mul(t, w), axis=1)

        adv = fgsm(None, x[None], None, AttackSpec.fgsm(eps), loss_fn=loss_fn)
        worst = max(worst, abs(float(adv[0] @ w) - _corner_max(w, x, eps)))
    print(f"worst gap {worst:.1e}")
    assert worst <= 1e-12


# -- 4: PGD feasibility and the single-step reduction -------------------------

@pytest.mark.criterion(4, "PGD-10 stays in the eps-ball and [0,1] over 1000 batches; K=1 equals FGSM")
def test_criterion_4_pgd():
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        x, y = _tiny.batch(rng, 4)
        x[0, 0, :3] = 0.0
        x[1, 0, :3] = 1.0
        params = _tiny.random_params(rng)
        eps = float(rng.choice([2 / 255, 8 / 255, 16 / 255, 0.3]))
        out = pgd(params, x, y, AttackSpec.pgd(eps, steps=10), rng=seed, loss_fn=_tiny.loss_fn)
        assert out.dtype == x.dtype
        assert np.abs(out - x).max() <= x.dtype.type(eps), seed
        assert out.min() >= 0 and out.max() <= 1, seed
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = rng.uniform(size=(4, 3, 32, 32)).astype(np.float32)
        spec = AttackSpec.pgd(16 / 255, steps=10)
        out = pgd(init_params(seed), x, rng.integers(0, 10, 4), spec, rng=seed)
        assert out.dtype == np.float32
        assert np.abs(out - x).max() <= np.float32(spec.epsilon) and 0 <= out.min() <= out.max() <= 1
    for seed in range(200):
        rng = np.random.default_rng(seed)
        x, y = _tiny.batch(rng, 4)
        params = _tiny.random_params(rng)
        eps = float(rng.uniform(0.0, 0.3))
        alpha = eps * float(rng.uniform(1.0, 4.0))
        a = fgsm(params, x, y, AttackSpec.fgsm(eps), loss_fn=_tiny.loss_fn)
        b = pgd(params, x, y, AttackSpec.pgd(eps, steps=1, alpha=alpha, random_start=False),
                loss_fn=_tiny.loss_fn)
        assert a.tobytes() == b.tobytes(), seed


# -- 5: regularizer identities -----------------------------------------------

@pytest.mark.criterion(5, "orth zero/invariance, gradalign range and eps=0, linearity = 1 - penalty")
def test_criterion_5_regularizer_identities():
    rng = np.random.default_rng(0)
    for _ in range(50):
        out, inp = sorted(rng.integers(1, 12, size=2))
        q, _ = np.linalg.qr(rng.normal(size=(inp, inp)))
        assert orth_penalty(_W(Tensor(q[:out])), ["fc1"]).item() <= 1e-10
        w = rng.normal(size=(out, inp))
        a = orth_penalty(_W(Tensor(w)), ["fc1"]).item()
        b = orth_penalty(_W(Tensor(w @ q)), ["fc1"]).item()
        assert abs(a - b) <= 1e-9 * abs(a)
    clean_seeds = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x, y = _tiny.batch(rng, 4)
        params = _tiny.random_params(rng)
        # an exactly-zero input gradient has cosine 0 by convention, so at eps = 0
        # the penalty is the fraction of such examples (0 when there are none)
        dead = np.mean([not g.any() for g in input_gradient(params, x, y, loss_fn=_tiny.loss_fn)])
        for eps in (0.0, 8 / 255, 0.5):
            pen = gradalign_penalty(params, x, y, eps, 3, rng=seed, loss_fn=_tiny.loss_fn).item()
            assert 0.0 <= pen <= 2.0
            if eps == 0:
                assert abs(pen - dead) <= 1e-9, (seed, pen, dead)
        clean_seeds += dead == 0
    assert clean_seeds >= 15
    data = synthetic_dataset(3, 10, dtype=np.float64)
    for seed in range(3):
        p = init_params(seed, np.float64)
        assert gradalign_penalty(p, data.images, data.labels, 0.0, 2, rng=seed).item() <= 1e-9
    for seed in range(3):
        p = init_params(seed, np.float64)
        ll = local_linearity(p, data.images, data.labels, 16 / 255, 4, seed=stream(seed, "eta"))
        pen = gradalign_penalty(p, data.images, data.labels, 16 / 255, 4, rng=stream(seed, "eta"))
        assert abs(ll - (1 - pen.item())) <= 1e-12


# -- 6: determinism -----------------------------------------------------------

@pytest.mark.criterion(6, "two identical train runs give byte-identical CSV and checkpoints")
def test_criterion_6_determinism(tmp_path):
    runs = []
    for name in ("a", "b"):
        cfg = TrainConfig(dataset="synthetic", train_n=64, eval_n=20, epochs=3, batch_size=16,
                          eval_steps=3, ll_n=8, ll_samples=2, checkpoint_every=1,
                          output_dir=str(tmp_path / name), run_name="run")
        runs.append(train(cfg).run_dir)
    files = sorted(p.name for p in runs[0].iterdir())
    assert "metrics.csv" in files and "final.ckpt" in files and "epoch0002.ckpt" in files
    assert files == sorted(p.name for p in runs[1].iterdir())
    for f in files:
        if f == "config.json":  # records its own output_dir
            continue
        assert (runs[0] / f).read_bytes() == (runs[1] / f).read_bytes(), f


# -- 7: orthogonality regularizer shrinks the gap ----------------------------

@pytest.mark.criterion(7, "lambda_orth > 0 cuts the final orth_gap by >= 50% (synthetic, 512, 20 epochs)")
def test_criterion_7_orth_efficacy(tmp_path):
    base = TrainConfig(dataset="synthetic", train_n=512, eval_n=100, epochs=20, ll_n=32,
                       ll_samples=2, checkpoint_every=0, output_dir=str(tmp_path))
    gaps = {}
    for setting in ("none", "orth"):
        cfg = base.with_setting(setting)
        gaps[setting] = train(cfg).history[-1].orth_gap
    reduction = 1 - gaps["orth"] / gaps["none"]
    print(f"final orth_gap none={gaps['none']:.4f} orth={gaps['orth']:.4f}, reduction {reduction:.0%}")
    assert reduction >= 0.5


# -- 8: desk-scale CIFAR-10 run -----------------------------------------------

@pytest.mark.criterion(8, "CIFAR-10 2000-sample FGSM-AT run, 30 epochs, analyze and plot")
def test_criterion_8_cifar_smoke(tmp_path):
    data_dir = os.environ.get("CIFAR10_DIR", "")
    found = bool(data_dir) and (Path(data_dir) / "test_batch.bin").exists()
    assert found, ("CIFAR-10 binary batches not found; set CIFAR10_DIR to the directory "
                   "holding data_batch_1.bin ... test_batch.bin")
    cfg = TrainConfig(dataset="cifar10", data_dir=data_dir, train_n=2000, epochs=30,
                      epsilon=16 / 255, output_dir=str(tmp_path)).with_setting("none")
    start = time.perf_counter()
    result = train(cfg)
    for rec in result.history:
        assert all(np.isfinite(float(v)) for v in rec.row()), rec
        assert -1.0 <= rec.local_linearity <= 1.0
    report = analyze(result.run_dir / "metrics.csv", 0.05, 0.8)
    print(report.text(), f"{time.perf_counter() - start:.0f}s")
    svg = plot(result.run_dir / "metrics.csv", ["clean_acc", "robust_acc", "local_linearity"],
               tmp_path / "curves.svg")
    assert svg.read_text().startswith("<svg")


# -- 9: double-descent detector -----------------------------------------------

@pytest.mark.criterion(9, "detector: monotone -> none; (0.10, 0.30, 0.05, 0.28) -> peak 2, trough 3, recovery 4")
def test_criterion_9_detector():
    assert detect_double_descent([0.1, 0.2, 0.3, 0.4, 0.5], 0.1, 0.8) == []
    assert detect_double_descent([0.5, 0.4, 0.3, 0.2], 0.1, 0.8) == []
    (ep,) = detect_double_descent([0.10, 0.30, 0.05, 0.28], 0.1, 0.8)
    assert (ep.peak_epoch, ep.trough_epoch, ep.recovery_epoch) == (2, 3, 4)
    assert ep.drop == pytest.approx(0.25)
    assert ep.recovered_fraction == pytest.approx(0.92)
