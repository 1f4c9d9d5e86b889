#!/usr/bin/env python3
"""Validation tests

    python test.py           fast checks
    python test.py --slow    also the multi-seed training comparisons
"""

import math
import os
import shutil
import sys
import tempfile

os.chdir(os.path.dirname(os.path.abspath(__file__)))

import numpy as np

TEMP_DIRS = []

TINY_CORPUS = dict(train_count=12, test_count=4, image_size=16, noise_sigma=0.05,
                   labeled_fraction=0.25, data_seed=3)
TINY_TRAIN = dict(max_iter=6, labeled_batch=2, unlabeled_batch=2, num_classes=3, base_channels=4,
                  snapshot_every=3, probe_size=2, seed=3)


def _check(passed, label, detail=""):
    print(f"  [{'OK' if passed else 'FAIL'}] {label}" + (f" ({detail})" if detail else ""))
    return bool(passed)


def _crash(e):
    print(f"  [FAIL] Error: {e}")
    import traceback
    traceback.print_exc()
    return False


def _temp_dir():
    path = tempfile.mkdtemp(prefix="dtsl_test_")
    TEMP_DIRS.append(path)
    return path


def _random_probs(rng, shape, scale=2.0):
    logits = rng.normal(0.0, scale, size=shape)
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _tiny_configs(mode="semi", **overrides):
    from dtsl.settings import CorpusConfig, TrainConfig, TrainMode
    corpus_keys = set(TINY_CORPUS)
    train = TrainConfig(**{**TINY_TRAIN, "mode": TrainMode.parse(mode),
                           **{k: v for k, v in overrides.items() if k not in corpus_keys}})
    corpus = CorpusConfig(**{**TINY_CORPUS, **{k: v for k, v in overrides.items() if k in corpus_keys}})
    return train.validate(), corpus.validate()


def _tiny_flags():
    flags = []
    for key, value in list(TINY_TRAIN.items()) + list(TINY_CORPUS.items()):
        flags += ["--" + key.replace("_", "-"), str(value)]
    return flags


def _safe_kappa(js):
    """Midpoint of the widest gap between JS values, so small perturbations keep the mask"""
    values = np.sort(np.asarray(js).ravel())
    gaps = np.diff(values)
    i = int(np.argmax(gaps))
    return float((values[i] + values[i + 1]) / 2.0)


# Finite differences

def _numeric_grad(fn, tensor, indices, h):
    grads = {}
    for idx in indices:
        old = tensor.data[idx]
        tensor.data[idx] = old + h
        plus = fn().item()
        tensor.data[idx] = old - h
        minus = fn().item()
        tensor.data[idx] = old
        grads[idx] = (plus - minus) / (2.0 * h)
    return grads


def _grad_error(fn, tensors, max_points=100, seed=0):
    """Max relative error between backward() and central differences"""
    from config import FD_STEP
    from dtsl import tensor as T

    for t in tensors:
        t.grad = None
    T.backward(fn())
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        indices = list(np.ndindex(t.shape))
        if max_points and len(indices) > max_points:
            chosen = rng.choice(len(indices), size=max_points, replace=False)
            indices = [indices[i] for i in chosen]
        for idx, n in _numeric_grad(fn, t, indices, FD_STEP).items():
            a = float(g[idx])
            worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-6))
    return worst


def test_imports():
    """Test that all modules import correctly"""
    print("Testing imports...")

    try:
        import config
        print("  [OK] config.py")
    except Exception as e:
        print(f"  [FAIL] config.py: {e}")
        return False

    try:
        from dtsl import tensor
        print("  [OK] tensor.py")
    except Exception as e:
        print(f"  [FAIL] tensor.py: {e}")
        return False

    try:
        from dtsl.models import create_network, save_checkpoint, load_checkpoint
        print("  [OK] network.py, checkpoint.py")
    except Exception as e:
        print(f"  [FAIL] models: {e}")
        return False

    try:
        from dtsl.systems import clg_strategy, l_sup, ema_update, AdamOptimizer, MetricReport, TrainingDebugger
        print("  [OK] consensus.py, losses.py, ema.py, optimizer.py, metrics.py, debugger.py")
    except Exception as e:
        print(f"  [FAIL] systems: {e}")
        return False

    try:
        from dtsl.data import generate, split
        from dtsl.settings import TrainConfig, CorpusConfig
        print("  [OK] synthetic.py, settings.py")
    except Exception as e:
        print(f"  [FAIL] data/settings: {e}")
        return False

    try:
        from dtsl.trainer import Trainer, run_training
        from dtsl.sweeps import sweep, run_ablation
        from dtsl.ui.cli import main
        print("  [OK] trainer.py, sweeps.py, cli.py")
    except Exception as e:
        print(f"  [FAIL] trainer/cli: {e}")
        return False

    return True


def test_elementwise():
    """Forward values and error cases of the primitive ops"""
    print("\nTesting elementwise ops...")

    try:
        from dtsl import tensor as T
        from dtsl.tensor import Tensor

        ok = True
        a = Tensor([[1.0, -2.0], [3.0, 0.5]])
        b = Tensor([[2.0, 4.0], [-1.0, 0.25]])
        ok &= _check(np.array_equal(T.elementwise("add", a, b).data, a.data + b.data), "add")
        ok &= _check(np.array_equal(T.elementwise("div", a, b).data, a.data / b.data), "div")
        ok &= _check(np.array_equal(T.elementwise("relu", a).data, [[1.0, 0.0], [3.0, 0.5]]), "relu")
        ok &= _check(np.array_equal(T.mul(a, 2.0).data, a.data * 2.0), "scalar broadcast")

        for label, call in [("shape mismatch", lambda: T.add(a, Tensor([1.0, 2.0, 3.0]))),
                            ("division by zero", lambda: T.div(a, Tensor([[1.0, 0.0], [1.0, 1.0]]))),
                            ("log of zero", lambda: T.log(Tensor([0.0, 1.0]))),
                            ("unknown op", lambda: T.elementwise("tanh", a))]:
            try:
                call()
                ok &= _check(False, f"{label} raises")
            except ValueError:
                ok &= _check(True, f"{label} raises")
        return ok
    except Exception as e:
        return _crash(e)


def _conv_oracle(x, w, bias, stride, padding):
    batch, c_in, height, width = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    out = np.zeros((batch, c_out, out_h, out_w))
    for b in range(batch):
        for co in range(c_out):
            for y in range(out_h):
                for x_ in range(out_w):
                    acc = 0.0
                    for ki in range(kh):
                        for kj in range(kw):
                            for ci in range(c_in):
                                acc += xp[b, ci, y * stride + ki, x_ * stride + kj] * w[co, ci, ki, kj]
                    out[b, co, y, x_] = acc + bias[co] if bias is not None else acc
    return out


def test_conv2d():
    """Convolution against the nested-loop definition"""
    print("\nTesting conv2d...")

    try:
        from dtsl import tensor as T

        ok = True
        ones = T.conv2d(np.ones((1, 1, 5, 5)), np.ones((1, 1, 3, 3)))
        ok &= _check(ones.shape == (1, 1, 3, 3) and np.all(ones.data == 9.0), "ones kernel sums to 9")

        identity = np.zeros((1, 1, 3, 3))
        identity[0, 0, 1, 1] = 1.0
        x = np.random.default_rng(0).normal(size=(1, 1, 6, 6))
        ok &= _check(np.array_equal(T.conv2d(x, identity, padding=1).data, x), "identity kernel")

        rng = np.random.default_rng(1)
        x = rng.normal(size=(2, 3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        bias = rng.normal(size=4)
        for stride, padding, use_bias in [(1, 1, True), (1, 0, False), (2, 1, True)]:
            b = bias if use_bias else None
            got = T.conv2d(x, w, b, stride=stride, padding=padding).data
            want = _conv_oracle(x, w, b, stride, padding)
            ok &= _check(np.array_equal(got, want), f"bit-exact vs loop oracle (stride {stride}, pad {padding})")

        try:
            T.conv2d(np.ones((1, 2, 4, 4)), np.ones((1, 3, 3, 3)))
            ok &= _check(False, "channel mismatch raises")
        except ValueError:
            ok &= _check(True, "channel mismatch raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_softmax():
    """Softmax normalization and the NaN guard"""
    print("\nTesting softmax...")

    try:
        from dtsl import tensor as T

        ok = True
        rng = np.random.default_rng(2)
        probs = T.softmax(rng.normal(0.0, 5.0, size=(3, 4, 5, 5)), axis=1).data
        ok &= _check(np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12, "sums to 1 within 1e-12")

        extreme = T.softmax(np.array([[1000.0, 0.0]]), axis=1).data
        ok &= _check(np.all(np.isfinite(extreme)) and extreme[0, 0] == 1.0, "no overflow at [1000, 0]")

        log_probs = T.log_softmax(np.array([[1000.0, 0.0]]), axis=1).data
        ok &= _check(log_probs[0, 0] == 0.0 and log_probs[0, 1] == -1000.0, "log_softmax stays finite")

        try:
            T.softmax(np.array([[np.nan, 1.0]]), axis=1)
            ok &= _check(False, "NaN raises")
        except ValueError:
            ok &= _check(True, "NaN raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_backward():
    """Tape construction and gradient accumulation"""
    print("\nTesting backward...")

    try:
        from dtsl import tensor as T
        from dtsl.tensor import Tensor

        ok = True
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        T.backward(T.tsum(a))
        ok &= _check(np.array_equal(a.grad, [1.0, 1.0, 1.0]), "d sum / da = 1")

        a.grad = None
        T.backward(T.tsum(T.mul(a, a)))
        ok &= _check(np.array_equal(a.grad, 2.0 * a.data), "d sum(a*a) / da = 2a")

        T.backward(T.tsum(a))
        ok &= _check(np.array_equal(a.grad, 2.0 * a.data + 1.0), "gradients accumulate")

        try:
            T.backward(T.mul(a, 2.0))
            ok &= _check(False, "non-scalar loss raises")
        except ValueError:
            ok &= _check(True, "non-scalar loss raises")

        c = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.mul(c.detach(), 3.0))
        T.backward(loss)
        ok &= _check(c.grad is None and not loss.requires_grad, "detach blocks the gradient")

        # Shared subexpression: d/dx (x*y + x) with y = x*x
        x = Tensor(1.5, requires_grad=True)
        y = T.mul(x, x)
        tape = T.backward(T.add(T.mul(x, y), x))
        ok &= _check(abs(x.grad - (3 * 1.5 ** 2 + 1.0)) < 1e-12, "diamond graph", f"{len(tape)} nodes")

        # Same loss twice: leaves get exactly twice the gradient
        w = Tensor([0.5, -1.0, 2.0], requires_grad=True)
        repeated = T.tsum(T.mul(T.mul(w, w), [1.0, 2.0, 3.0]))
        T.backward(repeated)
        once = w.grad.copy()
        T.backward(repeated)
        ok &= _check(np.allclose(w.grad, 2.0 * once, rtol=0.0, atol=1e-12), "second backward adds one gradient")
        return ok
    except Exception as e:
        return _crash(e)


def test_gradients():
    """Central-difference checks for every differentiable op"""
    print("\nTesting gradients (finite differences)...")

    try:
        from dtsl import tensor as T
        from dtsl.tensor import Tensor

        rng = np.random.default_rng(3)
        tolerance = 1e-4
        ok = True

        def leaf(values):
            return Tensor(values, requires_grad=True)

        def away_from(center, shape):
            signs = rng.choice([-1.0, 1.0], size=shape)
            return center + signs * rng.uniform(0.1, 0.8, size=shape)

        shape = (10, 10)
        weights = rng.normal(size=shape)
        cases = []
        for op in ("add", "sub", "mul"):
            a, b = leaf(rng.normal(size=shape)), leaf(rng.normal(size=shape))
            cases.append((op, lambda op=op, a=a, b=b: T.elementwise(op, a, b), [a, b]))
        a, b = leaf(rng.normal(size=shape)), leaf(away_from(0.0, shape) * 2.0)
        cases.append(("div", lambda a=a, b=b: T.div(a, b), [a, b]))
        a, s = leaf(rng.normal(size=shape)), leaf(1.7)
        cases.append(("mul by scalar tensor", lambda a=a, s=s: T.mul(a, s), [a, s]))
        a = leaf(rng.normal(size=shape))
        cases.append(("neg", lambda a=a: T.neg(a), [a]))
        a = leaf(rng.normal(size=shape))
        cases.append(("exp", lambda a=a: T.elementwise("exp", a), [a]))
        a = leaf(rng.uniform(0.5, 2.0, size=shape))
        cases.append(("log", lambda a=a: T.elementwise("log", a), [a]))
        a = leaf(away_from(0.0, shape))
        cases.append(("relu", lambda a=a: T.elementwise("relu", a), [a]))
        a = leaf(away_from(0.3, shape))
        cases.append(("clamp_min", lambda a=a: T.elementwise("clampmin", a, 0.3), [a]))

        for label, op, tensors in cases:
            err = _grad_error(lambda op=op: T.tsum(T.mul(op(), weights)), tensors)
            ok &= _check(err < tolerance, label, f"max rel err {err:.2e}")

        grid = rng.normal(size=(2, 3, 4, 4))
        w4 = rng.normal(size=(2, 3, 4, 4))
        x = leaf(grid)
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.softmax(x, axis=1), w4)), [x]) < tolerance, "softmax")
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.log_softmax(x, axis=1), w4)), [x]) < tolerance,
                     "log_softmax")
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.mean(x, axis=(0, 2, 3)), [1.0, -2.0, 0.5])), [x])
                     < tolerance, "mean over axes")
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.reshape(x, (6, 16)), w4.reshape(6, 16))), [x])
                     < tolerance, "reshape")
        index = rng.integers(0, 3, size=(2, 4, 4))
        w3 = rng.normal(size=(2, 4, 4))
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.pick(x, index, axis=1), w3)), [x]) < tolerance, "pick")

        y = leaf(rng.normal(size=(2, 2, 4, 4)))
        wcat = rng.normal(size=(2, 5, 4, 4))
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.concat([x, y], axis=1), wcat)), [x, y]) < tolerance,
                     "concat")

        kernel = leaf(rng.normal(size=(2, 3, 3, 3)))
        bias = leaf(rng.normal(size=2))
        wconv = rng.normal(size=(2, 2, 4, 4))
        err = _grad_error(lambda: T.tsum(T.mul(T.conv2d(x, kernel, bias, stride=1, padding=1), wconv)),
                          [x, kernel, bias])
        ok &= _check(err < tolerance, "conv2d (pad 1)", f"max rel err {err:.2e}")
        z = leaf(rng.normal(size=(1, 2, 5, 5)))
        k2 = leaf(rng.normal(size=(3, 2, 3, 3)))
        wstride = rng.normal(size=(1, 3, 2, 2))
        err = _grad_error(lambda: T.tsum(T.mul(T.conv2d(z, k2, stride=2), wstride)), [z, k2])
        ok &= _check(err < tolerance, "conv2d (stride 2)", f"max rel err {err:.2e}")

        wpool = rng.normal(size=(2, 3, 2, 2))
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.max_pool2d(x, 2), wpool)), [x]) < tolerance, "max_pool2d")
        wup = rng.normal(size=(2, 3, 8, 8))
        ok &= _check(_grad_error(lambda: T.tsum(T.mul(T.upsample_nearest2d(x, 2), wup)), [x]) < tolerance,
                     "upsample_nearest2d")
        return ok
    except Exception as e:
        return _crash(e)


def test_loss_gradients():
    """Central-difference checks for the loss terms and a full labeled objective"""
    print("\nTesting loss gradients...")

    try:
        from dtsl import tensor as T
        from dtsl.models import create_network
        from dtsl.systems.consensus import js_divergence
        from dtsl.systems.losses import cross_entropy, dice_loss, l_pace, l_semi, l_sup, l_url
        from dtsl.tensor import Tensor

        rng = np.random.default_rng(4)
        tolerance = 1e-4
        ok = True

        logits = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        labels = rng.integers(0, 3, size=(2, 4, 4))
        pseudo = rng.integers(0, 3, size=(2, 4, 4))

        err = _grad_error(lambda: cross_entropy(logits, labels), [logits])
        ok &= _check(err < tolerance, "cross_entropy", f"max rel err {err:.2e}")
        err = _grad_error(lambda: dice_loss(T.softmax(logits, axis=1), labels), [logits])
        ok &= _check(err < tolerance, "dice_loss", f"max rel err {err:.2e}")
        err = _grad_error(lambda: l_semi(T.softmax(logits, axis=1), pseudo), [logits])
        ok &= _check(err < tolerance, "l_semi", f"max rel err {err:.2e}")

        teacher = _random_probs(rng, (2, 3, 4, 4))
        kappa = _safe_kappa(js_divergence(T.softmax(logits, axis=1).data, teacher))
        err = _grad_error(lambda: l_url(T.softmax(logits, axis=1), teacher, kappa, 3), [logits])
        ok &= _check(err < tolerance, "l_url", f"max rel err {err:.2e}, kappa {kappa:.3f}")

        net = create_network("residual", 3, 4)
        params = net.init_params(5)
        for name, t in params:
            if name.endswith(".bias"):
                t.data = rng.normal(0.0, 0.1, size=t.shape)
        images = rng.uniform(size=(1, 1, 4, 4))
        labels = rng.integers(0, 3, size=(1, 4, 4))
        pseudo = rng.integers(0, 3, size=(1, 4, 4))
        cross_teacher = _random_probs(rng, (1, 3, 4, 4))
        start = T.softmax(net.forward(params, images), axis=1).data
        kappa = _safe_kappa(js_divergence(start, cross_teacher))

        def labeled_objective():
            z = net.forward(params, images)
            probs = T.softmax(z, axis=1)
            pace = l_pace(l_semi(probs, pseudo), 0.0, l_url(probs, cross_teacher, kappa, 3), 0.0, 1.0, 0.5)
            return T.add(l_sup(z, labels), pace)

        chosen = [params[name] for name in ("enc1.conv1.weight", "mid.conv2.weight",
                                            "dec1.skip.weight", "head.weight", "head.bias")]
        err = _grad_error(labeled_objective, chosen, max_points=6, seed=4)
        ok &= _check(err < tolerance, "full labeled objective through a network", f"max rel err {err:.2e}")
        return ok
    except Exception as e:
        return _crash(e)


def _js_scalar(p, q):
    from config import EPS_LOG
    m = [(a + b) / 2.0 for a, b in zip(p, q)]

    def kl(x):
        return sum(xk * math.log2(xk / max(mk, EPS_LOG)) for xk, mk in zip(x, m) if xk > 0.0)

    return max(0.5 * kl(p) + 0.5 * kl(q), 0.0)


def test_divergences():
    """KL and JS properties"""
    print("\nTesting KL / JS divergence...")

    try:
        from dtsl.systems.consensus import js_divergence, kl_pixelwise

        ok = True
        rng = np.random.default_rng(5)
        p = rng.dirichlet(np.ones(3), size=1000)
        q = rng.dirichlet(np.ones(3), size=1000)
        q[:100] = np.eye(3)[rng.integers(0, 3, size=100)]  # include point masses

        forward, reverse = js_divergence(p, q), js_divergence(q, p)
        ok &= _check(np.max(np.abs(forward - reverse)) <= 1e-12, "symmetric on 1000 pairs")
        ok &= _check(forward.min() >= 0.0 and forward.max() <= 1.0 + 1e-12, "bounded by [0, 1]")
        ok &= _check(np.max(js_divergence(p, p)) < 1e-12, "js(p, p) = 0")
        ok &= _check(js_divergence(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))[0] == 1.0,
                     "disjoint point masses give exactly 1 bit")

        a, b = [0.9, 0.05, 0.05], [0.2, 0.5, 0.3]
        got = js_divergence(np.array([a]), np.array([b]))[0]
        ok &= _check(abs(got - _js_scalar(a, b)) < 1e-12, "matches the direct formula")

        kl = kl_pixelwise(np.array([[0.5, 0.5]]), np.array([[0.25, 0.75]]))[0]
        ok &= _check(abs(kl - (0.5 * 1.0 + 0.5 * math.log2(0.5 / 0.75))) < 1e-12, "KL example")
        ok &= _check(kl_pixelwise(np.array([[1.0, 0.0]]), np.array([[0.5, 0.5]]))[0] == 1.0,
                     "0 log 0 contributes nothing")
        ok &= _check(np.isfinite(kl_pixelwise(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]]))[0]),
                     "zero in q is clamped")

        for bad, label in ((np.array([[0.7, 0.7]]), "rows not summing to one"),
                           (np.array([[1.2, -0.2]]), "negative entries")):
            try:
                js_divergence(bad, np.array([[0.5, 0.5]]))
                ok &= _check(False, f"{label} rejected")
            except ValueError:
                ok &= _check(True, f"{label} rejected")
        return ok
    except Exception as e:
        return _crash(e)


def test_clg():
    """Consensus label generator against a per-pixel scalar oracle"""
    print("\nTesting CLG...")

    try:
        from dtsl.systems.consensus import clg, make_masks, plain_consensus

        ok = True
        rng = np.random.default_rng(6)
        kappas = [0.0, 0.01, 0.05, 0.1, 1.0]
        mismatches = {k: 0 for k in kappas}
        for _ in range(100):
            o1 = _random_probs(rng, (2, 3, 8, 8))
            o2 = _random_probs(rng, (2, 3, 8, 8))
            got = {k: clg(o1, o2, k) for k in kappas}
            for b in range(2):
                for y in range(8):
                    for x in range(8):
                        p, q = list(o1[b, :, y, x]), list(o2[b, :, y, x])
                        js = _js_scalar(p, q)
                        winner = int(np.argmax([(pk + qk) / 2.0 for pk, qk in zip(p, q)]))
                        for k in kappas:
                            want = winner if js < k else 0
                            mismatches[k] += int(got[k][b, y, x] != want)
        for k in kappas:
            ok &= _check(mismatches[k] == 0, f"oracle match at kappa={k}", f"{mismatches[k]} mismatches")

        o1 = _random_probs(rng, (2, 3, 8, 8))
        o2 = _random_probs(rng, (2, 3, 8, 8))
        ok &= _check(np.array_equal(clg(o1, o2, 1.0), plain_consensus(o1, o2)),
                     "kappa=1 reduces to plain consensus")
        ok &= _check(not np.any(clg(o1, o2, 0.0)), "kappa=0 gives all background")

        partition, monotone = True, True
        ordered = [0.0, 0.01, 0.05, 0.1, 0.5, 1.0]
        for _ in range(100):
            field = rng.uniform(size=(2, 8, 8))
            field[0, 0, 0] = 0.05  # on the threshold: inconsistent
            masks = [make_masks(field, k) for k in ordered]
            partition &= all(np.all(m.cons ^ m.diff) for m in masks)
            partition &= not masks[2].cons[0, 0, 0]
            monotone &= all(np.all(~lo.cons | hi.cons) for lo, hi in zip(masks, masks[1:]))
        ok &= _check(partition, "cons XOR diff on 100 fields")
        ok &= _check(monotone, "cons grows with kappa")

        try:
            make_masks(field, 1.5)
            ok &= _check(False, "kappa outside [0, 1] raises")
        except ValueError:
            ok &= _check(True, "kappa outside [0, 1] raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_strategies():
    """Output pairings of the four CLG strategies"""
    print("\nTesting CLG strategies...")

    try:
        from dtsl.systems.consensus import ClgStrategy, clg, clg_strategy, plain_consensus, strategy_mask

        ok = True
        rng = np.random.default_rng(7)
        outputs = {name: _random_probs(rng, (1, 3, 6, 6), scale=0.5)
                   for name in ("student0", "student1", "teacher0", "teacher1")}
        kappa = 0.05

        pairings = [
            ("default", 0, ("student1", "teacher0")),
            ("default", 1, ("student0", "teacher1")),
            ("strategy1", 0, ("teacher1", "student1")),
            ("strategy1", 1, ("teacher0", "student0")),
            ("strategy2", 0, ("teacher0", "teacher1")),
        ]
        for strategy, group, (a, b) in pairings:
            got = clg_strategy(strategy, outputs, group, kappa)
            ok &= _check(np.array_equal(got, clg(outputs[a], outputs[b], kappa)),
                         f"{strategy} for student{group} uses {a} + {b}")

        got = clg_strategy(ClgStrategy.DEFAULT, outputs, 0, kappa, bypass_mask=True)
        ok &= _check(np.array_equal(got, plain_consensus(outputs["student1"], outputs["teacher0"])),
                     "bypass_mask gives plain consensus")

        mask = strategy_mask("default", outputs, 0, kappa)
        ok &= _check(mask.shape == (1, 6, 6) and 0.0 <= mask.fraction() <= 1.0, "strategy mask shape")

        agree = np.zeros((1, 3, 6, 6))
        agree[:, 2] = 1.0
        triple = {"teacher0": agree, "teacher1": agree.copy(), "student1": agree.copy(), "student0": agree}
        got = clg_strategy("strategy3", triple, 0, kappa)
        ok &= _check(np.all(got == 2), "strategy3 keeps a unanimous class")
        triple["student1"][0, :, 0, 0] = [0.0, 1.0, 0.0]
        got = clg_strategy("strategy3", triple, 0, kappa)
        ok &= _check(got[0, 0, 0] == 0 and np.all(got.ravel()[1:] == 2), "one dissenter zeroes its pixel")

        try:
            clg_strategy("default", {"student1": outputs["student1"]}, 0, kappa)
            ok &= _check(False, "missing output raises")
        except ValueError:
            ok &= _check(True, "missing output raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_losses():
    """Supervised, pace and regularization terms"""
    print("\nTesting losses...")

    try:
        from dtsl import tensor as T
        from dtsl.systems.consensus import clg
        from dtsl.systems.losses import (cross_entropy, dice_loss, l_pace, l_semi, l_sup, l_url, one_hot)
        from dtsl.tensor import Tensor

        ok = True
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 2, size=(1, 4, 4))

        ce = cross_entropy(np.zeros((1, 2, 4, 4)), labels).item()
        ok &= _check(abs(ce - math.log(2.0)) < 1e-12, "uniform logits give ln 2")
        ce = cross_entropy(one_hot(labels, 2) * 20.0, labels).item()
        ok &= _check(ce < 0.01, "confident correct logits give a small loss", f"{ce:.2e}")

        logits = rng.normal(size=(2, 3, 3, 3))
        labels3 = rng.integers(0, 3, size=(2, 3, 3))
        terms = []
        for b, y, x in np.ndindex(2, 3, 3):
            z = logits[b, :, y, x]
            terms.append(-(z[labels3[b, y, x]] - math.log(sum(math.exp(v) for v in z))))
        ok &= _check(abs(cross_entropy(logits, labels3).item() - sum(terms) / len(terms)) < 1e-12,
                     "cross_entropy matches the scalar formula")

        perfect = dice_loss(one_hot(labels3, 3), labels3).item()
        ok &= _check(perfect < 1e-4, "perfect prediction has no Dice loss", f"{perfect:.2e}")
        halves = np.zeros((1, 8, 8), dtype=np.int64)
        halves[:, :, 4:] = 1
        disjoint = dice_loss(one_hot(1 - halves, 2), halves).item()
        ok &= _check(disjoint > 0.999, "disjoint prediction approaches 1", f"{disjoint:.6f}")

        probs = T.softmax(logits, axis=1)
        expected = (cross_entropy(logits, labels3).item() + dice_loss(probs, labels3).item()) / 2.0
        ok &= _check(abs(l_sup(logits, labels3).item() - expected) < 1e-15, "l_sup = (CE + Dice) / 2")

        o1 = Tensor(_random_probs(rng, (1, 3, 4, 4)), requires_grad=True)
        o2 = Tensor(_random_probs(rng, (1, 3, 4, 4)), requires_grad=True)
        student = Tensor(rng.normal(size=(1, 3, 4, 4)), requires_grad=True)
        pseudo = clg(o1, o2, 0.5)
        T.backward(l_semi(T.softmax(student, axis=1), pseudo))
        ok &= _check(o1.grad is None and o2.grad is None and student.grad is not None,
                     "no gradient reaches the pseudo-label sources")

        uniform = np.full((1, 2, 4, 4), 0.5)
        peaked = np.zeros((1, 2, 4, 4))
        peaked[:, 0] = 1.0
        ok &= _check(abs(l_url(uniform, peaked, 0.05, 2).item()) < 1e-12, "uniform student has no URL loss")
        ok &= _check(l_url(peaked, peaked, 0.05, 2).item() == 0.0, "empty difference mask gives 0")

        student = np.full((1, 2, 1, 2), 0.5)
        student[0, :, 0, 0] = [1.0, 0.0]
        teacher = np.full((1, 2, 1, 2), 0.5)
        teacher[0, :, 0, 0] = [0.0, 1.0]
        ok &= _check(abs(l_url(student, teacher, 0.05, 2).item() - 1.0) < 1e-12,
                     "one confident inconsistent pixel costs 1 bit")

        s = _random_probs(rng, (2, 4, 6, 6))
        t = _random_probs(rng, (2, 4, 6, 6))
        ok &= _check(0.0 <= l_url(s, t, 0.0, 4).item() <= 2.0 + 1e-12, "URL bounded by log2 K")

        ok &= _check(l_pace(1.0, 2.0, 3.0, 4.0, 0.5, 0.25) == 3.25, "l_pace weighting")
        try:
            l_pace(1.0, 1.0, 1.0, 1.0, -0.1, 0.0)
            ok &= _check(False, "negative weight raises")
        except ValueError:
            ok &= _check(True, "negative weight raises")

        try:
            cross_entropy(np.zeros((1, 2, 4, 4)), np.full((1, 4, 4), 2))
            ok &= _check(False, "label out of range raises")
        except ValueError:
            ok &= _check(True, "label out of range raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_decomposition():
    """Agreement split of the mean-teacher objective"""
    print("\nTesting self-paced decomposition...")

    try:
        from dtsl.systems.losses import mt_decomposition_check, per_pixel_dice_surrogate

        rng = np.random.default_rng(9)
        worst = 0.0
        for _ in range(100):
            probs = _random_probs(rng, (1, 3, 4, 4), scale=1.0)
            y_gt = rng.integers(0, 3, size=(1, 4, 4))
            y_t = np.where(rng.uniform(size=(1, 4, 4)) < 0.5, y_gt, rng.integers(0, 3, size=(1, 4, 4)))
            lam = rng.uniform(0.0, 2.0)
            for loss_fn in (None, per_pixel_dice_surrogate):
                lhs, rhs = mt_decomposition_check(probs, y_gt, y_t, lam, loss_fn)
                worst = max(worst, abs(lhs - rhs))

        ok = _check(worst < 1e-12, "|lhs - rhs| on 100 instances", f"max {worst:.1e}")

        probs = _random_probs(rng, (1, 3, 4, 4), scale=1.0)
        y_gt = rng.integers(0, 3, size=(1, 4, 4))
        lhs, rhs = mt_decomposition_check(probs, y_gt, (y_gt + 1) % 3, 0.7)
        ok &= _check(lhs == rhs, "no agreement leaves the objective unsplit")
        lhs, rhs = mt_decomposition_check(probs, y_gt, y_gt, 0.7)
        ok &= _check(abs(lhs - rhs) < 1e-12, "full agreement weights every pixel by 1 + lambda")
        return ok
    except Exception as e:
        return _crash(e)


def test_ema_and_schedule():
    """EMA teacher update, Adam and the poly learning rate"""
    print("\nTesting EMA and optimizer...")

    try:
        from dtsl.models import init_params
        from dtsl.systems.ema import ema_update, make_teacher
        from dtsl.systems.optimizer import AdamOptimizer, lr_schedule
        from dtsl.tensor import Tensor

        ok = True
        student = init_params("plain", 2, 4, seed=0)
        for omega in (0.90, 0.95, 0.99):
            teacher = init_params("plain", 2, 4, seed=1).copy(requires_grad=False)
            start = teacher.copy()
            for _ in range(50):
                ema_update(teacher, student, omega)
            worst = max(np.max(np.abs(t.data - (omega ** 50 * t0.data + (1 - omega ** 50) * s.data)))
                        for (_, t), (_, t0), (_, s) in zip(teacher, start, student))
            ok &= _check(worst < 1e-10, f"closed form after 50 steps, omega={omega}", f"{worst:.1e}")

        teacher = init_params("plain", 2, 4, seed=1)
        ema_update(teacher, student, 0.0)
        ok &= _check(all(np.array_equal(t.data, s.data) for (_, t), (_, s) in zip(teacher, student)),
                     "omega=0 copies the student")
        before = teacher.copy()
        ema_update(teacher, init_params("plain", 2, 4, seed=9), 1.0)
        ok &= _check(all(np.array_equal(t.data, b.data) for (_, t), (_, b) in zip(teacher, before)),
                     "omega=1 freezes the teacher")
        ok &= _check(all(not t.requires_grad for _, t in teacher), "teacher never takes gradients")
        copy = make_teacher(student)
        ok &= _check(all(np.array_equal(t.data, s.data) and t is not s
                         for (_, t), (_, s) in zip(copy, student)), "make_teacher copies")

        try:
            ema_update(init_params("residual", 2, 4), student, 0.9)
            ok &= _check(False, "incompatible layouts raise")
        except ValueError:
            ok &= _check(True, "incompatible layouts raise")

        eta0 = 1e-3
        ok &= _check(lr_schedule(eta0, 0, 100) == eta0, "lr(0) = eta0")
        ok &= _check(lr_schedule(eta0, 100, 100) == 0.0, "lr(max) = 0")
        ok &= _check(abs(lr_schedule(eta0, 50, 100) - eta0 * 0.5 ** 0.9) < 1e-12, "lr(max/2) = eta0 * 0.5^0.9")
        try:
            lr_schedule(eta0, 101, 100)
            ok &= _check(False, "iteration past max raises")
        except ValueError:
            ok &= _check(True, "iteration past max raises")

        p = Tensor([1.0], requires_grad=True)
        adam = AdamOptimizer([p], lr=0.1)
        p.grad = np.array([2.0])
        adam.step()
        ok &= _check(abs(p.data[0] - 0.9) < 1e-8 and adam.t == 1, "first Adam step moves by lr")
        try:
            AdamOptimizer([Tensor([1.0])])
            ok &= _check(False, "frozen parameter rejected")
        except ValueError:
            ok &= _check(True, "frozen parameter rejected")
        return ok
    except Exception as e:
        return _crash(e)


def test_ema_convexity():
    """Each teacher value lands between its old value and the student's"""
    print("\nTesting EMA convexity...")

    try:
        from dtsl.models import init_params
        from dtsl.systems.ema import ema_update

        rng = np.random.default_rng(12)
        student = init_params("residual", 3, 4, seed=2)
        teacher = init_params("residual", 3, 4, seed=3).copy(requires_grad=False)
        outside = 0
        for _ in range(20):
            omega = float(rng.choice(np.round(np.arange(0.90, 1.0, 0.01), 2)))
            for _, s in student:
                s.data = s.data + rng.normal(0.0, 0.1, size=s.shape)
            before = teacher.copy()
            ema_update(teacher, student, omega)
            for (_, t), (_, t0), (_, s) in zip(teacher, before, student):
                lo = np.minimum(t0.data, s.data)
                hi = np.maximum(t0.data, s.data)
                slack = 1e-15 * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
                outside += int(np.sum((t.data < lo - slack) | (t.data > hi + slack)))
        return _check(outside == 0, "teacher stays within [old, student] over 20 updates",
                      f"{outside} values outside")
    except Exception as e:
        return _crash(e)


def test_ema_fixpoint():
    """Updating a teacher that already equals its student is a no-op"""
    print("\nTesting EMA fixpoint...")

    try:
        from dtsl.models import init_params
        from dtsl.systems.ema import ema_update, make_teacher

        ok = True
        student = init_params("plain", 4, 4, seed=5)
        for omega in (0.0, 0.5, 0.95, 0.99, 1.0):
            teacher = make_teacher(student)
            ema_update(teacher, student, omega)
            worst = max(float(np.max(np.abs(t.data - s.data) / np.maximum(1.0, np.abs(s.data))))
                        for (_, t), (_, s) in zip(teacher, student))
            ok &= _check(worst <= 1e-15, f"teacher == student unchanged, omega={omega}", f"{worst:.1e}")
        return ok
    except Exception as e:
        return _crash(e)


def _boundary_oracle(mask):
    height, width = mask.shape
    edge = []
    for y in range(height):
        for x in range(width):
            if not mask[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ny, nx = y + dy, x + dx
                if ny < 0 or ny >= height or nx < 0 or nx >= width or not mask[ny, nx]:
                    edge.append((y, x))
                    break
    return np.array(edge, dtype=np.float64)


def _random_mask(rng, size=32):
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        y0, x0 = rng.integers(0, size - 2, size=2)
        h, w = rng.integers(2, size // 2, size=2)
        mask[y0:y0 + h, x0:x0 + w] = True
    mask ^= rng.uniform(size=(size, size)) < 0.03
    if not mask.any():
        mask[size // 2, size // 2] = True
    return mask


def test_metrics():
    """DSC, Jaccard, 95HD and ASD against brute force"""
    print("\nTesting metrics...")

    try:
        from dtsl.systems.metrics import asd, dsc, evaluate_labels, hd95, jaccard

        ok = True
        rng = np.random.default_rng(10)
        exact, close, identity = True, 0.0, 0.0
        for _ in range(200):
            a, b = _random_mask(rng), _random_mask(rng)
            inter = int(np.sum(a & b))
            exact &= dsc(a, b) == 100.0 * 2.0 * inter / (int(a.sum()) + int(b.sum()))
            exact &= jaccard(a, b) == 100.0 * inter / int(np.sum(a | b))

            ea, eb = _boundary_oracle(a), _boundary_oracle(b)
            pair = np.sqrt(((ea[:, None, :] - eb[None, :, :]) ** 2).sum(axis=-1))
            pooled = np.sort(np.concatenate([pair.min(axis=1), pair.min(axis=0)]))
            want_hd = pooled[math.ceil(0.95 * len(pooled)) - 1]
            close = max(close, abs(hd95(a, b) - want_hd), abs(asd(a, b) - pooled.mean()))

            d, j = dsc(a, b) / 100.0, jaccard(a, b) / 100.0
            identity = max(identity, abs(j - d / (2.0 - d)))
        ok &= _check(exact, "dsc / jaccard exact on 200 pairs")
        ok &= _check(close < 1e-9, "hd95 / asd match the all-pairs oracle", f"max diff {close:.1e}")
        ok &= _check(identity < 1e-12, "J = D / (2 - D)")

        a = np.zeros((8, 8), dtype=bool)
        b = np.zeros((8, 8), dtype=bool)
        a[0, 0] = True
        b[3, 4] = True
        ok &= _check(hd95(a, b) == 5.0 and asd(a, b) == 5.0, "3-4-5 pixels")
        ok &= _check(hd95(a, np.zeros_like(a)) is None and asd(np.zeros_like(a), b) is None,
                     "empty mask leaves distances undefined")
        ok &= _check(dsc(np.zeros_like(a), np.zeros_like(a)) == 100.0, "both empty give DSC 100")

        gt = np.zeros((2, 8, 8), dtype=np.int64)
        gt[:, 2:6, 2:6] = 1
        gt[:, 3:5, 3:5] = 2
        pred = gt.copy()
        pred[1][pred[1] == 2] = 1  # class 2 missing in the second case
        report = evaluate_labels(pred, gt, 3)
        per_class = report.per_class()
        ok &= _check(report.case_count == 2 and per_class[1]["dsc"] < 100.0, "per-class report")
        ok &= _check(per_class[2]["hd95"] == 0.0, "undefined cases are skipped in the mean")
        mean = report.foreground_mean()
        ok &= _check(abs(mean["dsc"] - (per_class[1]["dsc"] + per_class[2]["dsc"]) / 2.0) < 1e-12,
                     "foreground mean excludes background")
        return ok
    except Exception as e:
        return _crash(e)


def _pooled_oracle(a, b):
    ea, eb = _boundary_oracle(a), _boundary_oracle(b)
    pair = np.sqrt(((ea[:, None, :] - eb[None, :, :]) ** 2).sum(axis=-1))
    return np.sort(np.concatenate([pair.min(axis=1), pair.min(axis=0)])), pair


def test_metric_symmetry():
    """Swapping prediction and ground truth changes nothing"""
    print("\nTesting metric symmetry...")

    try:
        from dtsl.systems.metrics import asd, dsc, hd95, jaccard

        rng = np.random.default_rng(21)
        worst = 0.0
        for _ in range(100):
            a, b = _random_mask(rng), _random_mask(rng)
            for metric in (dsc, jaccard, hd95, asd):
                worst = max(worst, abs(metric(a, b) - metric(b, a)))
        return _check(worst < 1e-12, "dsc, jaccard, hd95, asd symmetric on 100 pairs", f"max diff {worst:.1e}")
    except Exception as e:
        return _crash(e)


def test_metric_translation():
    """Shifting both masks together leaves every metric unchanged"""
    print("\nTesting metric translation invariance...")

    try:
        from dtsl.systems.metrics import asd, dsc, hd95, jaccard

        rng = np.random.default_rng(22)
        worst = 0.0
        for _ in range(50):
            a = np.zeros((48, 48), dtype=bool)
            b = np.zeros((48, 48), dtype=bool)
            a[8:40, 8:40] = _random_mask(rng)
            b[8:40, 8:40] = _random_mask(rng)
            dy, dx = rng.integers(-6, 7, size=2)
            moved_a = np.roll(a, (dy, dx), axis=(0, 1))
            moved_b = np.roll(b, (dy, dx), axis=(0, 1))
            for metric in (dsc, jaccard, hd95, asd):
                worst = max(worst, abs(metric(a, b) - metric(moved_a, moved_b)))
        return _check(worst < 1e-12, "all four metrics unchanged under a joint shift", f"max diff {worst:.1e}")
    except Exception as e:
        return _crash(e)


def test_concentric_squares():
    """ASD and HD95 of a square nested one pixel inside another"""
    print("\nTesting concentric squares...")

    try:
        from dtsl.systems.metrics import asd, hd95

        ok = True
        outer = np.zeros((20, 20), dtype=bool)
        inner = np.zeros((20, 20), dtype=bool)
        outer[5:15, 5:15] = True
        inner[7:13, 7:13] = True  # one free row / column between the two boundaries

        pooled, pair = _pooled_oracle(outer, inner)
        ok &= _check(abs(asd(outer, inner) - pooled.mean()) < 1e-12, "asd matches the all-pairs oracle",
                     f"{asd(outer, inner):.6f} vs {pooled.mean():.6f}")
        ok &= _check(hd95(outer, inner) == pooled[math.ceil(0.95 * len(pooled)) - 1],
                     "hd95 matches the all-pairs oracle")
        ok &= _check(asd(outer, inner) <= pair.max(), "asd bounded by the largest pairwise distance")
        ok &= _check(pooled.min() == 2.0, "closest boundary pixels are two apart")
        return ok
    except Exception as e:
        return _crash(e)


def test_models():
    """Network shapes, determinism and initialization"""
    print("\nTesting networks...")

    try:
        from dtsl.models import ArchitectureKind, create_network, forward, predict_probs

        ok = True
        rng = np.random.default_rng(11)
        images = rng.uniform(size=(2, 1, 16, 16))
        outputs = {}
        for kind in ArchitectureKind:
            net = create_network(kind, 3, 4)
            params = net.init_params(0)
            logits = net.forward(params, images)
            ok &= _check(logits.shape == (2, 3, 16, 16) and np.all(np.isfinite(logits.data)),
                         f"{kind.value}: logits shape")
            again = net.init_params(0)
            ok &= _check(all(np.array_equal(a.data, b.data) for (_, a), (_, b) in zip(params, again)),
                         f"{kind.value}: same seed, same parameters")
            other = net.init_params(1)
            ok &= _check(not all(np.array_equal(a.data, b.data) for (_, a), (_, b) in zip(params, other)),
                         f"{kind.value}: other seed differs")
            bounded = all(np.all(t.data == 0.0) if name.endswith(".bias")
                          else np.all(np.abs(t.data) <= np.sqrt(6.0 / np.prod(t.shape[1:])))
                          for name, t in params)
            ok &= _check(bounded, f"{kind.value}: fan-in bounded init")
            ok &= _check(np.array_equal(forward(params, images).data, logits.data), f"{kind.value}: pure forward")
            probs = predict_probs(params, images)
            ok &= _check(np.max(np.abs(probs.sum(axis=1) - 1.0)) < 1e-12, f"{kind.value}: probabilities")
            outputs[kind] = logits.data

        ok &= _check(not np.allclose(outputs[ArchitectureKind.PLAIN], outputs[ArchitectureKind.RESIDUAL]),
                     "plain and residual differ")

        net = create_network("plain", 3, 4)
        try:
            net.forward(net.init_params(0), np.zeros((1, 1, 10, 12)))
            ok &= _check(False, "size not divisible by 4 raises")
        except ValueError:
            ok &= _check(True, "size not divisible by 4 raises")
        try:
            create_network("plain", 1)
            ok &= _check(False, "K < 2 raises")
        except ValueError:
            ok &= _check(True, "K < 2 raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_checkpoints():
    """Checkpoint round trip and corruption detection"""
    print("\nTesting checkpoints...")

    try:
        from dtsl.models import init_params, load_checkpoint, save_checkpoint

        ok = True
        folder = _temp_dir()
        params = init_params("residual", 3, 4, seed=2)
        path = save_checkpoint(params, os.path.join(folder, "model.ckpt"))
        loaded = load_checkpoint(path)
        ok &= _check(loaded.is_compatible(params), "layout survives")
        ok &= _check(all(np.array_equal(a.data, b.data) for (_, a), (_, b) in zip(params, loaded)),
                     "values are bit-exact")

        with open(path, "rb") as f:
            raw = f.read()
        for label, data in [("truncated", raw[:-8]), ("trailing bytes", raw + b"\0" * 8),
                            ("bad magic", b"XXXX" + raw[4:]),
                            ("missing header field", raw.replace(b"num_classes=3\n", b"", 1)),
                            ("header only", b"DTSL-CHECKPOINT 1\nEND\n")]:
            broken = os.path.join(folder, "broken.ckpt")
            with open(broken, "wb") as f:
                f.write(data)
            try:
                load_checkpoint(broken)
                ok &= _check(False, f"{label} file rejected")
            except ValueError:
                ok &= _check(True, f"{label} file rejected")
        return ok
    except Exception as e:
        return _crash(e)


def test_synthetic():
    """Corpus generation and splitting"""
    print("\nTesting synthetic corpus...")

    try:
        from dtsl.data.synthetic import generate, inside_ellipse, split

        ok = True
        first = generate(4, 6, 32, 32, 4, 0.08)
        second = generate(4, 6, 32, 32, 4, 0.08)
        ok &= _check(all(np.array_equal(a.image, b.image) and np.array_equal(a.label, b.label)
                         for a, b in zip(first, second)), "deterministic per seed")
        ok &= _check(first[0].image.shape == (1, 32, 32) and first[0].label.shape == (32, 32), "shapes")
        ok &= _check(all(s.image.min() >= 0.0 and s.image.max() <= 1.0 for s in first), "intensities in [0, 1]")

        clean = generate(4, 6, 32, 32, 4, 0.0)
        flat = all(np.unique(s.image[0][s.label == k]).size == 1 for s in clean for k in range(4))
        ok &= _check(flat, "noise 0 gives one gray level per class")

        ys, xs = np.mgrid[0:32, 0:32].astype(np.float64)
        contained, majority = True, True
        for s in clean:
            outer = inside_ellipse(ys, xs, s.shapes["outer"])
            inner = inside_ellipse(ys, xs, s.shapes["inner"])
            contained &= bool(np.all(outer[inner])) and bool(np.all(outer[s.label == 2]))
            contained &= 0.4 <= s.shapes["inner_scale"] <= 0.6
            counts = np.bincount(s.label.ravel(), minlength=4)
            majority &= bool(counts[0] > s.label.size / 2 and np.all(counts[1:] > 0))
        ok &= _check(contained, "inner structure stays inside the outer one")
        ok &= _check(majority, "background majority, every class present")

        for label, call in [("size not divisible by 4", lambda: generate(0, 1, 30, 32, 4, 0.0)),
                            ("K = 7", lambda: generate(0, 1, 32, 32, 7, 0.0))]:
            try:
                call()
                ok &= _check(False, f"{label} raises")
            except ValueError:
                ok &= _check(True, f"{label} raises")

        samples = generate(1, 20, 16, 16, 3, 0.05)
        data = split(samples, 0.1, 0.2, 1)
        ok &= _check(data.counts() == {"labeled": 2, "unlabeled": 14, "test": 4}, "split sizes",
                     str(data.counts()))
        ids = data.indices()
        every = ids["labeled"] + ids["unlabeled"] + ids["test"]
        ok &= _check(sorted(every) == list(range(20)), "split is a disjoint cover")
        ok &= _check(split(samples, 0.1, 0.2, 1).indices() == ids, "split is deterministic")
        try:
            split(samples, 0.0, 0.2, 1)
            ok &= _check(False, "labeled fraction 0 raises")
        except ValueError:
            ok &= _check(True, "labeled fraction 0 raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_settings():
    """Config dataclasses, key=value files and sweep value parsing"""
    print("\nTesting settings...")

    try:
        from config import SWEEP_GRIDS
        from dtsl.models import ArchitectureKind
        from dtsl.settings import CorpusConfig, TrainConfig, TrainMode, load_config_file, write_key_values
        from dtsl.sweeps import default_values, parse_values
        from dtsl.systems.consensus import ClgStrategy
        from dtsl.trainer import write_manifest

        ok = True
        folder = _temp_dir()
        cfg = TrainConfig(mode=TrainMode.MT, kappa=0.07, omega=0.9, eta0=3e-4, strategy=ClgStrategy.STRATEGY2)
        corpus = CorpusConfig(image_size=32, labeled_fraction=0.2, data_seed=5)
        path = write_manifest(os.path.join(folder, "manifest.txt"), cfg, corpus)
        ok &= _check(load_config_file(path) == (cfg, corpus), "manifest round trip")
        ok &= _check(TrainMode.parse("SemiDTSL") is TrainMode.SEMI and TrainMode.parse("plain_dtsl")
                     is TrainMode.PLAIN_DTSL, "mode aliases")

        bad = [("unknown key", [("learning_rate", "0.1")]),
               ("bad number", [("kappa", "high")])]
        for label, pairs in bad:
            try:
                load_config_file(write_key_values(os.path.join(folder, "bad.txt"), pairs))
                ok &= _check(False, f"{label} raises")
            except ValueError:
                ok &= _check(True, f"{label} raises")

        with open(os.path.join(folder, "broken.txt"), "w") as f:
            f.write("# comment\nkappa 0.1\n")
        try:
            load_config_file(os.path.join(folder, "broken.txt"))
            ok &= _check(False, "line without '=' raises")
        except ValueError as e:
            ok &= _check(":2:" in str(e), "line without '=' raises with its line number")

        for label, config in [("kappa > 1", TrainConfig(kappa=1.5)),
                              ("same architecture", TrainConfig(arch1=ArchitectureKind.PLAIN))]:
            try:
                config.validate()
                ok &= _check(False, f"{label} rejected")
            except ValueError:
                ok &= _check(True, f"{label} rejected")
        TrainConfig(arch1=ArchitectureKind.PLAIN, allow_same_arch=True).validate()
        TrainConfig(mode=TrainMode.MT, arch1=ArchitectureKind.PLAIN).validate()
        ok &= _check(True, "same architecture allowed on request and in one-group modes")

        ok &= _check(parse_values("0.90..0.99", "omega") == SWEEP_GRIDS["omega"], "0.90..0.99 gives 10 values")
        ok &= _check(parse_values("0.01,0.05..0.07", "kappa") == [0.01, 0.05, 0.06, 0.07], "mixed list")
        ok &= _check(parse_values("0..1:0.5", "alpha") == [0.0, 0.5, 1.0], "explicit step")
        ok &= _check(default_values("alpha", "alpha_small") == [0.05, 0.10, 0.15, 0.20, 0.30]
                     and default_values("beta", "beta_small") == [0.01, 0.05, 0.10, 0.20, 0.30],
                     "small alpha / beta grids")
        ok &= _check(parse_values("default,strategy3", "strategy") == [ClgStrategy.DEFAULT, ClgStrategy.STRATEGY3],
                     "strategy names")
        for label, text in [("empty list", ""), ("backwards range", "0.2..0.1")]:
            try:
                parse_values(text, "kappa")
                ok &= _check(False, f"{label} raises")
            except ValueError:
                ok &= _check(True, f"{label} raises")
        return ok
    except Exception as e:
        return _crash(e)


def test_training():
    """Short seeded runs: determinism and mode wiring"""
    print("\nTesting training...")

    try:
        from dtsl import tensor as T
        from dtsl.systems.losses import LossBreakdown, l_sup
        from dtsl.settings import TrainMode
        from dtsl.trainer import Trainer, TrainerState, _pace_terms, build_corpus, draw_batch, run_training

        ok = True
        cfg, corpus = _tiny_configs("semi")
        data = build_corpus(corpus, cfg.num_classes)

        runs = [_temp_dir(), _temp_dir()]
        reports = [run_training(cfg, data, run_dir, corpus, quiet=True) for run_dir in runs]
        for name in ("losses.csv", "probe.csv", "metrics.csv", "manifest.txt", "checkpoints/student0.ckpt"):
            with open(os.path.join(runs[0], name), "rb") as f:
                a = f.read()
            with open(os.path.join(runs[1], name), "rb") as f:
                b = f.read()
            ok &= _check(a == b, f"{name} bit-identical across runs")

        report = reports[0]
        ok &= _check(report.iterations == cfg.max_iter and len(report.losses) == cfg.max_iter,
                     "one loss row per iteration")
        ok &= _check([row["iter"] for row in report.probe] == [0, 3, 6], "probe at 0, every snapshot, and the end")
        worst = max(abs(row["pace"] - (cfg.alpha * row["semi"] + cfg.beta * row["url"])) for row in report.losses)
        ok &= _check(worst < 1e-12, "pace = alpha * semi + beta * url on every row")
        for name in ("agreement_0000.pgm", "agreement_0006.png", "checkpoints/teacher1.ckpt",
                     "debug/snapshots/snapshot_000006.json"):
            ok &= _check(os.path.exists(os.path.join(runs[0], name)), f"{name} written")
        ok &= _check(set(report.metrics) == {"student0", "teacher0", "student1", "teacher1", "ensemble"},
                     "metrics for every model plus the ensemble")

        trainer = Trainer(cfg, data, quiet=True)
        trainer.run()
        ok &= _check(not trainer.state.optimizer_owns_teacher(), "optimizers never hold teacher parameters")
        ok &= _check(all(t.grad is None for g in trainer.state.groups for _, t in g.teacher),
                     "teachers carry no gradients")

        state = TrainerState(cfg)
        images, labels = draw_batch(state.rng_labeled, data.labeled, cfg.labeled_batch)
        logits = [g.student_logits(images) for g in state.groups]
        losses = [l_sup(z, labels) for z in logits]
        _pace_terms(state, cfg, images, logits, losses, LossBreakdown(cfg.alpha, cfg.beta), True, {})
        T.backward(losses[0])
        ok &= _check(all(t.grad is None for _, t in state.groups[1].student)
                     and all(t.grad is not None for _, t in state.groups[0].student),
                     "group 0 loss never reaches group 1")

        semi_cfg, _ = _tiny_configs("semi", alpha=0.0, beta=0.0, max_iter=10)
        plain_cfg, _ = _tiny_configs("plain", max_iter=10)
        semi, plain = Trainer(semi_cfg, data, quiet=True), Trainer(plain_cfg, data, quiet=True)
        semi.run()
        plain.run()
        same = all(np.array_equal(a.data, b.data)
                   for gs, gp in zip(semi.state.groups, plain.state.groups)
                   for (_, a), (_, b) in list(zip(gs.student, gp.student)) + list(zip(gs.teacher, gp.teacher)))
        ok &= _check(same, "alpha = beta = 0 semi run equals the plain run")

        strict_cfg, _ = _tiny_configs("semi", kappa=0.0)
        strict = run_training(strict_cfg, data, quiet=True)
        finite = all(math.isfinite(v) for row in strict.losses for v in row.values())
        ok &= _check(finite and all(row["cons_fraction"] == 0.0 for row in strict.losses),
                     "kappa = 0 trains without NaN and with no consistent pixels")

        mt_cfg, _ = _tiny_configs("mt")
        mt = Trainer(mt_cfg, data, quiet=True)
        mt_report = mt.run()
        ok &= _check(len(mt.state.groups) == 1 and "student1" not in mt_report.metrics, "mt runs one group")
        ok &= _check(mt_cfg.beta > 0.0 and all(row["url"] == 0.0 for row in mt_report.losses),
                     "mt adds no URL term even with the default beta")
        ok &= _check(TrainMode.SUPERVISED_MT.uses_url and not TrainMode.MT.uses_url,
                     "only supervised-mt keeps URL among single-group modes")
        sup_cfg, _ = _tiny_configs("supervised")
        sup = run_training(sup_cfg, data, quiet=True)
        ok &= _check(all(row["total_u"] == 0.0 for row in sup.losses), "supervised modes skip unlabeled data")
        return ok
    except Exception as e:
        return _crash(e)


def test_debug_tools():
    """Debugger artifacts and the run analyzer"""
    print("\nTesting debug tools...")

    try:
        import json
        import debug
        from dtsl.trainer import Trainer, build_corpus

        ok = True
        cfg, corpus = _tiny_configs("semi", max_iter=3)
        run_dir = _temp_dir()
        trainer = Trainer(cfg, build_corpus(corpus, cfg.num_classes), run_dir, corpus, quiet=True)
        trainer.run()

        snapshot = debug.load_snapshot(os.path.join(run_dir, "debug", "snapshots", "snapshot_000003.json"))
        ok &= _check(snapshot["phase"] == "DONE" and len(snapshot["groups"]) == 2, "snapshot contents")
        ok &= _check(snapshot["groups"][0]["optimizer_steps"] == 3, "optimizer steps recorded")

        field = np.array([[np.nan, 0.01], [0.5, np.inf]])
        path = trainer.debugger.dump_divergence({"labeled_group0": field}, "test dump")
        with open(path) as f:
            dump = json.load(f)
        stats = dump["fields"]["labeled_group0"]
        ok &= _check(stats["nan_count"] == 1 and stats["inf_count"] == 1, "divergence field stats")
        ok &= _check(os.path.exists(os.path.join(run_dir, "debug", "divergence", "labeled_group0_000003.pgm")),
                     "divergence field image")

        run = debug.load_run(run_dir)
        ok &= _check(len(run["losses"]) == 3 and run["manifest"]["mode"] == "semi", "analyzer loads the run")
        ok &= _check(debug.main([run_dir]) == 0, "analyzer runs")
        return ok
    except Exception as e:
        return _crash(e)


def test_images():
    """PGM round trip and PNG previews"""
    print("\nTesting image output...")

    try:
        import pygame
        from dtsl.ui.snapshots import agreement_palette, read_pgm, save_png, tile, write_pgm

        ok = True
        folder = _temp_dir()
        gray = np.random.default_rng(12).integers(0, 256, size=(5, 7)).astype(np.uint8)
        path = write_pgm(os.path.join(folder, "a.pgm"), gray)
        ok &= _check(np.array_equal(read_pgm(path), gray), "PGM round trip")

        panel = tile([gray, gray], gap=1)
        ok &= _check(panel.shape == (5, 15), "tile with gap")

        png = save_png(os.path.join(folder, "a.png"), gray, scale=2, palette=agreement_palette())
        surface = pygame.image.load(png)
        ok &= _check(surface.get_size() == (14, 10), "PNG preview size")
        return ok
    except Exception as e:
        return _crash(e)


def test_cli():
    """Command-line exit codes and artifacts"""
    print("\nTesting CLI...")

    try:
        from dtsl.ui.cli import UsageError, build_parser, main, resolve_configs
        from dtsl.ui.snapshots import read_pgm

        ok = True
        ok &= _check(main(["train"]) == 2, "missing --out-dir exits 2")
        out = _temp_dir()
        ok &= _check(main(["sweep", "--param", "kappa", "--values", "", "--out-dir", out, "--quiet"]) == 2,
                     "empty --values exits 2")
        ok &= _check(main(["train", "--out-dir", out, "--quiet", "--kappa", "2"]) == 2, "kappa 2 exits 2")

        args = build_parser().parse_args(["train", "--out-dir", out, "--seed", "3"])
        train, corpus = resolve_configs(args, environ={"DTSL_SEED": "7"})
        ok &= _check(train.seed == 7 and corpus.data_seed == 7, "DTSL_SEED overrides --seed")
        try:
            resolve_configs(args, environ={"DTSL_SEED": "seven"})
            ok &= _check(False, "bad DTSL_SEED rejected")
        except UsageError:
            ok &= _check(True, "bad DTSL_SEED rejected")

        run_dir = os.path.join(out, "run")
        ok &= _check(main(["train", "--out-dir", run_dir, "--quiet"] + _tiny_flags()) == 0, "train exits 0")
        ok &= _check(main(["eval", "--run-dir", run_dir, "--quiet"]) == 0, "eval exits 0")
        with open(os.path.join(run_dir, "metrics.csv")) as f:
            trained = f.read()
        with open(os.path.join(run_dir, "metrics_eval.csv")) as f:
            evaluated = f.read()
        ok &= _check(trained == evaluated, "eval reproduces metrics.csv")
        ok &= _check(main(["eval", "--run-dir", out, "--quiet"]) == 2, "eval without a manifest exits 2")

        sweep_dir = os.path.join(out, "sweep")
        code = main(["sweep", "--param", "kappa", "--values", "0.0,0.05", "--jobs", "2",
                     "--out-dir", sweep_dir, "--quiet"] + _tiny_flags())
        with open(os.path.join(sweep_dir, "sweep.csv")) as f:
            lines = f.read().strip().split("\n")
        ok &= _check(code == 0 and len(lines) == 3 and ",ok," in lines[1], "sweep writes one row per value")

        data_dir = os.path.join(out, "data")
        code = main(["gen-data", "--out-dir", data_dir, "--count", "3", "--image-size", "16",
                     "--num-classes", "3", "--quiet"])
        label = read_pgm(os.path.join(data_dir, "label_0002.pgm"))
        ok &= _check(code == 0 and label.shape == (16, 16) and set(np.unique(label)) <= {0, 127, 254},
                     "gen-data writes image/label pairs")
        ok &= _check(os.path.exists(os.path.join(data_dir, "corpus.txt")), "gen-data writes its corpus file")
        return ok
    except Exception as e:
        return _crash(e)


def test_ablation():
    """Five ablation rows on a tiny corpus"""
    print("\nTesting ablation...")

    try:
        from config import ABLATION_ROWS
        from dtsl.sweeps import run_ablation

        cfg, corpus = _tiny_configs("semi", max_iter=3)
        out = _temp_dir()
        rows = run_ablation(cfg, corpus, [1], out, jobs=2, quiet=True)
        ok = _check([row["row"] for row in rows] == [r[0] for r in ABLATION_ROWS], "row order")
        ok &= _check(all(row["status"] == "ok" for row in rows), "every row trained")
        ok &= _check(os.path.exists(os.path.join(out, "ablation.csv")), "ablation.csv written")
        ok &= _check(rows[-1]["check"] in ("ok", "below Plain DTSL"), "direction flagged")
        return ok
    except Exception as e:
        return _crash(e)


# Slow checks: full-size runs on the 64x64 corpus

SLOW_SEEDS = [1, 2, 3]
SLOW_ITER = 2000


def test_agreement_expansion():
    """The consistent region grows as training proceeds"""
    print("\nTesting consistent-region expansion (slow)...")

    try:
        from dtsl.settings import CorpusConfig, TrainConfig, TrainMode
        from dtsl.trainer import build_corpus, run_training

        early, late = [], []
        for seed in SLOW_SEEDS:
            cfg = TrainConfig(mode=TrainMode.SEMI, max_iter=SLOW_ITER, seed=seed).validate()
            corpus = CorpusConfig(data_seed=seed)
            report = run_training(cfg, build_corpus(corpus, cfg.num_classes), quiet=True)
            early.append(report.probe_value(200))
            late.append(report.probe_value(SLOW_ITER))
        e, l = float(np.median(early)), float(np.median(late))
        return _check(l > e, "median consistent fraction at 2000 exceeds 200", f"{e:.3f} -> {l:.3f}")
    except Exception as e:
        return _crash(e)


def test_mode_ordering():
    """Plain < supervised DTSL <= semi-supervised DTSL"""
    print("\nTesting mode ordering (slow)...")

    try:
        from dtsl.settings import CorpusConfig, TrainConfig, TrainMode
        from dtsl.trainer import build_corpus, run_training

        scores = {mode: [] for mode in (TrainMode.PLAIN, TrainMode.SUPERVISED, TrainMode.SEMI)}
        for seed in SLOW_SEEDS:
            corpus = CorpusConfig(data_seed=seed)
            data = build_corpus(corpus, TrainConfig().num_classes)
            for mode in scores:
                cfg = TrainConfig(mode=mode, max_iter=SLOW_ITER, seed=seed).validate()
                scores[mode].append(run_training(cfg, data, quiet=True).headline()["dsc"])
        plain, sup, semi = (float(np.median(scores[m])) for m in scores)
        detail = f"plain {plain:.2f}, supervised {sup:.2f}, semi {semi:.2f}"
        ok = _check(plain < sup <= semi, "plain < supervised <= semi", detail)
        ok &= _check(sup - plain >= 1.0, "pace regulator adds at least one DSC point", detail)
        return ok
    except Exception as e:
        return _crash(e)


def test_ablation_direction():
    """CLG + URL does not fall below Plain DTSL"""
    print("\nTesting ablation direction (slow)...")

    try:
        from dtsl.settings import CorpusConfig, TrainConfig
        from dtsl.sweeps import run_ablation

        rows = run_ablation(TrainConfig(max_iter=SLOW_ITER).validate(), CorpusConfig(), SLOW_SEEDS, quiet=True)
        by_label = {row["row"]: row for row in rows}
        return _check(by_label["CLG + URL"]["check"] == "ok", "CLG + URL >= Plain DTSL",
                      f"{by_label['CLG + URL']['dsc']} vs {by_label['Plain DTSL']['dsc']}")
    except Exception as e:
        return _crash(e)


def main():
    slow = "--slow" in sys.argv[1:]

    print("=" * 50)
    print("  DTSL - Validation")
    print("=" * 50)
    print()

    all_passed = True
    try:
        all_passed &= test_imports()
        all_passed &= test_elementwise()
        all_passed &= test_conv2d()
        all_passed &= test_softmax()
        all_passed &= test_backward()
        all_passed &= test_gradients()
        all_passed &= test_loss_gradients()
        all_passed &= test_divergences()
        all_passed &= test_clg()
        all_passed &= test_strategies()
        all_passed &= test_losses()
        all_passed &= test_decomposition()
        all_passed &= test_ema_and_schedule()
        all_passed &= test_ema_convexity()
        all_passed &= test_ema_fixpoint()
        all_passed &= test_metrics()
        all_passed &= test_metric_symmetry()
        all_passed &= test_metric_translation()
        all_passed &= test_concentric_squares()
        all_passed &= test_models()
        all_passed &= test_checkpoints()
        all_passed &= test_synthetic()
        all_passed &= test_settings()
        all_passed &= test_training()
        all_passed &= test_debug_tools()
        all_passed &= test_images()
        all_passed &= test_cli()
        all_passed &= test_ablation()
        if slow:
            all_passed &= test_agreement_expansion()
            all_passed &= test_mode_ordering()
            all_passed &= test_ablation_direction()
    finally:
        for path in TEMP_DIRS:
            shutil.rmtree(path, ignore_errors=True)

    print()
    print("=" * 50)
    if all_passed:
        print("  ALL TESTS PASSED!")
    else:
        print("  SOME TESTS FAILED!")
    print("=" * 50)

    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
