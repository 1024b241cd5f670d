"""Built-in verification suite run by ``cxv selftest``.

Gradient checks, oracle equivalence and controller checks, all at 64-bit.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import attention as attn
from . import ops, oracles
from .attention import AttentionConfig, AttentionKind
from .gradcheck import grad_check
from .model import ModelConfig, build_model
from .optim import Decision, DualOptController
from .tensor import Tensor, precision


def tiny_model_config(kind: AttentionKind = AttentionKind.NYSTROMFORMER, **kw) -> ModelConfig:
    """1-layer, d=8, 4x4-input configuration used for end-to-end gradient checks."""
    attn_cfg = AttentionConfig(kind=kind, model_dim=8, heads=2, landmarks=4, pinv_iterations=6,
                               dropout_p=0.0, conv_qkv=kw.pop("conv_qkv", False),
                               head_dim=kw.pop("head_dim", None))
    base = dict(attention=attn_cfg, layers=1, embed_conv_layers=2, classes=3, image_size=(4, 4), dropout_p=0.0)
    base.update(kw)
    return ModelConfig(**base)


def model_grad_error(model, x: np.ndarray, labels, h: float = 1e-5) -> float:
    """Worst grad_check error over the input and every parameter of ``model``."""
    model.train()
    xt = Tensor(x)
    worst = grad_check(lambda t: ops.cross_entropy(model(t), labels), xt, h)
    for _, p in model.named_parameters():
        worst = max(worst, grad_check(lambda _p: ops.cross_entropy(model(xt), labels), p, h))
    return worst


def _primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, np.ndarray]]:
    u = lambda *s: rng.uniform(-1, 1, s)  # noqa: E731
    w = Tensor(u(3, 2, 3, 3))
    b = Tensor(u(3))
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, 5)), Tensor(u(5))
    m = Tensor(u(4, 3))
    weights = Tensor(u(2, 4, 5))
    w_mm, w_conv, w_ln = Tensor(u(2, 5, 3)), Tensor(u(2, 3, 5, 4)), Tensor(u(4, 5))
    w_flat, w_pool, w_max = Tensor(u(4, 10)), Tensor(u(2, 3)), Tensor(u(2, 4))
    return {
        "matmul": (lambda t: (ops.matmul(t, m) * w_mm).sum(), u(2, 5, 4)),
        "conv2d": (lambda t: (ops.conv2d(t, w, b, 1, 1) * w_conv).sum(), u(2, 2, 5, 4)),
        "conv2d_stride2": (lambda t: (ops.conv2d(t, w, b, 2, 1) * ops.conv2d(t, w, b, 2, 1)).sum(), u(1, 2, 6, 5)),
        "layer_norm": (lambda t: (ops.layer_norm(t, gamma, beta) * w_ln).sum(), u(4, 5)),
        "softmax": (lambda t: (ops.softmax_lastdim(t) * weights).sum(), u(2, 4, 5)),
        "gelu": (lambda t: (ops.gelu(t) * weights).sum(), u(2, 4, 5)),
        "relu": (lambda t: (ops.relu(t) * weights).sum(), u(2, 4, 5)),
        "elu_plus_one": (lambda t: (ops.elu_plus_one(t) * weights).sum(), u(2, 4, 5)),
        "exp": (lambda t: (ops.exp(t) * weights).sum(), u(2, 4, 5)),
        "log": (lambda t: (ops.log(t) * weights).sum(), rng.uniform(0.5, 2, (2, 4, 5))),
        "div": (lambda t: (ops.div(weights, t + 3.0)).sum(), u(2, 4, 5)),
        "transpose_reshape": (lambda t: (ops.reshape(ops.transpose(t, (1, 0, 2)), (4, 10)) * w_flat).sum(),
                              u(2, 4, 5)),
        "global_avg_pool": (lambda t: (ops.global_avg_pool(t) * w_pool).sum(), u(2, 3, 4, 5)),
        "cross_entropy": (lambda t: ops.cross_entropy(t, [0, 3, 1, 2]), u(4, 5)),
        "amax": (lambda t: (ops.amax(t, -1) * w_max).sum(), u(2, 4, 5)),
        "cross_entropy_layer_norm": (lambda t: ops.cross_entropy(ops.layer_norm(t, gamma, beta), [1, 2, 3, 0]),
                                     u(4, 5)),
    }


def check_primitives(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    with precision("f64"):
        return {name: grad_check(f, Tensor(x)) for name, (f, x) in _primitive_cases(rng).items()}


def check_attention_grads(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out = {}
    with precision("f64"):
        k, v = Tensor(rng.uniform(-1, 1, (1, 2, 6, 3))), Tensor(rng.uniform(-1, 1, (1, 2, 6, 3)))
        wt = Tensor(rng.uniform(-1, 1, (1, 2, 6, 3)))
        fns = {
            "softmax_attention": attn.softmax_attention_reference,
            "linear_transformer": attn.linear_transformer_attention,
            "performer": attn.performer_relu_attention,
            "nystromformer": lambda q, k, v: attn.nystrom_attention(q, k, v, 3, 6),
        }
        for name, fn in fns.items():
            out[name] = grad_check(lambda t: (fn(t, k, v) * wt).sum(), Tensor(rng.uniform(-1, 1, (1, 2, 6, 3))))
        a = ops.softmax_lastdim(Tensor(rng.uniform(-1, 1, (2, 4, 4))))
        out["newton_schulz_pinv"] = grad_check(
            lambda t: (attn.newton_schulz_pinv(ops.softmax_lastdim(t), 6) * Tensor(a.data)).sum(),
            Tensor(rng.uniform(-1, 1, (2, 4, 4))))
    return out


def check_end_to_end(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    out = {}
    with precision("f64"):
        x = rng.uniform(-1, 1, (2, 3, 4, 4))
        for kind in AttentionKind:
            model = build_model(tiny_model_config(kind), seed=seed)
            out[f"cxv_1layer_{kind.value}"] = model_grad_error(model, x, [0, 2])
    return out


def check_kernel_oracles(trials: int = 50, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    with precision("f64"):
        for _ in range(trials):
            n, dh = int(rng.integers(1, 129)), int(rng.integers(1, 33))
            q, k, v = (rng.uniform(-1, 1, (1, 2, n, dh)) for _ in range(3))
            for fast, phi in ((attn.linear_transformer_attention, oracles.elu_plus_one),
                              (attn.performer_relu_attention, oracles.relu)):
                got = fast(Tensor(q), Tensor(k), Tensor(v), 1e-6).data
                want = oracles.kernel_attention_quadratic(q, k, v, phi, 1e-6)
                worst = max(worst, oracles.relative_error(got, want))
    return worst


def check_nystrom_exact(trials: int = 20, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    with precision("f64"):
        for _ in range(trials):
            n, dh = int(rng.integers(1, 65)), int(rng.integers(2, 17))
            q, k, v = (rng.uniform(-1, 1, (1, 2, n, dh)) for _ in range(3))
            got = attn.nystrom_attention(Tensor(q), Tensor(k), Tensor(v), n, 20).data
            worst = max(worst, oracles.relative_error(got, oracles.softmax_attention(q, k, v)))
    return worst


def check_controller() -> bool:
    c = DualOptController()
    decisions = [c.update(e, 0.5) for e in range(1, 40)]
    fired = [e for e, d in zip(range(1, 40), decisions) if d is Decision.SWITCH_TO_SGD]
    c2 = DualOptController()
    rising = [c2.update(e, 0.1 + 0.005 * e) for e in range(1, 150)]
    return fired == [21] and all(d is Decision.CONTINUE for d in rising)


def run_all(verbose: bool = True) -> bool:
    results: list[tuple[str, bool, str]] = []
    t0 = time.perf_counter()
    for name, err in check_primitives().items():
        results.append((f"grad {name}", err < 1e-6, f"{err:.2e}"))
    for name, err in check_attention_grads().items():
        results.append((f"grad {name}", err < 1e-4, f"{err:.2e}"))
    for name, err in check_end_to_end().items():
        results.append((f"grad {name}", err < 1e-4, f"{err:.2e}"))
    err = check_kernel_oracles()
    results.append(("oracle kernel attention", err < 1e-5, f"{err:.2e}"))
    err = check_nystrom_exact()
    results.append(("oracle nystrom m=n", err < 1e-2, f"{err:.2e}"))
    results.append(("dualopt controller", check_controller(), ""))
    if verbose:
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name:<40} {detail}")
        print(f"{sum(ok for _, ok, _ in results)}/{len(results)} passed in {time.perf_counter() - t0:.1f}s")
    return all(ok for _, ok, _ in results)
