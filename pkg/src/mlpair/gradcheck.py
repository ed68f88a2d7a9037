"""Finite-difference checks for every op and relation module."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor, grad_check, mul, sum_all
from .baselines import AttnBlock, GcnBlock, build_model
from .modules import Module
from .relation import MlpBlock, ModelConfig, mlp_unit
from .train import joint_loss

SELECTORS = ("all", "ops", "mlp_s", "mlp_t", "mlp_r", "srm", "trm", "gcn", "attn", "path", "loss", "full")


@dataclass
class CheckResult:
    check: str
    target: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.error < self.tol


def _projected(fn: Callable[[Tensor], Tensor], shape, rng) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.normal(size=shape))
    return lambda x: sum_all(mul(fn(x), weights))


def _check_module(name: str, module: Module, x: np.ndarray, rng, h: float, tol: float) -> list[CheckResult]:
    module.eval()
    xt = Tensor(x)
    out_shape = module(xt).shape
    f = _projected(lambda inp: module(inp), out_shape, rng)
    results = [CheckResult(name, "input", grad_check(f, xt, h), tol)]
    for pname, p in module.named_parameters():
        results.append(CheckResult(name, pname, grad_check(lambda _p: f(xt), p, h), tol))
    return results


def _op_checks(rng, h, tol) -> list[CheckResult]:
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    b = rng.normal(size=2)
    gamma = rng.normal(size=4)
    beta = rng.normal(size=4)
    labels = np.array([0, 1, 2])
    cases = {
        "affine.x": (lambda t: ag.affine(t, Tensor(w), Tensor(b)), x),
        "affine.w": (lambda t: ag.affine(Tensor(x), t, Tensor(b)), w),
        "affine.b": (lambda t: ag.affine(Tensor(x), Tensor(w), t), b),
        "matmul": (lambda t: ag.matmul(t, Tensor(w)), x),
        "layer_norm.x": (lambda t: ag.layer_norm(t, Tensor(gamma), Tensor(beta)), x),
        "layer_norm.gamma": (lambda t: ag.layer_norm(Tensor(x), t, Tensor(beta)), gamma),
        "layer_norm.beta": (lambda t: ag.layer_norm(Tensor(x), Tensor(gamma), t), beta),
        "gelu": (ag.gelu, x),
        "relu": (ag.relu, x),
        "mean": (lambda t: ag.mean(t, 0), x),
        "max": (lambda t: ag.amax(t, 1), x),
        "softmax": (ag.softmax, x),
        "permute": (lambda t: ag.permute(t, (1, 0)), x),
        "reshape": (lambda t: ag.reshape(t, (2, 6)), x),
        "add": (lambda t: ag.add(t, t), x),
        "mul": (lambda t: ag.mul(t, t), x),
        "sub": (lambda t: ag.sub(t, Tensor(x[::-1])), x),
    }
    results = []
    for name, (fn, arr) in cases.items():
        t = Tensor(arr.copy())
        f = _projected(fn, fn(Tensor(arr)).shape, rng)
        results.append(CheckResult("ops", name, grad_check(f, t, h), tol))
    logits = Tensor(rng.normal(size=(3, 5)))
    results.append(CheckResult("ops", "softmax_cross_entropy",
                               grad_check(lambda t: ag.softmax_cross_entropy(t, labels), logits, h), tol))
    return results


def _cfg(dims, **kw) -> ModelConfig:
    t, n, d = dims
    heads = 2 if d % 2 == 0 else 1
    base = dict(frames=t, actors=n, dim=d, heads=heads, dropout=0.0, group_classes=3, action_classes=4)
    base.update(kw)
    return ModelConfig(**base)


def run_suite(selector: str = "all", dims=(3, 3, 3), h: float = 1e-5, tol: float = 1e-4, seed: int = 0) -> list[CheckResult]:
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}; expected one of {SELECTORS}")
    rng = np.random.default_rng(seed)
    t, n, d = dims
    x = rng.normal(size=(2, t, n, d))
    picked = SELECTORS[1:] if selector == "all" else (selector,)
    results: list[CheckResult] = []
    for sel in picked:
        if sel == "ops":
            results += _op_checks(rng, h, tol)
        elif sel in ("mlp_s", "mlp_t", "mlp_r"):
            axis, length = {"mlp_s": ("actor", n), "mlp_t": ("time", t), "mlp_r": ("channel", d)}[sel]
            results += _check_module(sel, MlpBlock(axis, length, d, 0.0, rng), x, rng, h, tol)
        elif sel in ("srm", "trm"):
            unit = mlp_unit("spatial" if sel == "srm" else "temporal", _cfg(dims), rng)
            results += _check_module(sel, unit, x, rng, h, tol)
        elif sel == "gcn":
            for axis in ("actor", "time"):
                results += _check_module(f"gcn.{axis}", GcnBlock(axis, d, 0.0, rng), x, rng, h, tol)
        elif sel == "attn":
            heads = 2 if d % 2 == 0 else 1
            for axis in ("actor", "time"):
                results += _check_module(f"attn.{axis}", AttnBlock(axis, d, heads, 0.0, rng), x, rng, h, tol)
        elif sel == "path":
            for method in ("mlp", "gcn", "transformer"):
                model = build_model(_cfg(dims, method=method, seed=int(rng.integers(1 << 30))))
                for name, path in model.paths.items():
                    results += _check_module(f"path.{method}.{name}", _Trunk(path), x, rng, h, tol)
        elif sel == "loss":
            results += _loss_checks(dims, rng, h, tol)
        elif sel == "full":
            results += _full_checks(dims, rng, h, tol)
    return results


class _Trunk(Module):
    def __init__(self, path):
        self.path = path

    def __call__(self, x, rng=None):
        return self.path.trunk(x, rng)


def _loss_checks(dims, rng, h, tol) -> list[CheckResult]:
    cfg = _cfg(dims, scene=True, scene_dim=3, lam=0.7)
    model = build_model(cfg).eval()
    x = Tensor(rng.normal(size=(2, *dims)))
    scene = Tensor(rng.normal(size=(2, 3)))
    yg = rng.integers(0, cfg.group_classes, 2)
    ya = rng.integers(0, cfg.action_classes, (2, dims[1]))
    out = model(x, scene)
    results = []
    for key in ("st", "ts"):
        for kind, store in (("group", out.group), ("individual", out.individual)):
            logits = Tensor(store[key].data.copy())

            def f(tns, kind=kind, key=key):
                group = dict(out.group)
                ind = dict(out.individual)
                (group if kind == "group" else ind)[key] = tns
                fused_g = ag.mul(ag.add(ag.add(group["st"], group["ts"]), out.scene), 1.0 / 3)
                fused_i = ag.mul(ag.add(ind["st"], ind["ts"]), 0.5)
                o = type(out)(group, ind, out.embedding, out.scene, fused_g, fused_i)
                return joint_loss(o, yg, ya, cfg.lam)

            results.append(CheckResult("loss", f"{kind}.{key}", grad_check(f, logits, h), tol))
    return results


def _full_checks(dims, rng, h, tol) -> list[CheckResult]:
    results = []
    for method in ("mlp", "gcn", "transformer"):
        cfg = _cfg(dims, method=method, scene=True, scene_dim=3, seed=int(rng.integers(1 << 30)))
        model = build_model(cfg).eval()
        x = Tensor(rng.normal(size=(2, *dims)))
        scene = Tensor(rng.normal(size=(2, 3)))
        yg = rng.integers(0, cfg.group_classes, 2)
        ya = rng.integers(0, cfg.action_classes, (2, dims[1]))

        def loss(_=None):
            return joint_loss(model(x, scene), yg, ya, cfg.lam)

        results.append(CheckResult(f"full.{method}", "input", grad_check(lambda t: joint_loss(model(t, scene), yg, ya, cfg.lam), x, h), tol))
        for pname, p in model.named_parameters():
            results.append(CheckResult(f"full.{method}", pname, grad_check(loss, p, h), tol))
    return results


@contextlib.contextmanager
def inject_sign_error(op_name: str) -> Iterator[None]:
    """Temporarily negate the backward rule of one op (for fault-injection runs)."""
    cls = getattr(ag, op_name, None)
    if not (isinstance(cls, type) and issubclass(cls, ag.Function)):
        raise ValueError(f"unknown op {op_name!r}")
    original = cls.backward

    def flipped(self, grad):
        return tuple(None if g is None else -g for g in original(self, grad))

    cls.backward = flipped
    try:
        yield
    finally:
        cls.backward = original


def format_report(results: list[CheckResult]) -> str:
    lines = [f"{'check':<24} {'target':<40} {'rel_err':>10}  status"]
    for r in results:
        lines.append(f"{r.check:<24} {r.target:<40} {r.error:>10.2e}  {'ok' if r.passed else 'FAIL'}")
    failed = [r for r in results if not r.passed]
    lines.append(f"{len(results) - len(failed)}/{len(results)} passed" + ("" if not failed else f"; failing: {sorted({r.check + ':' + r.target for r in failed})}"))
    return "\n".join(lines)
