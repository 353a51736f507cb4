"""Finite-difference verification of every differentiable operation.

Each check draws random float64 inputs, reduces the op's output to a scalar
with a fixed random weighting, and compares reverse-mode gradients against
central differences. Instances whose forward pass passes within
``KINK_MARGIN`` of a non-smooth point (relu at 0, a tie in min) are redrawn.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .model import ArchSpec, init_model
from .objective import LossWeights, total_loss

KINK_MARGIN = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_err: float
    tol: float
    resampled: int = 0

    @property
    def passed(self) -> bool:
        return self.instances > 0 and self.max_rel_err < self.tol


@dataclass
class GradcheckReport:
    results: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list:
        out = [f"{'PASS' if r.passed else 'FAIL'} {r.name:28s} n={r.instances:3d} "
               f"max_rel_err={r.max_rel_err:.3e} tol={r.tol:.0e} resampled={r.resampled}"
               for r in self.results]
        out.append(f"{'PASS' if self.passed else 'FAIL'} overall in {self.seconds:.1f}s")
        return out


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||, 1e-12)."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``arr`` (mutated in place, then restored)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + eps
        fp = f()
        arr[i] = orig - eps
        fm = f()
        arr[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return g


def min_kink_margin(out: Tensor) -> float:
    return min([n.kink_margin for n in ag.Tape.from_output(out).nodes], default=np.inf)


def check_instance(build: Callable[[], Tensor], leaves: list, eps: float = 1e-6) -> float:
    """Max relative gradient error over ``leaves`` for the scalar returned by ``build``."""
    for t in leaves:
        t.grad = None
    out = build()
    ag.backward(out)
    analytic = [t.grad.copy() for t in leaves]
    errs = []
    for t, a in zip(leaves, analytic):
        n = numeric_grad(lambda: float(build().data), t.data, eps)
        errs.append(rel_err(a, n))
    return max(errs)


def _weighted(out: Tensor, rng) -> Tensor:
    if out.size == 1:
        return ag.sum(out)
    w = Tensor(rng.uniform(0.5, 1.5, size=out.shape))
    return ag.sum(out * w)


def _leaf(rng, shape, lo=-2.0, hi=2.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _op_cases() -> dict:
    """name -> sampler(rng) returning (leaves, fn(*leaves) -> Tensor)."""
    mask_rng = np.random.default_rng(12345)

    def masked_min(rng):
        x = _leaf(rng, (4, 5))
        m = mask_rng.random((4, 5)) < 0.6
        m[np.arange(4), rng.integers(0, 5, 4)] = True
        return [x], lambda a: ag.min(a, axis=1, mask=m)

    return {
        "matmul": lambda r: ([_leaf(r, (3, 4)), _leaf(r, (4, 2))], ag.matmul),
        "transpose": lambda r: ([_leaf(r, (2, 3))], ag.transpose),
        "add": lambda r: ([_leaf(r, (2, 3)), _leaf(r, (2, 3))], ag.add),
        "add_row_broadcast": lambda r: ([_leaf(r, (3, 4)), _leaf(r, (4,))], ag.add),
        "sub": lambda r: ([_leaf(r, (2, 3)), _leaf(r, (2, 3))], ag.sub),
        "mul": lambda r: ([_leaf(r, (2, 3)), _leaf(r, (2, 3))], ag.mul),
        "scalar-mul": lambda r: ([_leaf(r, (2, 3))], lambda a: ag.scalar_mul(a, -1.7)),
        "relu": lambda r: ([_leaf(r, (3, 4))], ag.relu),
        "sigmoid": lambda r: ([_leaf(r, (3, 4))], ag.sigmoid),
        "exp": lambda r: ([_leaf(r, (3, 4))], ag.exp),
        "log": lambda r: ([_leaf(r, (3, 4), 0.1, 2.0)], ag.log),
        "sum_axis0": lambda r: ([_leaf(r, (3, 4))], lambda a: ag.sum(a, axis=0)),
        "mean_axis1": lambda r: ([_leaf(r, (3, 4))], lambda a: ag.mean(a, axis=1)),
        "mean_all": lambda r: ([_leaf(r, (3, 4))], ag.mean),
        "min_all": lambda r: ([_leaf(r, (3, 4))], ag.min),
        "min_axis0": lambda r: ([_leaf(r, (3, 4))], lambda a: ag.min(a, axis=0)),
        "min_masked": masked_min,
        "take": lambda r: ([_leaf(r, (3, 5))], lambda a: ag.take(a, [4, 0, 2], axis=1)),
        "euclidean_distance_rows": lambda r: ([_leaf(r, (3, 2)), _leaf(r, (2, 2))], ag.euclidean_distance_rows),
        "log_softmax": lambda r: ([_leaf(r, (4, 3))], ag.log_softmax),
    }


def check_op(name: str, sampler, rng, instances: int = 20, tol: float = 1e-5, eps: float = 1e-6,
             max_tries: int = 1000) -> CheckResult:
    errs, resampled, tries = [], 0, 0
    while len(errs) < instances and tries < max_tries:
        tries += 1
        leaves, fn = sampler(rng)
        weight_rng = np.random.default_rng(rng.integers(2**32))
        probe = fn(*leaves)
        if min_kink_margin(probe) < KINK_MARGIN:
            resampled += 1
            continue
        weights = Tensor(weight_rng.uniform(0.5, 1.5, size=probe.shape)) if probe.size > 1 else None

        def build():
            out = fn(*leaves)
            return ag.sum(out * weights) if weights is not None else ag.sum(out)

        errs.append(check_instance(build, leaves, eps))
    return CheckResult(name, len(errs), max(errs) if errs else np.inf, tol, resampled)


def _loss_case(rng, mode: str, single_class: bool, batch: int = 4):
    arch = ArchSpec((3, 3), (5,), 3)
    model = init_model(arch, 2, 2, int(rng.integers(2**31)), dtype=np.float64)
    model.norm_mean, model.norm_std = 0.4, 0.3
    x = Tensor(rng.uniform(0, 1, size=(batch, arch.pixels)))
    labels = np.zeros(batch, dtype=np.int64) if single_class else np.arange(batch) % 2
    weights = LossWeights(1.0, 0.5, np.array([0.7, 1.9]))

    def build():
        return total_loss(x, labels, model, weights, mode).total

    return model.parameters(), build


def check_loss(mode: str, rng, instances: int = 20, tol: float = 1e-4, eps: float = 1e-6,
               max_tries: int = 500) -> CheckResult:
    errs, resampled, tries = [], 0, 0
    while len(errs) < instances and tries < max_tries:
        tries += 1
        single = len(errs) % 4 == 3
        leaves, build = _loss_case(rng, mode, single)
        if min_kink_margin(build()) < KINK_MARGIN:
            resampled += 1
            continue
        errs.append(check_instance(build, leaves, eps))
    return CheckResult(f"total_loss[{mode}]", len(errs), max(errs) if errs else np.inf, tol, resampled)


def run_gradcheck(seed: int = 0, instances: int = 20, op_tol: float = 1e-4, loss_tol: float = 1e-4) -> GradcheckReport:
    """Check every differentiable op and the combined loss in both modes."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for name, sampler in _op_cases().items():
        report.results.append(check_op(name, sampler, rng, instances, op_tol))
    for mode in ("reserved", "unreserved"):
        report.results.append(check_loss(mode, rng, instances, loss_tol))
    report.seconds = time.perf_counter() - t0
    return report
