"""Central-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, precision


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    max_abs_err: float
    passed: bool
    tolerance: float = 1e-4
    n_coords: int = 0
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.op_name}: max_rel_err={self.max_rel_err:.3e} "
                f"max_abs_err={self.max_abs_err:.3e} coords={self.n_coords} tol={self.tolerance:g}")


def _value(f, what: str) -> float:
    out = f()
    v = float(out.data) if isinstance(out, Tensor) else float(out)
    if not np.isfinite(v):
        raise NonFiniteError(f"finite-diff probe ({what})")
    return v


def check_tensors(
    f: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    op_name: str,
    eps: float = 1e-4,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    rel_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare ``backward()`` gradients of the scalar ``f()`` with central differences.

    ``f`` closes over ``tensors``; they are perturbed in place one coordinate at
    a time. With ``max_coords``, a random subset of coordinates per tensor is probed.
    ``rel_floor`` bounds the relative-error denominator from below so that entries
    whose true gradient is zero are judged by their absolute error.
    """
    for t in tensors:
        if t.data.dtype != np.float64:
            raise TypeError(f"{op_name}: finite differences need float64 tensors")
        t.requires_grad = True
        t.grad = None
    out = f()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    rng = rng or np.random.default_rng(0)
    max_rel = max_abs = 0.0
    count = 0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = _value(f, f"{op_name} +eps")
            flat[i] = orig - eps
            fm = _value(f, f"{op_name} -eps")
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            an = float(ga.reshape(-1)[i])
            abs_err = abs(an - num)
            rel_err = abs_err / max(abs(an), abs(num), rel_floor)
            max_abs = max(max_abs, abs_err)
            max_rel = max(max_rel, rel_err)
            count += 1
    return GradCheckReport(op_name, max_rel, max_abs, max_rel < tolerance, tolerance, count)


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    tolerance: float = 1e-4,
    op_name: str = "f",
) -> GradCheckReport:
    """Check the gradient of a scalar function of one tensor at ``x`` (float64)."""
    with precision(np.float64):
        x64 = Tensor(np.array(x.data, dtype=np.float64), requires_grad=True)
        return check_tensors(lambda: f(x64), [x64], op_name, eps=eps, tolerance=tolerance)


def weighted_sum(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    """Fixed random projection so that ops with constant ``sum`` (softmax) are still tested."""
    w = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return lambda y: (y * w).sum()


def summarize(reports: Iterable[GradCheckReport]) -> str:
    return "\n".join(r.line() for r in reports)
