"""Central finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_H = 1e-5
DEFAULT_RTOL = 1e-4
DEFAULT_ATOL = 1e-7


@dataclass
class FDReport:
    max_rel: float
    max_abs: float
    failing: list = field(default_factory=list)
    analytic: np.ndarray | None = None
    numeric: np.ndarray | None = None

    @property
    def ok(self):
        return len(self.failing) == 0


def finite_diff_check(loss_fn, grad_fn, params, h=DEFAULT_H, rtol=DEFAULT_RTOL,
                      atol=DEFAULT_ATOL, indices=None) -> FDReport:
    """Compare ``grad_fn(params)`` against central differences of ``loss_fn``.

    ``loss_fn`` must be pure and deterministic. A coordinate passes when
    |analytic - fd| <= max(rtol * max(|analytic|, |fd|), atol). ``indices``
    restricts the check to a subset of coordinates (all by default).
    """
    params = np.asarray(params, dtype=np.float64)
    analytic = np.asarray(grad_fn(params.copy()), dtype=np.float64)
    if analytic.shape != params.shape:
        raise ValueError(f"gradient shape {analytic.shape} != params shape {params.shape}")
    if indices is None:
        indices = np.arange(params.size)
    numeric = np.zeros_like(analytic)
    work = params.copy()
    for i in indices:
        orig = work[i]
        work[i] = orig + h
        f_plus = loss_fn(work)
        work[i] = orig - h
        f_minus = loss_fn(work)
        work[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * h)

    a = analytic[indices]
    n = numeric[indices]
    abs_err = np.abs(a - n)
    denom = np.maximum(np.abs(a), np.abs(n))
    rel_err = np.where(denom > 0, abs_err / np.maximum(denom, 1e-300), 0.0)
    bad = abs_err > np.maximum(rtol * denom, atol)
    failing = [int(indices[k]) for k in np.flatnonzero(bad)]
    return FDReport(
        max_rel=float(rel_err.max()) if len(indices) else 0.0,
        max_abs=float(abs_err.max()) if len(indices) else 0.0,
        failing=failing,
        analytic=analytic,
        numeric=numeric,
    )
