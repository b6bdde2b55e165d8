"""Adam with bias correction and post-step feasibility projection."""

from dataclasses import dataclass, field

import numpy as np

from .params import ParamLayout


@dataclass
class AdamState:
    """Moment accumulators for one flat parameter vector.

    ``layout`` is optional; when given, the feasibility projection
    (scale floor, opacity/color clamp) runs after every step.
    """

    n_params: int
    lr: float = 1.6e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    layout: ParamLayout | None = None
    step_count: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros(self.n_params)
        self.v = np.zeros(self.n_params)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns the updated parameters.

    ``params`` is modified in place and returned. Non-finite gradients are
    rejected with the first offending index named.
    """
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"layout mismatch: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    bad = ~np.isfinite(grads)
    if bad.any():
        idx = int(np.argmax(bad))
        raise ValueError(f"non-finite gradient at index {idx} (value {grads[idx]!r})")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if state.layout is not None:
        state.layout.project_(params)
    return params
