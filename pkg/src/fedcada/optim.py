"""Per-parameter optimizers: plain SGD and an Adam family whose bias
correction denominator is selectable.

The correction modes, with x = beta^t:

    vanilla_subtract   1 - x        (classic Adam, inflates early steps)
    add_geometric      1 + x        (shrinks early steps, decays to 1)
    add_square         1 + x^2
    add_sine           1 + sin(x)   (radians)
    add_sqrt           1 + sqrt(x)
    none               1            (no correction at all)

All add_* modes start above 1 and fall monotonically toward 1, so early
moment estimates are damped rather than amplified; the clock t is chosen
by the caller (here: the communication round).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NonFiniteGradientError
from .nn import ParamVector


class CorrectionMode(Enum):
    VANILLA_SUBTRACT = "vanilla_subtract"
    ADD_GEOMETRIC = "add_geometric"
    ADD_SQUARE = "add_square"
    ADD_SINE = "add_sine"
    ADD_SQRT = "add_sqrt"
    NO_CORRECTION = "none"


@dataclass(frozen=True)
class AdamHyper:
    """Local learning rate and moment decay hyperparameters."""

    eta_l: float
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.eta_l > 0:
            raise ValueError(f"eta_l must be positive, got {self.eta_l}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class MomentState:
    """Adam's first and second moment vectors plus a step counter."""

    m: np.ndarray
    v: np.ndarray
    steps: int = 0

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.m.shape != self.v.shape or self.m.ndim != 1:
            raise ValueError("moment vectors must be 1-D and equal length")

    @classmethod
    def zeros(cls, dim: int) -> "MomentState":
        return cls(np.zeros(dim), np.zeros(dim))

    def copy(self) -> "MomentState":
        return MomentState(self.m.copy(), self.v.copy(), self.steps)


def correction_denominators(
    mode: CorrectionMode, beta1: float, beta2: float, t: int
) -> tuple[float, float]:
    """Denominators (d1, d2) dividing the raw moments at clock t >= 1."""
    if t < 1:
        raise ValueError(f"correction clock must be >= 1, got {t}")
    if mode is CorrectionMode.NO_CORRECTION:
        return 1.0, 1.0
    x1, x2 = beta1**t, beta2**t
    if mode is CorrectionMode.VANILLA_SUBTRACT:
        return 1.0 - x1, 1.0 - x2
    if mode is CorrectionMode.ADD_GEOMETRIC:
        return 1.0 + x1, 1.0 + x2
    if mode is CorrectionMode.ADD_SQUARE:
        return 1.0 + x1 * x1, 1.0 + x2 * x2
    if mode is CorrectionMode.ADD_SINE:
        return 1.0 + math.sin(x1), 1.0 + math.sin(x2)
    if mode is CorrectionMode.ADD_SQRT:
        return 1.0 + math.sqrt(x1), 1.0 + math.sqrt(x2)
    raise ValueError(f"unhandled correction mode {mode!r}")


def _check_lengths(*arrays: np.ndarray) -> None:
    sizes = {a.size for a in arrays}
    if len(sizes) != 1:
        raise ValueError(f"vector length mismatch: {sorted(sizes)}")


def adam_step(
    params: ParamVector,
    grad: ParamVector,
    state: MomentState,
    hyper: AdamHyper,
    mode: CorrectionMode,
    t: int,
) -> tuple[ParamVector, MomentState]:
    """One Adam update with the selected correction denominator.

    m' = b1 m + (1-b1) g, v' = b2 v + (1-b2) g^2, then the corrected
    estimates m'/d1 and v'/d2 drive the step. Epsilon is added outside
    the square root.
    """
    _check_lengths(params.values, grad.values, state.m, state.v)
    finite = np.isfinite(grad.values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteGradientError(
            f"non-finite gradient at coordinate {bad}: {grad.values[bad]}"
        )
    g = grad.values
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * (g * g)
    d1, d2 = correction_denominators(mode, hyper.beta1, hyper.beta2, t)
    m_hat = m / d1
    v_hat = v / d2
    new_values = params.values - hyper.eta_l * m_hat / (np.sqrt(v_hat) + hyper.epsilon)
    return ParamVector(new_values, params.manifest), MomentState(m, v, state.steps + 1)


def sgd_step(params: ParamVector, grad: ParamVector, eta: float) -> ParamVector:
    """Plain gradient step params - eta * grad."""
    _check_lengths(params.values, grad.values)
    return ParamVector(params.values - eta * grad.values, params.manifest)


def denominator_curve(mode: CorrectionMode, beta: float, rounds: int) -> np.ndarray:
    """First-moment denominator at t = 1..rounds, for curve export."""
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    return np.array(
        [correction_denominators(mode, beta, beta, t)[0] for t in range(1, rounds + 1)]
    )
