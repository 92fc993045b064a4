"""Renyi-DP bookkeeping for composed Gaussian steps and conversion to (eps, delta).

The per-step cost is the plain Gaussian-mechanism RDP curve
``alpha * sensitivity**2 / (2 * sigma**2)``; no subsampling amplification is
applied, so the reported epsilon is an upper bound on what an amplified
accountant would give for the same run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence


DEFAULT_ORDERS: tuple[float, ...] = (
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0,
)


class AccountantError(ValueError):
    pass


def rdp_gaussian_step(alpha: float, sensitivity: float, sigma: float) -> float:
    """RDP cost at order ``alpha`` of one Gaussian release; ``inf`` if ``sigma == 0``."""
    if alpha <= 1:
        raise AccountantError(f"RDP order must exceed 1, got {alpha}")
    if sensitivity < 0 or sigma < 0:
        raise AccountantError("sensitivity and sigma must be non-negative")
    if sensitivity == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    return alpha * sensitivity ** 2 / (2.0 * sigma ** 2)


@dataclass(frozen=True)
class StepParams:
    noise_multiplier: float
    clip_norm: float
    sampling_rate: float | None = None


@dataclass(frozen=True)
class RdpLedger:
    """Accumulated RDP per order. Immutable: :func:`compose` returns a new ledger."""

    orders: tuple[float, ...] = DEFAULT_ORDERS
    rdp: tuple[float, ...] = ()
    steps: int = 0
    history: tuple[tuple[StepParams, int], ...] = field(default=())

    def __post_init__(self):
        if not self.rdp:
            object.__setattr__(self, "rdp", (0.0,) * len(self.orders))
        if len(self.rdp) != len(self.orders):
            raise AccountantError("one RDP value per order required")
        if any(a <= 1 for a in self.orders):
            raise AccountantError("all RDP orders must exceed 1")


def compose(ledger: RdpLedger, step_costs: Sequence[Sequence[float]], params: StepParams | None = None) -> RdpLedger:
    """Add the per-order costs of each step in ``step_costs`` to ``ledger``."""
    totals = list(ledger.rdp)
    count = 0
    for cost in step_costs:
        if len(cost) != len(ledger.orders):
            raise AccountantError(f"step has {len(cost)} orders, ledger grid has {len(ledger.orders)}")
        for i, c in enumerate(cost):
            if c < 0:
                raise AccountantError("RDP costs are non-negative")
            totals[i] += c
        count += 1
    history = ledger.history + (((params, count),) if params is not None and count else ())
    return RdpLedger(ledger.orders, tuple(totals), ledger.steps + count, history)


def gaussian_step_costs(
    orders: Sequence[float], noise_multiplier: float, clip_norm: float = 1.0,
    step_rdp: Callable[[float, float, float], float] = rdp_gaussian_step,
) -> list[float]:
    """Per-order cost of one step with ``sigma = noise_multiplier * clip_norm``."""
    sigma = noise_multiplier * clip_norm
    return [step_rdp(a, clip_norm, sigma) for a in orders]


def account_gaussian_steps(
    steps: int, noise_multiplier: float, clip_norm: float = 1.0,
    orders: Sequence[float] = DEFAULT_ORDERS, sampling_rate: float | None = None,
) -> RdpLedger:
    """Ledger after ``steps`` identical Gaussian steps."""
    orders = tuple(orders)
    if steps == 0:
        return RdpLedger(orders)
    cost = gaussian_step_costs(orders, noise_multiplier, clip_norm)
    params = StepParams(noise_multiplier, clip_norm, sampling_rate)
    return RdpLedger(orders, tuple(steps * c for c in cost), steps, ((params, steps),))


@dataclass(frozen=True)
class PrivacySpec:
    epsilon: float
    delta: float
    order: float

    def to_json(self) -> str:
        return json.dumps(
            {"epsilon": _jsonable(self.epsilon), "delta": self.delta, "order": self.order},
            indent=2, sort_keys=True,
        )


def _jsonable(x: float):
    return "inf" if math.isinf(x) else x


def to_dp(ledger: RdpLedger, delta: float) -> PrivacySpec:
    """Best (eps, delta) over the ledger's orders: ``min rdp(a) - ln(delta)/(a-1)``."""
    if not 0 < delta < 1:
        raise AccountantError(f"delta must be in (0, 1), got {delta}")
    if not ledger.orders:
        raise AccountantError("empty order grid")
    log_delta = math.log(delta)
    best, best_order = math.inf, ledger.orders[0]
    for alpha, r in zip(ledger.orders, ledger.rdp):
        eps = r - log_delta / (alpha - 1)
        if eps < best:
            best, best_order = eps, alpha
    return PrivacySpec(best, delta, best_order)


def gaussian_sigma(sensitivity: float, epsilon: float, delta: float) -> float:
    """Classical calibration ``sqrt(2 ln(1.25/delta)) * sensitivity / epsilon``; needs eps < 1."""
    if not 0 < epsilon < 1:
        raise AccountantError(f"classical Gaussian calibration requires 0 < epsilon < 1, got {epsilon}")
    if not 0 < delta < 1:
        raise AccountantError(f"delta must be in (0, 1), got {delta}")
    if sensitivity <= 0:
        raise AccountantError("sensitivity must be positive")
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / epsilon


def advantage_bound(epsilon: float) -> float:
    """Upper bound ``e**eps - 1`` on membership advantage (vacuous above 1)."""
    if epsilon < 0:
        raise AccountantError("epsilon must be non-negative")
    return math.expm1(epsilon) if epsilon < 709 else math.inf


def audit(noise_multiplier: float, clip_norm: float, batch_size: int, n: int, epochs: int,
          delta: float | None = None, orders: Sequence[float] = DEFAULT_ORDERS,
          steps: int | None = None) -> dict:
    """Composed guarantee of a training run with fixed-size batches (tail dropped).

    ``steps`` overrides the ``epochs * (n // batch_size)`` count when the
    trainer's own step counter is available.
    """
    if n < 1 or batch_size < 1:
        raise AccountantError("n and batch size must be positive")
    delta = 1.0 / n if delta is None else delta
    steps = epochs * (n // batch_size) if steps is None else steps
    ledger = account_gaussian_steps(steps, noise_multiplier, clip_norm, orders, batch_size / n)
    spec = to_dp(ledger, delta)
    bound = advantage_bound(spec.epsilon)
    return {
        "epsilon": _jsonable(spec.epsilon),
        "delta": delta,
        "order": spec.order,
        "steps": steps,
        "advantage_bound": _jsonable(bound),
        "bound_vacuous": bool(bound >= 1),
    }

