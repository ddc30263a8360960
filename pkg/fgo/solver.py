from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import structlog

from calib_config import SolverSettings
from fgo.factors import Factor
from fgo.states import Key, retract

logger = structlog.get_logger()


class SolveStatus(str, Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    STALLED = "stalled"
    DIVERGED = "diverged"


@dataclass
class SolveResult:
    status: SolveStatus
    iterations: int                       # accepted steps
    initial_cost: float
    final_cost: float
    information: np.ndarray               # Gauss-Newton Hessian at the final point
    ordering: Dict[Key, slice]
    condition_number: float
    costs: List[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status in (SolveStatus.CONVERGED, SolveStatus.MAX_ITERATIONS)

    def covariance(self, keys: Sequence[Key]) -> np.ndarray:
        """Marginal covariance of ``keys`` from the full information matrix."""
        idx = np.concatenate([np.arange(self.ordering[k].start, self.ordering[k].stop) for k in keys])
        cov = scipy.linalg.pinvh(self.information)
        return cov[np.ix_(idx, idx)]

    def std(self, key: Key) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance([key])), 0.0, None))


# ──────────────────────────────────────────────
# Robust Kernel
# ──────────────────────────────────────────────
def huber_weights(r: np.ndarray, delta: float) -> Tuple[np.ndarray, float]:
    """IRLS weights and robust cost for whitened residuals."""
    a = np.abs(r)
    inlier = a <= delta
    w = np.where(inlier, 1.0, delta / np.maximum(a, 1e-300))
    cost = np.where(inlier, 0.5 * r * r, delta * (a - 0.5 * delta))
    return w, float(cost.sum())


def evaluate_cost(factors: Sequence[Factor], values, huber_delta: float) -> float:
    total = 0.0
    for factor in factors:
        r = factor.residual(values)
        if factor.robust:
            total += huber_weights(r, huber_delta)[1]
        else:
            total += 0.5 * float(r @ r)
    return total


def build_normal_equations(factors: Sequence[Factor], values, ordering: Dict[Key, slice], size: int,
                           huber_delta: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """Cost, Gauss-Newton Hessian and gradient over the variables in ``ordering``."""
    H = np.zeros((size, size))
    g = np.zeros(size)
    cost = 0.0
    for factor in factors:
        r, blocks = factor.linearize(values)
        if factor.robust:
            w, c = huber_weights(r, huber_delta)
        else:
            w, c = None, 0.5 * float(r @ r)
        cost += c
        active = [(ordering[k], J) for k, J in zip(factor.keys, blocks) if k in ordering]
        if not active:
            continue
        wr = r if w is None else w * r
        for a, (sa, Ja) in enumerate(active):
            WJa = Ja if w is None else Ja * w[:, None]
            g[sa] += Ja.T @ wr
            for sb, Jb in active[a:]:
                block = WJa.T @ Jb
                H[sa, sb] += block
                if sb != sa:
                    H[sb, sa] += block.T
    return cost, H, g


def _condition(H: np.ndarray) -> float:
    if H.size == 0:
        return 1.0
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    lo = float(ev.min())
    return float("inf") if lo <= 0.0 else float(ev.max() / lo)


def _solve_damped(H: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    A = H + lam * np.diag(np.maximum(np.diag(H), 1e-9))
    try:
        return scipy.linalg.solve(A, -g, assume_a="pos")
    except (scipy.linalg.LinAlgError, ValueError):
        return scipy.linalg.lstsq(A, -g)[0]


# ──────────────────────────────────────────────
# Levenberg-Marquardt
# ──────────────────────────────────────────────
def solve_window(window, config: Optional[SolverSettings] = None) -> SolveResult:
    """Minimizes the window cost in place; the window is rolled back on divergence.

    Starts with an undamped Gauss-Newton step. Damping switches on after a
    rejected step and relaxes again as steps are accepted.
    """
    config = config or SolverSettings()
    for factor in window.factors:
        factor.refresh(window.values)

    ordering, size = window.ordering()
    start = window.snapshot()
    delta_h = config.huber_delta

    cost, H, g = build_normal_equations(window.factors, window.values, ordering, size, delta_h)
    initial_cost = cost
    costs = [cost]
    lam = 0.0
    iterations = 0
    rejections = 0
    status = SolveStatus.MAX_ITERATIONS

    if not np.isfinite(cost):
        logger.error("solver_non_finite_initial_cost", factors=len(window.factors))
        return SolveResult(SolveStatus.DIVERGED, 0, cost, cost, H, ordering, float("inf"), costs)

    if size == 0 or np.linalg.norm(g, np.inf) < config.gradient_tolerance:
        status = SolveStatus.CONVERGED
    else:
        while iterations < config.max_iterations:
            step = _solve_damped(H, g, lam)
            trial = dict(window.values)
            for key, sl in ordering.items():
                trial[key] = retract(key, window.values[key], step[sl])
            trial_cost = evaluate_cost(window.factors, trial, delta_h)

            if not np.isfinite(trial_cost) or not np.all(np.isfinite(step)):
                window.restore(start)
                logger.error("solver_diverged", iteration=iterations, lam=lam)
                cost, H, g = build_normal_equations(window.factors, window.values, ordering, size, delta_h)
                status = SolveStatus.DIVERGED
                break

            if trial_cost <= cost:
                window.values.update(trial)
                iterations += 1
                rejections = 0
                step_norm = float(np.linalg.norm(step))
                lam = lam * config.lambda_down
                if lam < 1e-10:
                    lam = 0.0
                cost, H, g = build_normal_equations(window.factors, window.values, ordering, size, delta_h)
                costs.append(cost)
                if step_norm < config.step_tolerance or np.linalg.norm(g, np.inf) < config.gradient_tolerance:
                    status = SolveStatus.CONVERGED
                    break
            else:
                rejections += 1
                lam = config.initial_lambda if lam == 0.0 else min(lam * config.lambda_up, config.max_lambda)
                if rejections >= config.max_rejections:
                    # no further decrease available at this linearization
                    status = SolveStatus.CONVERGED if cost - trial_cost > -1e-12 * max(cost, 1.0) else SolveStatus.STALLED
                    break

    condition = _condition(H)
    if condition > config.condition_warning:
        logger.warning("normal_equations_ill_conditioned", condition=condition, size=size)
    logger.debug("window_solved", status=status.value, iterations=iterations,
                 initial_cost=initial_cost, final_cost=cost, variables=len(ordering))
    return SolveResult(status, iterations, initial_cost, cost, H, ordering, condition, costs)
