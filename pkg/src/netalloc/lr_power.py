"""Benchmark power control by classical Lagrangian relaxation.

The per-cell minimum-rate constraints are dualized with multipliers that live
on a scaled simplex: the multipliers of cell m stay nonnegative and sum to
the cell weight, which is exactly the set over which the dual of the max-min
objective is bounded.  Each outer iteration every cell best-responds to the
frozen interference of the previous iterate by maximizing its dualized
objective (a weighted sum of concave own-user rates) over its power budget
with projected gradient ascent, then the multipliers take a projected
subgradient step that shifts weight toward users below their cell's average
rate.

Same Jacobi information pattern and stop test as the decomposed method, so
iteration counts and message totals are comparable.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bus import IterationRecord, MessageBus
from .rate_model import cell_user_rates, validate_assignment, validate_power, wsmr
from .scenario import Scenario

INNER_TOL = 1e-6
INNER_MAX_ITERS = 500
ALPHA0 = 1.0
BETA = 0.1
_STEP_MIN = 1e-12
_STEP_MAX = 1e12


class LrDivergenceError(RuntimeError):
    """The relaxation produced a non-finite iterate."""

    def __init__(self, detail: str, iteration: int | None = None,
                 trace: list | None = None):
        self.iteration = iteration
        self.trace = trace or []
        super().__init__(detail)


@dataclass(frozen=True)
class LrResult:
    power: np.ndarray
    lam: list[np.ndarray]
    trace: list[IterationRecord]
    converged: bool
    iterations: int


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection onto {x >= 0, sum(x) = total}."""
    if total < 0.0:
        raise ValueError(f"simplex total must be nonnegative, got {total!r}")
    v = np.asarray(v, dtype=float)
    if total == 0.0:
        return np.zeros_like(v)
    dropped = np.sort(v)[::-1]
    cumulative = np.cumsum(dropped) - total
    ranks = np.arange(1, v.size + 1)
    valid = dropped - cumulative / ranks > 0.0
    rho = int(np.nonzero(valid)[0][-1])
    shift = cumulative[rho] / (rho + 1.0)
    return np.maximum(v - shift, 0.0)


def _project_budget(p: np.ndarray, budget: float) -> np.ndarray:
    """Euclidean projection onto {p >= 0, sum(p) <= budget}."""
    clipped = np.maximum(p, 0.0)
    if clipped.sum() <= budget:
        return clipped
    return project_simplex(p, budget)


def dual_step_size(t: int, *, alpha0: float = ALPHA0, beta: float = BETA) -> float:
    """Diminishing multiplier step a0 / (1 + beta * t) for outer iteration t."""
    return alpha0 / (1.0 + beta * t)


def update_multipliers(lam: list[np.ndarray], residuals: list[np.ndarray],
                       weights, t: int, *, alpha0: float = ALPHA0,
                       beta: float = BETA) -> list[np.ndarray]:
    """Projected subgradient step on every cell's multiplier block.

    `residuals[m][u]` should be positive when user u lags its cell (here:
    cell average rate minus the user's rate).  Each block steps by
    `dual_step_size(t)` times its residual and is projected back onto the
    simplex summing to the cell weight.
    """
    step = dual_step_size(t, alpha0=alpha0, beta=beta)
    return [project_simplex(lam_m + step * res_m, w_m)
            for lam_m, res_m, w_m in zip(lam, residuals, weights)]


def best_response(coeff: np.ndarray, weight: np.ndarray, start: np.ndarray,
                  budget: float, *, tol: float = INNER_TOL,
                  max_iters: int = INNER_MAX_ITERS) -> np.ndarray:
    """Maximize sum_n weight[n] * ln(1 + coeff[n] * p[n]) over the budget set.

    Projected gradient ascent with a Barzilai-Borwein step and monotone
    halving backtracking.  The objective never decreases between accepted
    iterates.  Stops when an accepted step moves p by at most `tol` in the
    max norm (relative to a unit budget scale) or after `max_iters` steps.
    """
    p = _project_budget(np.asarray(start, dtype=float), budget)
    value = float(weight @ np.log1p(coeff * p))
    grad = weight * coeff / (1.0 + coeff * p)
    curvature = float((weight * coeff * coeff).max())
    step = 1.0 / curvature if curvature > 0.0 else 1.0
    scale = max(1.0, budget)

    for _ in range(max_iters):
        trial = _project_budget(p + step * grad, budget)
        trial_value = float(weight @ np.log1p(coeff * trial))
        halvings = 0
        while trial_value < value and halvings < 60:
            step *= 0.5
            trial = _project_budget(p + step * grad, budget)
            trial_value = float(weight @ np.log1p(coeff * trial))
            halvings += 1
        if trial_value < value:
            break            # step underflowed; keep the last good iterate
        move = trial - p
        if not np.isfinite(trial_value):
            raise LrDivergenceError("best response produced a non-finite value")
        new_grad = weight * coeff / (1.0 + coeff * trial)
        gap = grad - new_grad
        sy = float(move @ gap)
        if sy > 0.0:
            step = min(max(float(move @ move) / sy, _STEP_MIN), _STEP_MAX)
        p, value, grad = trial, trial_value, new_grad
        if float(np.abs(move).max()) <= tol * scale:
            break
    return p


def _cell_best_response(scenario: Scenario, assignment: np.ndarray, m: int,
                        snapshot: np.ndarray, lam_m: np.ndarray,
                        tol: float, max_iters: int) -> np.ndarray:
    """Best response of cell m: coefficient and weight per own subcarrier."""
    n_sub = scenario.num_subcarriers
    coeff = np.zeros(n_sub)
    weight = np.zeros(n_sub)
    a = np.asarray(assignment)
    for u in range(scenario.users_per_cell[m]):
        ns = np.nonzero(a[m, u, :])[0]
        if ns.size == 0:
            continue
        cross = scenario.gains[:, m, u, ns] * snapshot[:, ns]
        denom = ((scenario.noise[m, u, ns] + cross.sum(axis=0) - cross[m])
                 * scenario.snr_gap)
        coeff[ns] = scenario.gains[m, m, u, ns] / denom
        weight[ns] = lam_m[u]
    start = np.where(weight > 0.0, snapshot[m], 0.0)
    if not weight.any():
        return np.zeros(n_sub)
    return best_response(coeff, weight, start, scenario.p_max,
                         tol=tol, max_iters=max_iters)


def lr_solve(scenario: Scenario, assignment: np.ndarray, initial_power: np.ndarray,
             *, psi: float = 0.1, max_iters: int = 200, alpha0: float = ALPHA0,
             beta: float = BETA, inner_tol: float = INNER_TOL,
             inner_max_iters: int = INNER_MAX_ITERS, workers: int = 1,
             bus: MessageBus | None = None) -> LrResult:
    """Run the relaxation until the power iterates settle.

    Outer iteration t: exchange state, let every cell best-respond to the
    previous iterate's interference (warm-started at its previous power),
    then update multipliers from the per-user rate gaps at the new powers.
    Stops like the decomposed method: stacked power movement below `psi`, or
    `max_iters` outer iterations.
    """
    if not (psi > 0.0 and np.isfinite(psi)):
        raise ValueError(f"psi must be finite and positive, got {psi!r}")
    if not isinstance(max_iters, int) or max_iters < 1:
        raise ValueError(f"max_iters must be a positive integer, got {max_iters!r}")
    validate_assignment(scenario, assignment, require_complete=True)
    validate_power(scenario, initial_power)
    if bus is None:
        bus = MessageBus()

    report_sizes = [scenario.num_subcarriers + k for k in scenario.users_per_cell]
    lam = [np.full(k, w / k) for k, w in
           zip(scenario.users_per_cell, scenario.weights)]
    power_prev = np.asarray(initial_power, dtype=float).copy()
    trace: list[IterationRecord] = []
    converged = False
    started = time.perf_counter()

    for iteration in range(1, max_iters + 1):
        bus.exchange(report_sizes)
        snapshot = power_prev

        def respond(m):
            return _cell_best_response(scenario, assignment, m, snapshot,
                                       lam[m], inner_tol, inner_max_iters)

        try:
            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    rows = list(pool.map(respond, range(scenario.num_cells)))
            else:
                rows = [respond(m) for m in range(scenario.num_cells)]
        except LrDivergenceError as exc:
            exc.iteration = iteration
            exc.trace = trace
            raise
        power_now = np.vstack(rows)
        if not np.isfinite(power_now).all():
            raise LrDivergenceError("power iterate is not finite",
                                    iteration=iteration, trace=trace)

        rates = [cell_user_rates(scenario, power_now, assignment, m)
                 for m in range(scenario.num_cells)]
        residuals = [r.mean() - r for r in rates]
        lam = update_multipliers(lam, residuals, scenario.weights, iteration - 1,
                                 alpha0=alpha0, beta=beta)

        delta = float(np.linalg.norm(power_now - power_prev))
        snapshot_wsmr = wsmr(scenario, power_now, assignment)
        trace.append(IterationRecord(
            iteration=iteration, wsmr=snapshot_wsmr.value, delta_p_norm=delta,
            min_rates=snapshot_wsmr.min_rates, messages=bus.messages_total,
            bytes=bus.bytes_total, elapsed_s=time.perf_counter() - started))
        power_prev = power_now
        if delta < psi:
            converged = True
            break

    return LrResult(power=power_prev, lam=lam, trace=trace,
                    converged=converged, iterations=len(trace))
