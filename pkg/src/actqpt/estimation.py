"""Physical probability estimation on measured frequency data.

Two estimators share one accelerated projected-gradient (APG) engine:

* `ml_probabilities` maximises the normalised multinomial log-likelihood
  over unit-trace PSD operators and reports the physical probabilities of
  the maximiser.
* `minent_estimator` picks, among all states attaining the maximal
  likelihood (the "plateau" left by non-informationally-complete data),
  one of minimal von Neumann entropy, via a barrier objective
  -lambda*S + logL with lambda << 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (
    DensityOperator,
    LOG_EIG_FLOOR,
    matrix_log,
    psd_unit_trace_project_matrix,
    von_neumann_entropy,
)
from .measurement import MeasurementRecord

logger = logging.getLogger(__name__)

__all__ = [
    "ApgConfig",
    "ApgResult",
    "MinEntConfig",
    "MlEstimate",
    "MinEntEstimate",
    "apg_maximize",
    "log_likelihood",
    "likelihood_gradient",
    "ml_probabilities",
    "minent_estimator",
]

PROB_FLOOR = 1e-14  # clip for probabilities inside logs and denominators


@dataclass
class ApgConfig:
    """Knobs for the accelerated projected-gradient ascent."""

    max_iters: int = 50_000
    grad_tol: float = 1e-8
    step_init: float = 1.0
    step_growth: float = 2.0
    backtrack: float = 0.5
    max_backtracks: int = 60
    restart: bool = True
    # secondary exits: best-value stagnation over a window, and an absolute
    # objective target (used by least-squares fits of consistent data)
    stall_patience: int = 200
    stall_rtol: float = 1e-13
    value_target: float | None = None

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise ValueError("gradient tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("need at least one iteration")


@dataclass
class ApgResult:
    x: np.ndarray
    value: float
    iterations: int
    pg_norm: float
    converged: bool
    values: list[float] = field(default_factory=list)


def apg_maximize(
    value_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    project: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    cfg: ApgConfig | None = None,
) -> ApgResult:
    """Maximise a smooth concave-ish objective over a convex set.

    Monotone FISTA variant: Nesterov momentum with backtracking line
    search, adaptive restart when the momentum opposes ascent, and a
    monotonicity guard (accepted objective values never decrease).
    """
    cfg = cfg or ApgConfig()
    x = project(np.asarray(x0, dtype=np.complex128))
    fx = value_fn(x)
    y = x
    t = 1.0
    step = cfg.step_init
    values = [fx]
    pg_norm = np.inf
    converged = False
    it = 0

    for it in range(1, cfg.max_iters + 1):
        fy = fx if y is x else value_fn(y)
        gy = grad_fn(y)

        step = min(step * cfg.step_growth, 1e12)
        z = y
        fz = fy
        for _ in range(cfg.max_backtracks):
            z = project(y + step * gy)
            dz = z - y
            fz = value_fn(z)
            gain_bound = np.real(np.vdot(gy, dz)) - np.vdot(dz, dz).real / (2.0 * step)
            if fz >= fy + gain_bound - 1e-12 * max(1.0, abs(fy)):
                break
            step *= cfg.backtrack
            if step < 1e-14:
                break

        pg_norm = float(np.linalg.norm(z - y)) / step
        if pg_norm < cfg.grad_tol:
            # verify at a unit reference step: a bounded feasible set can
            # fake a small mapping norm when the trial step is huge
            s_ref = min(step, 1.0)
            z_ref = project(y + s_ref * gy)
            pg_norm = float(np.linalg.norm(z_ref - y)) / s_ref
            if pg_norm < cfg.grad_tol:
                if fz >= fx:
                    x, fx = z, fz
                    values.append(fx)
                converged = True
                break

        x_prev = x
        if fz >= fx:
            x, fx = z, fz
        # else keep x: monotone guard (momentum overshoot).
        values.append(fx)

        if cfg.value_target is not None and fx >= cfg.value_target:
            converged = True
            break
        if len(values) > cfg.stall_patience:
            window_gain = fx - values[-1 - cfg.stall_patience]
            if window_gain <= cfg.stall_rtol * max(1.0, abs(fx)):
                converged = True
                break

        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if cfg.restart and np.real(np.vdot(gy, z - x_prev)) < 0.0:
            # momentum points against ascent: reset it, keep the objective
            t_next = 1.0
            y = x
        else:
            y = x + (t / t_next) * (z - x) + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next

    return ApgResult(x=x, value=fx, iterations=it, pg_norm=pg_norm, converged=converged, values=values)


# ---------------------------------------------------------------------------
# likelihood machinery
# ---------------------------------------------------------------------------

class _RecordStack:
    """Vectorised view of a record set: stacked projector kets + frequencies."""

    def __init__(self, records: Sequence[MeasurementRecord]):
        if not records:
            raise ValueError("need at least one measurement record")
        dims = {rec.basis.dim for rec in records}
        if len(dims) != 1:
            raise ValueError(f"records mix dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        self.n_bases = len(records)
        self.kets = np.concatenate([rec.basis.vectors.T for rec in records], axis=0)
        self.kets_conj = self.kets.conj()
        self.nu = np.concatenate([rec.frequencies for rec in records])
        self._active = self.nu > 0.0

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        w = self.kets_conj @ rho
        return np.einsum("rj,rj->r", w, self.kets).real

    def loglik(self, rho: np.ndarray) -> float:
        p = np.maximum(self.probabilities(rho), PROB_FLOOR)
        a = self._active
        return float(np.dot(self.nu[a], np.log(p[a])))

    def grad(self, rho: np.ndarray) -> np.ndarray:
        p = np.maximum(self.probabilities(rho), PROB_FLOOR)
        weights = self.nu / p
        g = (self.kets.T * weights) @ self.kets_conj
        return 0.5 * (g + g.conj().T)


def _as_matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=np.complex128)


def log_likelihood(rho, records: Sequence[MeasurementRecord]) -> float:
    """Normalised multinomial log-likelihood sum nu*log<b|rho|b> (<= 0)."""
    return _RecordStack(records).loglik(_as_matrix(rho))


def likelihood_gradient(rho, records: Sequence[MeasurementRecord]) -> np.ndarray:
    """Gradient sum |b> (nu / <b|rho|b>) <b| of the log-likelihood."""
    return _RecordStack(records).grad(_as_matrix(rho))


@dataclass
class MlEstimate:
    rho: DensityOperator
    p_hats: list[np.ndarray]
    log_likelihood: float
    iterations: int
    pg_norm: float
    converged: bool
    values: list[float] = field(default_factory=list)


def ml_probabilities(
    records: Sequence[MeasurementRecord],
    cfg: ApgConfig | None = None,
    x0: np.ndarray | None = None,
) -> MlEstimate:
    """Most-likely physical state and its per-basis probability vectors."""
    stack = _RecordStack(records)
    d = stack.dim
    start = np.eye(d, dtype=np.complex128) / d if x0 is None else x0
    res = apg_maximize(
        stack.loglik, stack.grad, psd_unit_trace_project_matrix, start, cfg
    )
    if not res.converged:
        logger.warning(
            "ML ascent hit the iteration cap (pg-norm %.2e); returning best iterate",
            res.pg_norm,
        )
    rho_hat = DensityOperator(res.x)
    p_hats = []
    for rec in records:
        p = np.maximum(rec.basis.probabilities(rho_hat.matrix), 0.0)
        p_hats.append(p)
    return MlEstimate(
        rho=rho_hat,
        p_hats=p_hats,
        log_likelihood=res.value,
        iterations=res.iterations,
        pg_norm=res.pg_norm,
        converged=res.converged,
        values=res.values,
    )


# ---------------------------------------------------------------------------
# minimum-entropy estimation over the likelihood plateau
# ---------------------------------------------------------------------------

@dataclass
class MinEntConfig:
    """Barrier weight and plateau tolerances for the minENT estimator."""

    barrier_weight: float = 1e-3  # lambda << 1
    eig_floor: float = LOG_EIG_FLOOR
    plateau_tol_per_basis: float = 1e-6
    kick_size: float = 0.05  # symmetry-breaking start perturbation
    apg: ApgConfig = field(default_factory=ApgConfig)

    def __post_init__(self):
        if not 0.0 < self.barrier_weight < 1.0:
            raise ValueError("barrier weight must lie in (0, 1)")
        if self.plateau_tol_per_basis <= 0:
            raise ValueError("plateau tolerance must be positive")


@dataclass
class MinEntEstimate:
    rho: DensityOperator
    entropy: float
    loglik_deficit: float
    barrier_weight: float
    on_plateau: bool
    iterations: int
    values: list[float] = field(default_factory=list)


def _barrier_objective(stack: _RecordStack, lam: float, eig_floor: float):
    def value(rho: np.ndarray) -> float:
        return -lam * von_neumann_entropy(rho, eig_floor) + stack.loglik(rho)

    def grad(rho: np.ndarray) -> np.ndarray:
        g = lam * (np.eye(rho.shape[0]) + matrix_log(rho, eig_floor)) + stack.grad(rho)
        return 0.5 * (g + g.conj().T)

    return value, grad


def minent_estimator(
    records: Sequence[MeasurementRecord],
    ml: MlEstimate,
    cfg: MinEntConfig | None = None,
    rng: np.random.Generator | None = None,
) -> MinEntEstimate:
    """Minimum-entropy state on the maximum-likelihood plateau.

    Maximises -lambda*S + logL with the shared APG engine, then polishes
    with a likelihood-only ascent so the returned state sits on the plateau
    to within the APG tolerance rather than O(lambda).  The small seeded
    start perturbation breaks the symmetry of exactly-degenerate noiseless
    data, where the ML estimate itself is a stationary (but entropy-maximal)
    point of the barrier objective.
    """
    cfg = cfg or MinEntConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    stack = _RecordStack(records)
    d = stack.dim
    rho_hat = ml.rho.matrix
    loglik_hat = stack.loglik(rho_hat)
    entropy_hat = von_neumann_entropy(rho_hat, cfg.eig_floor)
    plateau_tol = cfg.plateau_tol_per_basis * stack.n_bases

    best: tuple[np.ndarray, float, float] | None = None  # (rho, deficit, entropy)
    iterations = 0
    values: list[float] = []
    lam = cfg.barrier_weight
    for attempt in range(2):  # one annealing halving pass on plateau violation
        kick = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        kick = kick + kick.conj().T
        kick *= cfg.kick_size / max(np.linalg.norm(kick), 1e-30)
        start = psd_unit_trace_project_matrix(rho_hat + kick)

        value_fn, grad_fn = _barrier_objective(stack, lam, cfg.eig_floor)
        res = apg_maximize(value_fn, grad_fn, psd_unit_trace_project_matrix, start, cfg.apg)
        # likelihood-only polish: reattach to the plateau
        polish = apg_maximize(
            stack.loglik, stack.grad, psd_unit_trace_project_matrix, res.x, cfg.apg
        )
        iterations += res.iterations + polish.iterations
        values = res.values
        candidate = polish.x
        deficit = loglik_hat - stack.loglik(candidate)
        entropy = von_neumann_entropy(candidate, cfg.eig_floor)
        ok = deficit <= plateau_tol
        if best is None:
            best = (candidate, deficit, entropy)
        else:
            best_ok = best[1] <= plateau_tol
            if (ok and not best_ok) or (ok == best_ok and entropy < best[2]):
                best = (candidate, deficit, entropy)
        if ok:
            break
        lam *= 0.5
        logger.warning(
            "minENT left the likelihood plateau (deficit %.3e > %.3e); retrying with lambda=%.1e",
            deficit,
            plateau_tol,
            lam,
        )

    rho_star, deficit, entropy = best
    on_plateau = deficit <= plateau_tol
    if not on_plateau:
        logger.warning(
            "minENT still off-plateau after annealing (deficit %.3e); using best iterate",
            deficit,
        )
    if entropy > entropy_hat:
        # the ML estimate itself bounds the achievable entropy
        rho_star, deficit, entropy = rho_hat, 0.0, entropy_hat
        on_plateau = True
    return MinEntEstimate(
        rho=DensityOperator(rho_star),
        entropy=entropy,
        loglik_deficit=max(deficit, 0.0),
        barrier_weight=lam,
        on_plateau=on_plateau,
        iterations=iterations,
        values=values,
    )
