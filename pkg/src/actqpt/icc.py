"""Informational-completeness certification at state and process level.

The certificate for a convex constraint set is the spread
s_cvx = f_max - f_min of a linear witness functional f = tr(X W) over the
set, computed by a pair of conic solves.  A spread at solver noise level
means the accumulated data admit exactly one consistent operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conic import (
    EPS_FEASIBILITY,
    EPS_OBJECTIVE,
    ConicSolution,
    SplittingConeSolver,
    build_process_icc_problem,
    build_state_icc_problem,
    lifted_constraint_operator,
)
from .core import (
    ChoiOperator,
    DensityOperator,
    VonNeumannBasis,
    psd_project,
    random_full_rank_state,
)
from .estimation import ApgConfig, apg_maximize

logger = logging.getLogger(__name__)

__all__ = [
    "CertificationError",
    "IccWitness",
    "IccResult",
    "LsFitResult",
    "draw_witness",
    "state_icc",
    "ls_fit",
    "process_icc",
]


class CertificationError(RuntimeError):
    """Raised when a certification call is handed infeasible inputs or the
    solver pair returns inconsistent optima."""


@dataclass(frozen=True)
class IccWitness:
    """Fixed full-rank witness state; drawn once per run and reused so the
    per-step certificate traces are comparable."""

    level: str  # "state" | "process"
    operator: DensityOperator
    seed: int | None = None

    def __post_init__(self):
        if self.level not in ("state", "process"):
            raise ValueError("witness level must be 'state' or 'process'")
        eigs = self.operator.eigenvalues()
        if eigs.min() <= 0:
            raise ValueError("witness must be full-rank (all eigenvalues positive)")
        if abs(self.operator.trace - 1.0) > 1e-10:
            raise ValueError("witness must have unit trace")


def draw_witness(level: str, dim: int, rng, seed: int | None = None) -> IccWitness:
    """Ginibre full-rank witness on a `dim`-dimensional space."""
    return IccWitness(level=level, operator=random_full_rank_state(dim, rng), seed=seed)


@dataclass
class IccResult:
    level: str
    f_min: float
    f_max: float
    s_cvx: float
    min_solution: ConicSolution
    max_solution: ConicSolution

    @property
    def status(self) -> str:
        if self.min_solution.ok and self.max_solution.ok:
            return "optimal"
        return f"{self.min_solution.status}/{self.max_solution.status}"

    @property
    def ok(self) -> bool:
        return self.min_solution.ok and self.max_solution.ok


def _spread(f_min: float, f_max: float) -> float:
    s = f_max - f_min
    if s < -2.0 * EPS_OBJECTIVE:
        raise CertificationError(
            f"witness extrema inverted beyond solver noise: f_min={f_min!r} > f_max={f_max!r}"
        )
    return max(s, 0.0)


def _check_feasible(problem, point: np.ndarray, what: str) -> None:
    res = np.abs(problem.residuals(point)).max()
    if res > EPS_FEASIBILITY:
        raise CertificationError(
            f"{what} violates its own constraint set by {res:.3e} (> {EPS_FEASIBILITY:g})"
        )


def state_icc(
    bases: Sequence[VonNeumannBasis],
    p_hat: Sequence[np.ndarray],
    witness: IccWitness,
    feasible_point: np.ndarray | None = None,
    solver: SplittingConeSolver | None = None,
) -> IccResult:
    """Certificate over unit-trace states consistent with the ML probabilities."""
    if witness.level != "state":
        raise ValueError("state certification needs a state-level witness")
    solver = solver or SplittingConeSolver()
    prob_min = build_state_icc_problem(bases, p_hat, witness.operator, sense="min")
    if feasible_point is not None:
        _check_feasible(prob_min, feasible_point, "ML state estimate")
    sol_min, sol_max = solver.solve_pair(prob_min, x0=feasible_point)
    return IccResult(
        level="state",
        f_min=sol_min.value,
        f_max=sol_max.value,
        s_cvx=_spread(sol_min.value, sol_max.value),
        min_solution=sol_min,
        max_solution=sol_max,
    )


# ---------------------------------------------------------------------------
# least-squares process fit
# ---------------------------------------------------------------------------

@dataclass
class LsFitResult:
    d_min: float
    choi: ChoiOperator
    p_ls: list[list[np.ndarray]]
    trace_value: float
    iterations: int
    pg_norm: float
    converged: bool
    row_ops: np.ndarray = field(repr=False)  # stacked constraint operators
    row_targets: np.ndarray = field(repr=False)


def _stack_process_rows(
    inputs: Sequence[DensityOperator],
    bases: Sequence[Sequence[VonNeumannBasis]],
) -> tuple[np.ndarray, list[tuple[int, int]]]:
    ops = []
    layout = []  # (input position, basis position) per d-block
    for j, (rho_in, basis_list) in enumerate(zip(inputs, bases)):
        for k, basis in enumerate(basis_list):
            layout.append((j, k))
            for l in range(basis.dim):
                ops.append(lifted_constraint_operator(rho_in, basis.ket(l)))
    return np.stack(ops), layout


def ls_fit(
    inputs: Sequence[DensityOperator],
    bases: Sequence[Sequence[VonNeumannBasis]],
    p_hats: Sequence[Sequence[np.ndarray]],
    mus: Sequence[float],
    x0: np.ndarray | None = None,
    apg: ApgConfig | None = None,
) -> LsFitResult:
    """Least-squares fit of a PSD process operator to the scaled physical
    probabilities: minimise sum (tr(L x) - mu*p)^2 over x >= 0.

    Only positivity constrains the fit; the fitted trace is reported for
    the certification trace row.  The default start is a full-rank
    identity at the data-implied trace scale: gradient steps never touch
    data-orthogonal directions, so an interior start keeps the reported
    estimator in the relative interior of the optimal set.  (A boundary
    start such as zero can land on an extreme-trace minimiser whose trace
    row would spuriously collapse the certification set.)
    """
    if not (len(inputs) == len(bases) == len(p_hats) == len(mus)):
        raise ValueError("inputs, bases, probabilities and traces must align")
    if not inputs:
        raise ValueError("need at least one probed input state")
    d = inputs[0].dim
    ops, layout = _stack_process_rows(inputs, bases)
    for j, basis_list in enumerate(bases):
        if len(p_hats[j]) != len(basis_list):
            raise ValueError(f"input {j}: need one probability vector per basis")
    targets = np.concatenate(
        [
            float(mus[j]) * np.asarray(p, dtype=np.float64)
            for j in range(len(bases))
            for p in p_hats[j]
        ]
    )
    if targets.size != ops.shape[0]:
        raise ValueError("probability rows do not match measured bases")

    def residuals(x: np.ndarray) -> np.ndarray:
        return np.einsum("mij,ji->m", ops, x).real - targets

    def value_fn(x: np.ndarray) -> float:
        r = residuals(x)
        return -float(r @ r)

    def grad_fn(x: np.ndarray) -> np.ndarray:
        r = residuals(x)
        g = -2.0 * np.einsum("m,mij->ij", r, ops)
        return 0.5 * (g + g.conj().T)

    # absolute-stagnation exit: the fit's contract is 1e-9 on the optimal
    # value, so sub-1e-11 objective creep is noise
    cfg = apg or ApgConfig(
        max_iters=30_000, grad_tol=1e-9, stall_patience=100, stall_rtol=1e-11
    )
    if x0 is None:
        scale = d * float(np.mean(mus))
        start = scale / (d * d) * np.eye(d * d, dtype=np.complex128)
    else:
        start = x0
    res = apg_maximize(value_fn, grad_fn, psd_project, start, cfg)
    if not res.converged:
        logger.warning(
            "LS fit hit the iteration cap (pg-norm %.2e); returning best iterate",
            res.pg_norm,
        )
    x = res.x
    fitted = np.einsum("mij,ji->m", ops, x).real
    p_ls: list[list[np.ndarray]] = []
    pos = 0
    for j, basis_list in enumerate(bases):
        per_input = []
        for _ in basis_list:
            per_input.append(np.maximum(fitted[pos : pos + d], 0.0))
            pos += d
        p_ls.append(per_input)
    return LsFitResult(
        d_min=-res.value,
        choi=ChoiOperator(x, normalization="raw"),
        p_ls=p_ls,
        trace_value=float(np.trace(x).real),
        iterations=res.iterations,
        pg_norm=res.pg_norm,
        converged=res.converged,
        row_ops=ops,
        row_targets=targets,
    )


def process_icc(
    ls: LsFitResult,
    inputs: Sequence[DensityOperator],
    bases: Sequence[Sequence[VonNeumannBasis]],
    witness: IccWitness,
    solver: SplittingConeSolver | None = None,
) -> IccResult:
    """Certificate over process operators consistent with the fitted
    least-squares probabilities and trace."""
    if witness.level != "process":
        raise ValueError("process certification needs a process-level witness")
    solver = solver or SplittingConeSolver()
    prob_min = build_process_icc_problem(
        inputs, bases, ls.p_ls, ls.trace_value, witness.operator, sense="min"
    )
    _check_feasible(prob_min, ls.choi.matrix, "LS process estimate")
    sol_min, sol_max = solver.solve_pair(prob_min, x0=ls.choi.matrix)
    return IccResult(
        level="process",
        f_min=sol_min.value,
        f_max=sol_max.value,
        s_cvx=_spread(sol_min.value, sol_max.value),
        min_solution=sol_min,
        max_solution=sol_max,
    )
