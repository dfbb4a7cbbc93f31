"""Linear objectives over the PSD cone with affine equality constraints.

Reference solver: two-block operator splitting (ADMM form).  One block is
the affine subspace {X : tr(A_i X) = b_i}, projected via a cached
eigen-factorisation of the constraint Gram matrix; the other is the PSD
cone, projected by eigenvalue clipping.  Scaled dual updates,
over-relaxation and residual-balanced penalty adaptation keep iteration
counts low; constraint rows are normalised to unit Frobenius norm
(diagonal preconditioning).  Redundant rows are permitted: the
least-squares projection is well defined regardless of rank.

Certification instances routinely pinch onto low-rank faces of the cone
(a pure state pinned by its own eigenbasis, a rank-one process at the
certified endpoint).  Splitting iterations crawl on such tangential
geometry, so the solver first attempts *facial reduction*: it searches for
a certificate y with  sum_i y_i A_i >= 0  and  b.y = 0, which proves that
every feasible point is supported on the certificate's kernel.  The
problem is then restricted to that face, where the intersection is
transversal again.  Reduction is validated spectrally and simply skipped
when no clean certificate exists, so it never changes the answer.

The module is solver-agnostic at the call sites: anything implementing
`solve(problem, ...) -> ConicSolution` can replace `SplittingConeSolver`.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import DensityOperator, VonNeumannBasis

__all__ = [
    "EPS_FEASIBILITY",
    "EPS_OBJECTIVE",
    "ConicProblem",
    "ConicSolution",
    "SplittingConeSolver",
    "solve",
    "build_state_icc_problem",
    "build_process_icc_problem",
    "lifted_constraint_operator",
    "dump_problem",
    "load_problem",
]

# Solver contracts: feasibility of the returned optimiser, and objective
# accuracy on well-posed instances.  Both sit two orders of magnitude below
# the 1e-3 certification threshold.
EPS_FEASIBILITY = 1e-7
EPS_OBJECTIVE = 1e-6

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class ConicProblem:
    """optimise tr(C X)  s.t.  tr(A_i X) = b_i,  X >= 0 (Hermitian X)."""

    objective: np.ndarray  # Hermitian C, (n, n)
    constraint_ops: np.ndarray  # stacked Hermitian A_i, (m, n, n)
    constraint_values: np.ndarray  # (m,)
    sense: str = "min"

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=np.complex128)
        ops = np.asarray(self.constraint_ops, dtype=np.complex128)
        vals = np.asarray(self.constraint_values, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("objective must be a square matrix")
        n = c.shape[0]
        if ops.ndim != 3 or ops.shape[1:] != (n, n):
            raise ValueError("constraint operators must be stacked (m, n, n)")
        if vals.shape != (ops.shape[0],):
            raise ValueError("one value per constraint operator required")
        if self.sense not in ("min", "max"):
            raise ValueError(f"sense must be 'min' or 'max', got {self.sense!r}")
        for name, arr in (("objective", c[None]), ("constraints", ops)):
            if arr.size and np.abs(arr - arr.conj().transpose(0, 2, 1)).max() > 1e-10:
                raise ValueError(f"{name} must be Hermitian")
        c = c.copy()
        c.flags.writeable = False
        ops = ops.copy()
        ops.flags.writeable = False
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "constraint_ops", ops)
        object.__setattr__(self, "constraint_values", vals)

    @property
    def size(self) -> int:
        return self.objective.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.constraint_ops.shape[0]

    def with_sense(self, sense: str) -> "ConicProblem":
        return replace(self, sense=sense)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """tr(A_i x) - b_i for every row (unnormalised)."""
        if self.n_constraints == 0:
            return np.zeros(0)
        vals = np.einsum("mij,ji->m", self.constraint_ops, x).real
        return vals - self.constraint_values


@dataclass
class ConicSolution:
    value: float
    optimizer: np.ndarray
    primal_residual: float
    dual_residual: float
    affine_residual: float
    iterations: int
    status: str  # optimal | max-iterations | infeasible-suspected
    reduced_dim: int | None = None  # facial-reduction face size, if applied

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# real isometric vectorisation of Hermitian matrices
# ---------------------------------------------------------------------------

def _herm_to_real(x: np.ndarray, iu: tuple) -> np.ndarray:
    return np.concatenate([np.diagonal(x).real, _SQRT2 * x[iu].real, _SQRT2 * x[iu].imag])


def _real_to_herm(v: np.ndarray, n: int, iu: tuple) -> np.ndarray:
    k = iu[0].size
    x = np.zeros((n, n), dtype=np.complex128)
    x[iu] = (v[n : n + k] + 1j * v[n + k :]) / _SQRT2
    x = x + x.conj().T
    x[np.diag_indices(n)] = v[:n]
    return x


class _ProblemData:
    """Row-normalised real vectorisation of a problem plus the cached
    least-squares factorisation of its constraint Gram matrix."""

    def __init__(self, problem: ConicProblem, rcond: float = 1e-12):
        n = problem.size
        self.n = n
        self.iu = np.triu_indices(n, k=1)
        m = problem.n_constraints
        rows = np.empty((m, n * n), dtype=np.float64)
        for i in range(m):
            rows[i] = _herm_to_real(problem.constraint_ops[i], self.iu)
        b = problem.constraint_values.astype(np.float64).copy()
        # floor the row scales: normalising a numerically-zero operator row
        # would amplify roundoff into a spurious hard constraint
        scales = np.maximum(np.linalg.norm(rows, axis=1), 1e-10)
        rows /= scales[:, None]
        b /= scales
        self.rows = rows
        self.b = b
        self.scales = scales
        gram = rows @ rows.T
        w, q = np.linalg.eigh(gram) if m else (np.zeros(0), np.zeros((0, 0)))
        w_max = w.max() if m else 1.0
        self.q = q
        self.inv_w = np.where(w > rcond * max(w_max, 1.0), 1.0 / np.maximum(w, 1e-300), 0.0)

    def gram_solve(self, r: np.ndarray) -> np.ndarray:
        return self.q @ (self.inv_w * (self.q.T @ r))

    def affine_project(self, v: np.ndarray) -> np.ndarray:
        if self.rows.shape[0] == 0:
            return v
        r = self.rows @ v - self.b
        return v - self.rows.T @ self.gram_solve(r)


# ---------------------------------------------------------------------------
# facial reduction
# ---------------------------------------------------------------------------

# Certificate validity gates (relative to the certificate's top eigenvalue).
_FR_RANK_TOL = 1e-7  # eigenvalue threshold for the face hint's rank
_FR_PSD_TOL = 1e-12  # allowed negative part of the certificate
_FR_ZERO_TOL = 1e-9  # kernel group of the certificate
_FR_POS_TOL = 1e-2  # positive group must clear this gap
_FR_VALUE_TOL = 1e-12  # allowed |b.y|


def _reduce_once(
    problem: ConicProblem, data: _ProblemData, x0: np.ndarray
) -> tuple[np.ndarray, np.ndarray] | None:
    """One facial-reduction round.  Returns (V, x0_reduced) or None.

    Searches for y with  sum y_i A_i ~ projector onto ker(x0), b.y = 0.
    A spectrally clean PSD certificate proves the feasible set is supported
    on its kernel; reduction is rejected otherwise.
    """
    n = problem.size
    w, u = np.linalg.eigh(x0)
    w_max = max(w.max(), 0.0)
    if w_max <= 0.0:
        return None
    rank = int((w > _FR_RANK_TOL * w_max).sum())
    if rank >= n:
        return None

    low = u[:, : n - rank]
    target = _herm_to_real(low @ low.conj().T, data.iu)
    # constrained least squares:  min ||R^T y - target||  s.t.  b . y = 0
    y = data.gram_solve(data.rows @ target)
    gb = data.gram_solve(data.b)
    denom = float(data.b @ gb)
    if denom > 1e-30:
        y = y - gb * (float(data.b @ y) / denom)
    if abs(float(data.b @ y)) > 1e-10:
        return None

    cert = _real_to_herm(data.rows.T @ y, n, data.iu)
    ew, ev = np.linalg.eigh(cert)
    top = float(ew.max())
    if top <= 1e-10:
        return None
    rel = ew / top
    if rel.min() < -_FR_PSD_TOL:
        return None
    if abs(float(data.b @ y)) > _FR_VALUE_TOL * top:
        return None
    kernel = np.abs(rel) <= _FR_ZERO_TOL
    positive = rel >= _FR_POS_TOL
    if not np.all(kernel | positive):
        return None  # no clean spectral split: reject
    r_face = int(kernel.sum())
    if r_face == 0 or r_face >= n:
        return None
    v_face = ev[:, kernel]
    # the face must carry the feasible point we were handed
    if float(np.einsum("ij,ji->", cert / top, x0).real) > 1e-8 * max(np.trace(x0).real, 1e-30):
        return None
    x0_red = v_face.conj().T @ x0 @ v_face
    return v_face, 0.5 * (x0_red + x0_red.conj().T)


def _project_problem(problem: ConicProblem, v: np.ndarray) -> ConicProblem:
    ops = np.einsum("ia,mij,jb->mab", v.conj(), problem.constraint_ops, v)
    ops = 0.5 * (ops + ops.conj().transpose(0, 2, 1))
    obj = v.conj().T @ problem.objective @ v
    return ConicProblem(
        objective=0.5 * (obj + obj.conj().T),
        constraint_ops=ops,
        constraint_values=problem.constraint_values,
        sense=problem.sense,
    )


def _scale_problem(problem: ConicProblem, sq: np.ndarray) -> ConicProblem:
    """Similarity change of variables X = sq M sq (sq Hermitian PD)."""
    return _project_problem(problem, sq)


# ---------------------------------------------------------------------------
# the splitting solver
# ---------------------------------------------------------------------------

class SplittingConeSolver:
    """Operator-splitting solver for :class:`ConicProblem`.

    When a feasible point is supplied it is used twice: as a face hint for
    facial reduction, and as a similarity scaling  X = X0^(1/2) M X0^(1/2)
    (with X0 the regularised feasible point) that maps the typically thin
    feasible sliver onto a well-conditioned set in M-space.  Both are exact
    changes of variables; residuals are always re-checked in the original
    coordinates.
    """

    def __init__(
        self,
        stop_tol: float = 1e-10,
        max_iters: int = 50_000,
        penalty: float = 1.0,
        over_relaxation: float = 1.7,
        adapt_every: int = 50,
        rcond: float = 1e-12,
        facial_reduction: bool = True,
        estimator_scaling: bool = True,
        scaling_shift: float = 1e-2,
    ):
        self.stop_tol = stop_tol
        self.max_iters = max_iters
        self.penalty = penalty
        self.over_relaxation = over_relaxation
        self.adapt_every = adapt_every
        self.rcond = rcond
        self.facial_reduction = facial_reduction
        self.estimator_scaling = estimator_scaling
        self.scaling_shift = scaling_shift

    # -- core ADMM on a prepared problem -----------------------------------
    def _admm(
        self,
        problem: ConicProblem,
        data: _ProblemData,
        x0: np.ndarray | None,
    ) -> tuple[np.ndarray, float, float, int, bool, bool]:
        n = data.n
        iu = data.iu
        sign = 1.0 if problem.sense == "min" else -1.0
        c = sign * _herm_to_real(problem.objective, iu)

        z = _herm_to_real(np.asarray(x0, dtype=np.complex128), iu) if x0 is not None else np.zeros(n * n)
        u = np.zeros(n * n)
        rho = self.penalty
        alpha = self.over_relaxation
        scale_ref = max(1.0, float(np.linalg.norm(data.b)))
        primal = dual = np.inf
        stall = 0
        last_primal = np.inf
        it = 0
        for it in range(1, self.max_iters + 1):
            x = data.affine_project(z - u - c / rho)
            x_relaxed = alpha * x + (1.0 - alpha) * z
            z_old = z
            mat = _real_to_herm(x_relaxed + u, n, iu)
            ew, ev = np.linalg.eigh(mat)
            np.maximum(ew, 0.0, out=ew)
            z = _herm_to_real((ev * ew) @ ev.conj().T, iu)
            u = u + x_relaxed - z

            primal = float(np.linalg.norm(x - z))
            dual = float(rho * np.linalg.norm(z - z_old))
            if primal <= self.stop_tol * scale_ref and dual <= self.stop_tol * scale_ref:
                break
            if it % self.adapt_every == 0:
                if primal > 10.0 * dual:
                    rho *= 2.0
                    u *= 0.5
                elif dual > 10.0 * primal:
                    rho *= 0.5
                    u *= 2.0
                if primal > 0.9 * last_primal and primal > 1e-4 * scale_ref:
                    stall += 1
                else:
                    stall = 0
                last_primal = primal

        converged = primal <= self.stop_tol * scale_ref and dual <= self.stop_tol * scale_ref
        x_mat = _real_to_herm(z, n, iu)  # PSD by construction
        return x_mat, primal, dual, it, converged, stall >= 20

    def _prepare(
        self, problem: ConicProblem, x0: np.ndarray | None
    ) -> tuple[ConicProblem, _ProblemData, np.ndarray | None, np.ndarray | None, np.ndarray | None]:
        """Row data + facial reduction + estimator scaling (when hinted)."""
        data = _ProblemData(problem, rcond=self.rcond)
        if x0 is None:
            return problem, data, None, None, None
        v_total: np.ndarray | None = None
        reduced = problem
        x_cur = np.asarray(x0, dtype=np.complex128)
        if self.facial_reduction:
            for _ in range(3):
                step = _reduce_once(reduced, data, x_cur)
                if step is None:
                    break
                v_face, x_cur = step
                reduced = _project_problem(reduced, v_face)
                v_total = v_face if v_total is None else v_total @ v_face
                data = _ProblemData(reduced, rcond=self.rcond)
                if reduced.size <= 1:
                    break
        sq: np.ndarray | None = None
        if self.estimator_scaling and reduced.size > 1:
            w0, u0 = np.linalg.eigh(x_cur)
            shift = self.scaling_shift * max(w0.max(), 0.0)
            if shift > 0.0:
                lam = np.maximum(w0, 0.0) + shift
                sq = (u0 * np.sqrt(lam)) @ u0.conj().T
                sq_inv = (u0 * (1.0 / np.sqrt(lam))) @ u0.conj().T
                x_cur = sq_inv @ x_cur @ sq_inv.conj().T
                x_cur = 0.5 * (x_cur + x_cur.conj().T)
                reduced = _scale_problem(reduced, sq)
                data = _ProblemData(reduced, rcond=self.rcond)
        return reduced, data, x_cur, v_total, sq

    def _finalize(
        self,
        original: ConicProblem,
        x_mat: np.ndarray,
        v_total: np.ndarray | None,
        sq: np.ndarray | None,
        primal: float,
        dual: float,
        iters: int,
        converged: bool,
        stalled: bool,
    ) -> ConicSolution:
        if sq is not None:
            x_mat = sq @ x_mat @ sq.conj().T
        if v_total is not None:
            x_mat = v_total @ x_mat @ v_total.conj().T
        x_mat = 0.5 * (x_mat + x_mat.conj().T)
        affine_res = (
            float(np.abs(original.residuals(x_mat)).max()) if original.n_constraints else 0.0
        )
        value = float(np.einsum("ij,ji->", original.objective, x_mat).real)
        if converged and affine_res <= EPS_FEASIBILITY:
            status = "optimal"
        elif stalled:
            status = "infeasible-suspected"
        else:
            status = "max-iterations"
        return ConicSolution(
            value=value,
            optimizer=x_mat,
            primal_residual=primal,
            dual_residual=dual,
            affine_residual=affine_res,
            iterations=iters,
            status=status,
            reduced_dim=None if v_total is None else v_total.shape[1],
        )

    def solve(self, problem: ConicProblem, x0: np.ndarray | None = None) -> ConicSolution:
        reduced, data, x_start, v_total, sq = self._prepare(problem, x0)
        x_mat, primal, dual, iters, converged, stalled = self._admm(reduced, data, x_start)
        return self._finalize(problem, x_mat, v_total, sq, primal, dual, iters, converged, stalled)

    def solve_pair(
        self, problem: ConicProblem, x0: np.ndarray | None = None
    ) -> tuple[ConicSolution, ConicSolution]:
        """Solve min and max of the same constraint set, sharing the row
        factorisation, facial reduction and scaling."""
        reduced, data, x_start, v_total, sq = self._prepare(problem, x0)
        out = []
        for sense in ("min", "max"):
            prob_s = reduced.with_sense(sense)
            x_mat, primal, dual, iters, converged, stalled = self._admm(prob_s, data, x_start)
            out.append(
                self._finalize(
                    problem.with_sense(sense), x_mat, v_total, sq, primal, dual, iters, converged, stalled
                )
            )
        return out[0], out[1]


def solve(
    problem: ConicProblem,
    tol: float = EPS_FEASIBILITY,
    x0: np.ndarray | None = None,
    solver: SplittingConeSolver | None = None,
) -> ConicSolution:
    """Solve with the reference splitting solver (pluggable)."""
    if solver is None:
        solver = SplittingConeSolver(stop_tol=min(tol * 1e-2, 1e-9))
    return solver.solve(problem, x0=x0)


# ---------------------------------------------------------------------------
# certification problem builders
# ---------------------------------------------------------------------------

def build_state_icc_problem(
    bases: Sequence[VonNeumannBasis],
    p_hat: Sequence[np.ndarray],
    witness: DensityOperator,
    sense: str = "min",
) -> ConicProblem:
    """Witness optimisation over unit-trace states matching the measured
    physical probabilities: one row per (basis, outcome) plus the trace row."""
    if len(bases) != len(p_hat):
        raise ValueError("need one probability vector per basis")
    if not bases:
        raise ValueError("need at least one measured basis")
    d = bases[0].dim
    if witness.dim != d:
        raise ValueError("witness dimension does not match the state space")
    ops = []
    vals = []
    for basis, probs in zip(bases, p_hat):
        probs = np.asarray(probs, dtype=np.float64)
        if basis.dim != d or probs.shape != (d,):
            raise ValueError("basis/probability dimensions are inconsistent")
        for l in range(d):
            ops.append(basis.projector(l))
            vals.append(float(probs[l]))
    ops.append(np.eye(d, dtype=np.complex128))
    vals.append(1.0)
    return ConicProblem(
        objective=witness.matrix,
        constraint_ops=np.stack(ops),
        constraint_values=np.array(vals),
        sense=sense,
    )


def lifted_constraint_operator(rho_in: DensityOperator, ket: np.ndarray) -> np.ndarray:
    """Operator L with tr(L rho_proc) = <b| Phi[rho_in] |b> under the
    input-first convention: L = rho_in^T (x) |b><b|."""
    proj = np.outer(ket, ket.conj())
    return np.kron(rho_in.matrix.T, proj)


def build_process_icc_problem(
    inputs: Sequence[DensityOperator],
    bases: Sequence[Sequence[VonNeumannBasis]],
    p_ls: Sequence[Sequence[np.ndarray]],
    trace_value: float,
    witness: DensityOperator,
    sense: str = "min",
) -> ConicProblem:
    """Witness optimisation over process operators reproducing the fitted
    least-squares probabilities, pinned to the fitted trace."""
    if not (len(inputs) == len(bases) == len(p_ls)):
        raise ValueError("inputs, bases and probabilities must align")
    if not inputs:
        raise ValueError("need at least one probed input state")
    d = inputs[0].dim
    if witness.dim != d * d:
        raise ValueError("process witness must live on the input(x)output space")
    ops = []
    vals = []
    for rho_in, basis_list, prob_list in zip(inputs, bases, p_ls):
        if rho_in.dim != d:
            raise ValueError("all input states must share one dimension")
        if len(basis_list) != len(prob_list):
            raise ValueError("need one probability vector per measured basis")
        for basis, probs in zip(basis_list, prob_list):
            probs = np.asarray(probs, dtype=np.float64)
            for l in range(d):
                ops.append(lifted_constraint_operator(rho_in, basis.ket(l)))
                vals.append(float(probs[l]))
    ops.append(np.eye(d * d, dtype=np.complex128))
    vals.append(float(trace_value))
    return ConicProblem(
        objective=witness.matrix,
        constraint_ops=np.stack(ops),
        constraint_values=np.array(vals),
        sense=sense,
    )


# ---------------------------------------------------------------------------
# self-describing problem dump (for cross-checks with external solvers)
# ---------------------------------------------------------------------------

def _write_matrix(out: io.StringIO, mat: np.ndarray) -> None:
    for row in mat:
        out.write(" ".join(f"{v.real!r} {v.imag!r}" for v in row))
        out.write("\n")


def dump_problem(problem: ConicProblem) -> str:
    out = io.StringIO()
    out.write("conic-problem v1\n")
    out.write(f"size {problem.size}\n")
    out.write(f"sense {problem.sense}\n")
    out.write("objective\n")
    _write_matrix(out, problem.objective)
    for op, val in zip(problem.constraint_ops, problem.constraint_values):
        out.write(f"constraint {val!r}\n")
        _write_matrix(out, op)
    return out.getvalue()


def load_problem(text: str) -> ConicProblem:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "conic-problem v1":
        raise ValueError("not a conic problem dump")
    n = int(lines[1].split()[1])
    sense = lines[2].split()[1]

    def read_matrix(start: int) -> tuple[np.ndarray, int]:
        mat = np.zeros((n, n), dtype=np.complex128)
        for i in range(n):
            parts = [float(t) for t in lines[start + i].split()]
            mat[i] = np.array(parts[0::2]) + 1j * np.array(parts[1::2])
        return mat, start + n

    if lines[3].strip() != "objective":
        raise ValueError("malformed dump: missing objective block")
    objective, pos = read_matrix(4)
    ops = []
    vals = []
    while pos < len(lines) and lines[pos].strip():
        head = lines[pos].split()
        if head[0] != "constraint":
            raise ValueError(f"malformed dump at line {pos + 1}")
        vals.append(float(head[1]))
        op, pos = read_matrix(pos + 1)
        ops.append(op)
    return ConicProblem(
        objective=objective,
        constraint_ops=np.stack(ops) if ops else np.zeros((0, n, n), dtype=np.complex128),
        constraint_values=np.array(vals),
        sense=sense,
    )
