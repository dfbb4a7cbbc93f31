"""Dense complex-Hermitian primitives: states, process operators, bases.

Conventions used throughout the package:

* A process is represented by its positive operator on the input(x)output
  space, ordered input-first:  rho_proc = sum_{mn} |m><n| (x) Phi[|m><n|].
  Complete positivity is then exactly positive semidefiniteness, and a
  trace-preserving process has trace d.
* Outputs are recovered as  rho_out = Tr_in[(rho_in^T (x) 1) rho_proc],
  which keeps all measurement constraints linear in the process operator.
* Simulated "true" processes are normalised to unit trace (only relative
  output traces are observable), mirroring lossy single-Kraus channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "HERM_TOL",
    "PSD_TOL",
    "LOG_EIG_FLOOR",
    "DensityOperator",
    "ChoiOperator",
    "VonNeumannBasis",
    "SubsystemShape",
    "apply_process",
    "apply_choi_matrix",
    "partial_trace",
    "project_simplex",
    "psd_project",
    "psd_unit_trace_project",
    "haar_random_pure",
    "random_product_pure",
    "random_full_rank_state",
    "random_unitary",
    "matrix_log",
    "von_neumann_entropy",
    "kraus_to_choi",
    "identity_choi",
    "computational_basis",
    "as_rng",
]

# Hermiticity tolerance for states (max-entrywise); PSD tolerance on
# eigenvalues; eigenvalue floor used inside matrix logarithms.
HERM_TOL = 1e-12
PSD_TOL = 1e-10
LOG_EIG_FLOOR = 1e-12

_CHOI_HERM_TOL = 1e-10


def as_rng(seed) -> np.random.Generator:
    """Coerce an int seed / Generator / SeedSequence into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


def _check_square(matrix: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class DensityOperator:
    """A d x d Hermitian PSD operator with 0 < trace <= 1 (sub-normalised
    operators represent lossy outputs)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _check_square(self.matrix, "DensityOperator.matrix")
        herm_err = np.abs(m - m.conj().T).max()
        if herm_err > HERM_TOL:
            raise ValueError(f"state not Hermitian: max deviation {herm_err:.3e}")
        m = _hermitize(m)
        eigs = np.linalg.eigvalsh(m)
        if eigs.min() < -PSD_TOL:
            raise ValueError(f"state not PSD: min eigenvalue {eigs.min():.3e}")
        tr = float(np.trace(m).real)
        if not (0.0 < tr <= 1.0 + PSD_TOL):
            raise ValueError(f"state trace {tr:.6g} outside (0, 1]")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def purity(self) -> float:
        return float(np.trace(self.matrix @ self.matrix).real)

    def normalized(self) -> "DensityOperator":
        return DensityOperator(self.matrix / self.trace)

    @classmethod
    def from_vector(cls, ket: np.ndarray) -> "DensityOperator":
        v = np.asarray(ket, dtype=np.complex128).reshape(-1)
        return cls(np.outer(v, v.conj()))

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim) / dim)


@dataclass(frozen=True)
class ChoiOperator:
    """Positive operator on the input(x)output space encoding a process.

    `normalization` is a bookkeeping tag: "tp" for trace d (trace-preserving
    convention), "unit" for trace 1 (simulated lossy truths), "raw" for
    anything else (e.g. least-squares fits).
    """

    matrix: np.ndarray
    normalization: str = "raw"

    def __post_init__(self):
        m = _check_square(self.matrix, "ChoiOperator.matrix")
        d = math.isqrt(m.shape[0])
        if d * d != m.shape[0]:
            raise ValueError(f"process operator size {m.shape[0]} is not a perfect square")
        herm_err = np.abs(m - m.conj().T).max()
        if herm_err > _CHOI_HERM_TOL:
            raise ValueError(f"process operator not Hermitian: max deviation {herm_err:.3e}")
        m = _hermitize(m)
        eigs = np.linalg.eigvalsh(m)
        if eigs.min() < -PSD_TOL:
            raise ValueError(f"process operator not PSD: min eigenvalue {eigs.min():.3e}")
        if np.trace(m).real <= 0.0:
            raise ValueError("process operator must have positive trace")
        if self.normalization not in ("tp", "unit", "raw"):
            raise ValueError(f"unknown normalization tag {self.normalization!r}")
        m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def in_dim(self) -> int:
        return math.isqrt(self.matrix.shape[0])

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def rank(self, tol: float = 1e-10) -> int:
        return int((np.linalg.eigvalsh(self.matrix) > tol).sum())

    def check_trace_nonincreasing(self, tol: float = 1e-8) -> bool:
        """Optional physicality check: Tr_out rho_proc <= 1_in within tol."""
        d = self.in_dim
        reduced = partial_trace(self.matrix, SubsystemShape((d, d)), keep=(0,))
        eigs = np.linalg.eigvalsh(reduced - np.eye(d))
        return bool(eigs.max() <= tol)

    def unit_normalized(self) -> "ChoiOperator":
        return ChoiOperator(self.matrix / self.trace, normalization="unit")


@dataclass(frozen=True)
class VonNeumannBasis:
    """An ordered orthonormal measurement basis of d rank-one projectors.

    `vectors` holds the basis kets as columns.
    """

    vectors: np.ndarray

    def __post_init__(self):
        v = _check_square(self.vectors, "VonNeumannBasis.vectors")
        d = v.shape[0]
        gram = v.conj().T @ v
        off = gram - np.diag(np.diag(gram))
        if np.abs(off).max() > 1e-10:
            raise ValueError("basis vectors are not pairwise orthogonal")
        norms = np.abs(np.diag(gram))
        if np.abs(norms - 1.0).max() > 1e-12:
            raise ValueError("basis vectors are not unit-norm")
        completeness = v @ v.conj().T - np.eye(d)
        if np.abs(completeness).max() > 1e-10:
            raise ValueError("basis does not resolve the identity")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def ket(self, l: int) -> np.ndarray:
        return self.vectors[:, l]

    def projector(self, l: int) -> np.ndarray:
        v = self.vectors[:, l]
        return np.outer(v, v.conj())

    def probabilities(self, rho: np.ndarray) -> np.ndarray:
        """<b_l| rho |b_l> for every l (real, may sum below 1 for lossy rho)."""
        return np.einsum("il,ij,jl->l", self.vectors.conj(), rho, self.vectors).real


def computational_basis(dim: int) -> VonNeumannBasis:
    return VonNeumannBasis(np.eye(dim, dtype=np.complex128))


@dataclass(frozen=True)
class SubsystemShape:
    """Tensor factorisation of a d-dimensional space into local parties."""

    local_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(x) for x in self.local_dims)
        if not dims or any(x < 1 for x in dims):
            raise ValueError("local dimensions must be positive integers")
        object.__setattr__(self, "local_dims", dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.local_dims))

    @property
    def n_parties(self) -> int:
        return len(self.local_dims)

    @classmethod
    def parse(cls, text: str) -> "SubsystemShape":
        """Parse '2x2' / '3,3' style shape strings."""
        parts = text.replace(",", "x").split("x")
        try:
            return cls(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise ValueError(f"cannot parse subsystem shape {text!r}") from exc


# ---------------------------------------------------------------------------
# process application and partial traces
# ---------------------------------------------------------------------------

def partial_trace(op: np.ndarray, shape: SubsystemShape, keep: Iterable[int]) -> np.ndarray:
    """Trace out all parties not in `keep`; preserves trace and Hermiticity."""
    op = np.asarray(op, dtype=np.complex128)
    dims = shape.local_dims
    n = len(dims)
    total = shape.total_dim
    if op.shape != (total, total):
        raise ValueError(
            f"operator shape {op.shape} inconsistent with subsystem dims {dims}"
        )
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= n for k in keep):
        raise ValueError(f"keep indices {keep} out of range for {n} parties")

    tensor = op.reshape(dims + dims)
    # Contract row/column indices of every traced-out party.
    traced = 0
    for party in range(n):
        if party in keep:
            continue
        axis_row = party - traced
        axis_col = axis_row + (n - traced)
        tensor = np.trace(tensor, axis1=axis_row, axis2=axis_col)
        traced += 1
    kept_dim = int(np.prod([dims[k] for k in keep])) if keep else 1
    return tensor.reshape(kept_dim, kept_dim)


def apply_choi_matrix(choi: np.ndarray, rho_in: np.ndarray) -> np.ndarray:
    """Raw-array process application: Tr_in[(rho_in^T (x) 1) choi]."""
    choi = np.asarray(choi, dtype=np.complex128)
    rho_in = np.asarray(rho_in, dtype=np.complex128)
    d = rho_in.shape[0]
    if choi.shape != (d * d, d * d):
        raise ValueError(
            f"process operator shape {choi.shape} does not match input dim {d}"
        )
    # choi as a 4-tensor [m, s, n, t]: rows (m,s), cols (n,t), input-first.
    c4 = choi.reshape(d, d, d, d)
    out = np.einsum("mn,msnt->st", rho_in, c4)
    return _hermitize(out)


def apply_process(choi: ChoiOperator, rho_in: DensityOperator) -> DensityOperator:
    """Feed `rho_in` through the process; output may be sub-normalised."""
    if choi.in_dim != rho_in.dim:
        raise ValueError(
            f"process acts on dim {choi.in_dim}, input has dim {rho_in.dim}"
        )
    out = apply_choi_matrix(choi.matrix, rho_in.matrix)
    return DensityOperator(out)


def kraus_to_choi(kraus: Sequence[np.ndarray], normalization: str = "raw") -> ChoiOperator:
    """Assemble the process operator of rho -> sum_k K rho K^dagger."""
    ops = [np.asarray(k, dtype=np.complex128) for k in kraus]
    if not ops:
        raise ValueError("need at least one Kraus operator")
    d = ops[0].shape[0]
    if any(k.shape != (d, d) for k in ops):
        raise ValueError("all Kraus operators must be square with equal dims")
    omega = np.zeros(d * d, dtype=np.complex128)
    omega[:: d + 1] = 1.0  # sum_m |m>|m>, input-first ordering
    mat = np.zeros((d * d, d * d), dtype=np.complex128)
    eye = np.eye(d)
    for k in ops:
        v = np.kron(eye, k) @ omega
        mat += np.outer(v, v.conj())
    return ChoiOperator(mat, normalization=normalization)


def identity_choi(dim: int, normalization: str = "tp") -> ChoiOperator:
    """Process operator of the identity channel (trace d under "tp")."""
    choi = kraus_to_choi([np.eye(dim)], normalization="tp")
    if normalization == "unit":
        return choi.unit_normalized()
    return choi


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    cond = u - css / idx > 0
    if not cond.any():
        raise ValueError("simplex projection received an empty support")
    rho = idx[cond][-1]
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def psd_project(h: np.ndarray) -> np.ndarray:
    """Frobenius-nearest PSD operator (eigenvalue clipping at zero)."""
    h = _hermitize(np.asarray(h, dtype=np.complex128))
    w, u = np.linalg.eigh(h)
    w = np.maximum(w, 0.0)
    return _hermitize((u * w) @ u.conj().T)


def psd_unit_trace_project(h: np.ndarray) -> DensityOperator:
    """Frobenius-nearest unit-trace PSD operator.

    Eigendecompose, project the eigenvalue vector onto the probability
    simplex, reassemble.
    """
    h = np.asarray(h, dtype=np.complex128)
    if np.abs(h - h.conj().T).max() > 1e-9:
        raise ValueError("projection input must be Hermitian")
    h = _hermitize(h)
    w, u = np.linalg.eigh(h)
    w = project_simplex(w)
    return DensityOperator(_hermitize((u * w) @ u.conj().T))


def psd_unit_trace_project_matrix(h: np.ndarray) -> np.ndarray:
    """Raw-array variant of :func:`psd_unit_trace_project` (hot paths)."""
    h = _hermitize(np.asarray(h, dtype=np.complex128))
    w, u = np.linalg.eigh(h)
    w = project_simplex(w)
    return _hermitize((u * w) @ u.conj().T)


# ---------------------------------------------------------------------------
# random objects
# ---------------------------------------------------------------------------

def haar_random_pure(dim: int, seed) -> DensityOperator:
    """Haar-random pure state of dimension `dim` (rank one, unit trace)."""
    if dim < 2:
        raise ValueError("dimension must be at least 2")
    rng = as_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    return DensityOperator.from_vector(v)


def random_product_pure(shape: SubsystemShape, seed) -> DensityOperator:
    """Tensor product of independent local Haar-random pure states."""
    rng = as_rng(seed)
    mat = np.array([[1.0 + 0.0j]])
    for d_local in shape.local_dims:
        mat = np.kron(mat, haar_random_pure(d_local, rng).matrix)
    return DensityOperator(mat)


def random_full_rank_state(dim: int, seed) -> DensityOperator:
    """Full-rank random state G G^dagger / tr with complex Ginibre G."""
    if dim < 2:
        raise ValueError("dimension must be at least 2")
    rng = as_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    m = g @ g.conj().T
    return DensityOperator(_hermitize(m / np.trace(m).real))


def random_unitary(dim: int, seed) -> np.ndarray:
    """Haar-random unitary via QR of a Ginibre matrix with phase fixing."""
    rng = as_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(g)
    phases = np.diag(r).copy()
    phases /= np.abs(phases)
    return q * phases


# ---------------------------------------------------------------------------
# spectral functions
# ---------------------------------------------------------------------------

def matrix_log(mat: np.ndarray, eig_floor: float = LOG_EIG_FLOOR) -> np.ndarray:
    """Hermitian matrix logarithm with eigenvalues clipped at `eig_floor`."""
    m = _hermitize(np.asarray(mat, dtype=np.complex128))
    w, u = np.linalg.eigh(m)
    w = np.log(np.maximum(w, eig_floor))
    return _hermitize((u * w) @ u.conj().T)


def von_neumann_entropy(rho, eig_floor: float = LOG_EIG_FLOOR) -> float:
    """S(rho) = -tr(rho log rho), natural log, singular values clipped."""
    m = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho)
    w = np.linalg.eigvalsh(_hermitize(np.asarray(m, dtype=np.complex128)))
    w = np.maximum(w, eig_floor)
    s = float(-(w * np.log(w)).sum())
    return max(s, 0.0)
