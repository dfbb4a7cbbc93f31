"""Adaptive loops: per-output-state compressive tomography and the outer
process-characterisation loop over randomly drawn input states.

Inner loop (one output state): measure a basis, compute physical ML
probabilities, certify uniqueness; if not unique, measure the eigenbasis
of the minimum-entropy plateau state next (its nearest tensor-product
basis in product mode).  Outer loop: after each input state's output is
pinned down, fit the accumulated data with a least-squares process
operator and certify process-level uniqueness; draw fresh random inputs
until the certificate clears the threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conic import SplittingConeSolver
from .core import (
    ChoiOperator,
    DensityOperator,
    SubsystemShape,
    VonNeumannBasis,
    computational_basis,
    haar_random_pure,
    partial_trace,
    random_product_pure,
    random_unitary,
)
from .estimation import (
    ApgConfig,
    MinEntConfig,
    MlEstimate,
    minent_estimator,
    ml_probabilities,
)
from .icc import IccResult, IccWitness, LsFitResult, draw_witness, ls_fit, process_icc, state_icc
from .measurement import MeasurementRecord, ProcessOracle, estimate_relative_traces

logger = logging.getLogger(__name__)

__all__ = [
    "ActConfig",
    "ActResult",
    "QptConfig",
    "QptRunReport",
    "RngStreams",
    "next_basis_entangled",
    "next_basis_product",
    "run_act",
    "run_actqpt",
]

_DEGENERACY_TOL = 1e-8


# ---------------------------------------------------------------------------
# adaptive basis selection
# ---------------------------------------------------------------------------

def _eigenbasis_with_tiebreak(matrix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal eigenbasis; degenerate blocks get a seeded Haar rotation
    so exactly-symmetric estimates never freeze the adaptive loop."""
    w, u = np.linalg.eigh(matrix)
    start = 0
    d = w.size
    while start < d:
        stop = start + 1
        while stop < d and w[stop] - w[stop - 1] < _DEGENERACY_TOL:
            stop += 1
        if stop - start > 1:
            block = u[:, start:stop]
            u[:, start:stop] = block @ random_unitary(stop - start, rng)
        start = stop
    return u


def next_basis_entangled(minent_state: DensityOperator, rng: np.random.Generator) -> VonNeumannBasis:
    """Next measurement: the eigenbasis of the minimum-entropy estimate."""
    return VonNeumannBasis(_eigenbasis_with_tiebreak(minent_state.matrix, rng))


def next_basis_product(
    minent_state: DensityOperator, shape: SubsystemShape, rng: np.random.Generator
) -> VonNeumannBasis:
    """Tensor-product surrogate of the optimal eigenbasis: eigenbases of the
    single-party reduced operators of the minimum-entropy estimate."""
    if shape.total_dim != minent_state.dim:
        raise ValueError("subsystem shape does not match the state dimension")
    vectors = np.array([[1.0 + 0.0j]])
    for party in range(shape.n_parties):
        reduced = partial_trace(minent_state.matrix, shape, keep=(party,))
        vectors = np.kron(vectors, _eigenbasis_with_tiebreak(reduced, rng))
    return VonNeumannBasis(vectors)


def _same_basis(a: VonNeumannBasis, b: VonNeumannBasis, tol: float = 1e-9) -> bool:
    """Equal as projector sets: the cross-Gram of moduli is a permutation."""
    overlap = np.abs(a.vectors.conj().T @ b.vectors) ** 2
    return bool(np.all(np.abs(overlap.sum(axis=0) - 1) < tol) and np.all(overlap.max(axis=0) > 1 - tol))


def _fresh_random_basis(
    mode: str, dim: int, shape: SubsystemShape | None, rng: np.random.Generator
) -> VonNeumannBasis:
    if mode == "product":
        vectors = np.array([[1.0 + 0.0j]])
        for d_local in shape.local_dims:
            vectors = np.kron(vectors, random_unitary(d_local, rng))
        return VonNeumannBasis(vectors)
    return VonNeumannBasis(random_unitary(dim, rng))


# ---------------------------------------------------------------------------
# single-output-state adaptive run
# ---------------------------------------------------------------------------

@dataclass
class ActConfig:
    """Knobs for one adaptive output-state characterisation."""

    mode: str = "entangled"  # or "product"
    shape: SubsystemShape | None = None
    threshold: float = 1e-3
    max_bases: int | None = None  # defaults to 4*d
    minent: MinEntConfig = field(default_factory=MinEntConfig)
    apg: ApgConfig = field(default_factory=ApgConfig)

    def __post_init__(self):
        if self.mode not in ("entangled", "product"):
            raise ValueError("mode must be 'entangled' or 'product'")
        if self.mode == "product" and self.shape is None:
            raise ValueError("product mode requires a subsystem shape")
        if self.threshold <= 0:
            raise ValueError("certification threshold must be positive")

    def bases_cap(self, dim: int) -> int:
        return self.max_bases if self.max_bases is not None else 4 * dim


@dataclass
class ActResult:
    input_index: int
    rho_in: DensityOperator
    bases: list[VonNeumannBasis]
    records: list[MeasurementRecord]
    ml: MlEstimate
    mu_hat: float
    scvx_trace: list[float]
    icc_log: list[dict]
    certified: bool
    capped: bool

    @property
    def n_bases(self) -> int:
        return len(self.bases)


def run_act(
    oracle: ProcessOracle,
    rho_in: DensityOperator,
    cfg: ActConfig,
    witness: IccWitness,
    tiebreak_rng: np.random.Generator,
    minent_rng: np.random.Generator,
    input_index: int = 1,
    solver: SplittingConeSolver | None = None,
) -> ActResult:
    """Adaptively measure one output state until its data certify unique."""
    d = oracle.dim
    solver = solver or SplittingConeSolver()
    basis = computational_basis(d)
    records: list[MeasurementRecord] = []
    bases: list[VonNeumannBasis] = []
    scvx_trace: list[float] = []
    icc_log: list[dict] = []
    ml: MlEstimate | None = None
    certified = False
    cap = cfg.bases_cap(d)

    for k in range(1, cap + 1):
        records.append(oracle.measure(rho_in, basis, input_index, k))
        bases.append(basis)
        try:
            ml = ml_probabilities(records, cfg.apg, x0=None if ml is None else ml.rho.matrix)
            icc = state_icc(bases, ml.p_hats, witness, feasible_point=ml.rho.matrix, solver=solver)
        except Exception as exc:
            raise RuntimeError(
                f"state estimation failed at input {input_index}, basis {k}: {exc}"
            ) from exc
        scvx_trace.append(icc.s_cvx)
        icc_log.append(
            {
                "level": "state",
                "input": input_index,
                "step": k,
                "f_min": icc.f_min,
                "f_max": icc.f_max,
                "s_cvx": icc.s_cvx,
                "status": icc.status,
            }
        )
        if not icc.ok:
            logger.warning(
                "state certification solver status %s at input %d step %d",
                icc.status,
                input_index,
                k,
            )
        if icc.s_cvx < cfg.threshold:
            certified = True
            break
        if k == cap:
            break
        minent = minent_estimator(records, ml, cfg.minent, minent_rng)
        if cfg.mode == "product":
            basis = next_basis_product(minent.rho, cfg.shape, tiebreak_rng)
        else:
            basis = next_basis_entangled(minent.rho, tiebreak_rng)
        if any(_same_basis(basis, old) for old in bases):
            logger.debug(
                "adaptive basis repeats an already-measured one at input %d step %d; drawing random",
                input_index,
                k,
            )
            basis = _fresh_random_basis(cfg.mode, d, cfg.shape, tiebreak_rng)

    if not certified:
        logger.warning("output state %d hit the basis cap without certification", input_index)
    mu_hat = estimate_relative_traces(records)[input_index]
    return ActResult(
        input_index=input_index,
        rho_in=rho_in,
        bases=bases,
        records=records,
        ml=ml,
        mu_hat=mu_hat,
        scvx_trace=scvx_trace,
        icc_log=icc_log,
        certified=certified,
        capped=not certified,
    )


# ---------------------------------------------------------------------------
# full process characterisation
# ---------------------------------------------------------------------------

@dataclass
class QptConfig:
    """Run-level configuration of the adaptive process characterisation."""

    dim: int
    mode: str = "entangled"
    shape: SubsystemShape | None = None
    threshold: float = 1e-3
    max_bases_per_state: int | None = None
    max_inputs: int | None = None  # defaults to d^2 + 4
    minent: MinEntConfig = field(default_factory=MinEntConfig)
    apg: ApgConfig = field(default_factory=ApgConfig)

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dimension must be at least 2")
        if self.mode == "product":
            if self.shape is None:
                # split into the smallest prime factors by default
                self.shape = _default_shape(self.dim)
            if self.shape.total_dim != self.dim:
                raise ValueError("subsystem shape does not multiply to the dimension")
        if self.threshold <= 0:
            raise ValueError("certification threshold must be positive")

    def act_config(self) -> ActConfig:
        return ActConfig(
            mode=self.mode,
            shape=self.shape,
            threshold=self.threshold,
            max_bases=self.max_bases_per_state,
            minent=self.minent,
            apg=self.apg,
        )

    def inputs_cap(self) -> int:
        return self.max_inputs if self.max_inputs is not None else self.dim * self.dim + 4

    def snapshot(self) -> dict:
        return {
            "dim": self.dim,
            "mode": self.mode,
            "shape": list(self.shape.local_dims) if self.shape else None,
            "threshold": self.threshold,
            "max_bases_per_state": self.bases_cap_value(),
            "max_inputs": self.inputs_cap(),
            "minent_barrier_weight": self.minent.barrier_weight,
            "minent_plateau_tol_per_basis": self.minent.plateau_tol_per_basis,
        }

    def bases_cap_value(self) -> int:
        return self.max_bases_per_state if self.max_bases_per_state is not None else 4 * self.dim


def _default_shape(dim: int) -> SubsystemShape:
    dims = []
    n = dim
    p = 2
    while p * p <= n:
        while n % p == 0:
            dims.append(p)
            n //= p
        p += 1
    if n > 1:
        dims.append(n)
    return SubsystemShape(tuple(dims))


@dataclass
class RngStreams:
    """Named random substreams of one trial."""

    inputs: np.random.Generator
    witness: np.random.Generator
    tiebreak: np.random.Generator
    minent: np.random.Generator

    @classmethod
    def from_master(cls, master_seed: int, trial_index: int = 0) -> "RngStreams":
        from .seeding import stream_rng

        label = f"trial{trial_index}"
        return cls(
            inputs=stream_rng(master_seed, f"inputs/{label}"),
            witness=stream_rng(master_seed, f"witness/{label}"),
            tiebreak=stream_rng(master_seed, f"tiebreak/{label}"),
            minent=stream_rng(master_seed, f"minent/{label}"),
        )


@dataclass
class QptRunReport:
    schema_version: int
    config: dict
    config_hash: str
    master_seed: int | None
    trial_index: int
    state_witness: IccWitness
    process_witness: IccWitness
    act_results: list[ActResult]
    process_steps: list[dict]
    m_ic: int
    certified: bool
    final_choi: ChoiOperator
    ls_d_min: float

    @property
    def n_inputs(self) -> int:
        return len(self.act_results)


def _draw_input(cfg: QptConfig, rng: np.random.Generator) -> DensityOperator:
    if cfg.mode == "product":
        return random_product_pure(cfg.shape, rng)
    return haar_random_pure(cfg.dim, rng)


def run_actqpt(
    oracle: ProcessOracle,
    cfg: QptConfig,
    rngs: RngStreams | None = None,
    master_seed: int | None = None,
    trial_index: int = 0,
    fidelity_probe: Callable[[ChoiOperator], float] | None = None,
) -> QptRunReport:
    """Full adaptive process characterisation against a hidden process.

    The fidelity trace is evaluated through the oracle (the truth never
    enters the adaptive logic); pass `fidelity_probe=None` on replayed or
    external data.
    """
    if oracle.dim != cfg.dim:
        raise ValueError("oracle and configuration disagree on the dimension")
    if rngs is None:
        if master_seed is None:
            raise ValueError("need either explicit rng streams or a master seed")
        rngs = RngStreams.from_master(master_seed, trial_index)
    if fidelity_probe is None:
        fidelity_probe = oracle.reference_fidelity

    d = cfg.dim
    solver = SplittingConeSolver()
    witness_y = draw_witness("state", d, rngs.witness)
    witness_z = draw_witness("process", d * d, rngs.witness)
    act_cfg = cfg.act_config()

    act_results: list[ActResult] = []
    process_steps: list[dict] = []
    inputs: list[DensityOperator] = []
    bases_per_input: list[list[VonNeumannBasis]] = []
    p_hats_per_input: list[list[np.ndarray]] = []
    mus: list[float] = []
    fit: LsFitResult | None = None
    m_cumulative = 0
    certified = False

    for j in range(1, cfg.inputs_cap() + 1):
        rho_in = _draw_input(cfg, rngs.inputs)
        act = run_act(
            oracle,
            rho_in,
            act_cfg,
            witness_y,
            rngs.tiebreak,
            rngs.minent,
            input_index=j,
            solver=solver,
        )
        act_results.append(act)
        m_cumulative += d * act.n_bases
        inputs.append(rho_in)
        bases_per_input.append(act.bases)
        p_hats_per_input.append(act.ml.p_hats)
        mus.append(act.mu_hat)

        try:
            fit = ls_fit(
                inputs,
                bases_per_input,
                p_hats_per_input,
                mus,
                x0=None if fit is None else fit.choi.matrix,
            )
            picc = process_icc(fit, inputs, bases_per_input, witness_z, solver=solver)
        except Exception as exc:
            raise RuntimeError(f"process certification failed after input {j}: {exc}") from exc
        fidelity = fidelity_probe(fit.choi) if fidelity_probe is not None else None
        process_steps.append(
            {
                "step": j,
                "m_cumulative": m_cumulative,
                "d_min": fit.d_min,
                "trace_value": fit.trace_value,
                "f_min": picc.f_min,
                "f_max": picc.f_max,
                "s_cvx": picc.s_cvx,
                "status": picc.status,
                "fidelity": fidelity,
            }
        )
        if not picc.ok:
            logger.warning("process certification solver status %s at step %d", picc.status, j)
        if picc.s_cvx < cfg.threshold:
            certified = True
            break

    if not certified:
        logger.warning("run hit the input cap without process certification")

    config = cfg.snapshot()
    config.update({"noise": oracle.noise.describe()})
    from .reportio import canonical_hash

    return QptRunReport(
        schema_version=1,
        config=config,
        config_hash=canonical_hash(config),
        master_seed=master_seed,
        trial_index=trial_index,
        state_witness=witness_y,
        process_witness=witness_z,
        act_results=act_results,
        process_steps=process_steps,
        m_ic=m_cumulative,
        certified=certified,
        final_choi=fit.choi,
        ls_d_min=fit.d_min,
    )
