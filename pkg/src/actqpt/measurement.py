"""Simulated laboratory: noisy basis measurements on hidden processes.

The oracle owns the true process operator and a noise model.  Tomography
code only ever sees normalised frequency vectors and relative-trace
estimates, exactly as an experiment would provide them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    ChoiOperator,
    DensityOperator,
    VonNeumannBasis,
    apply_choi_matrix,
    as_rng,
)

logger = logging.getLogger(__name__)

__all__ = [
    "NoiseModel",
    "MeasurementRecord",
    "ProcessOracle",
    "born_probabilities",
    "measure",
    "estimate_relative_traces",
]


@dataclass(frozen=True)
class NoiseModel:
    """Measurement noise: none, additive Gaussian on frequencies, or
    finite-copy multinomial counting."""

    kind: str = "noiseless"
    eta: float = 0.0  # Gaussian std, in normalised-frequency units
    copies: int = 0  # copies per basis in multinomial mode

    def __post_init__(self):
        if self.kind not in ("noiseless", "gaussian", "multinomial"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and self.eta < 0:
            raise ValueError("gaussian noise level must be nonnegative")
        if self.kind == "multinomial" and self.copies < 1:
            raise ValueError("multinomial mode needs at least one copy")

    @classmethod
    def parse(cls, text: str) -> "NoiseModel":
        """Parse 'none', 'gaussian:ETA' or 'multinomial:N'."""
        text = text.strip().lower()
        if text in ("none", "noiseless", ""):
            return cls("noiseless")
        if ":" in text:
            kind, _, value = text.partition(":")
            if kind == "gaussian":
                return cls("gaussian", eta=float(value))
            if kind == "multinomial":
                return cls("multinomial", copies=int(value))
        raise ValueError(f"cannot parse noise model {text!r}")

    def describe(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian:{self.eta:g}"
        if self.kind == "multinomial":
            return f"multinomial:{self.copies}"
        return "none"


@dataclass(frozen=True)
class MeasurementRecord:
    """One basis measurement: normalised frequencies plus a raw-sum
    relative-trace estimate."""

    input_index: int
    basis_index: int
    basis: VonNeumannBasis
    frequencies: np.ndarray
    trace_estimate: float

    def __post_init__(self):
        nu = np.asarray(self.frequencies, dtype=np.float64)
        if nu.ndim != 1 or nu.size != self.basis.dim:
            raise ValueError("frequency vector length must match basis dimension")
        if nu.min() < 0:
            raise ValueError("frequencies must be nonnegative")
        if abs(nu.sum() - 1.0) > 1e-12:
            raise ValueError(f"frequencies must sum to 1, got {nu.sum():.15g}")
        if self.trace_estimate < 0:
            raise ValueError("relative-trace estimate must be nonnegative")
        nu = nu.copy()
        nu.flags.writeable = False
        object.__setattr__(self, "frequencies", nu)


def born_probabilities(rho: DensityOperator, basis: VonNeumannBasis) -> np.ndarray:
    """p_l = <b_l| rho |b_l>; sums to tr(rho) (below 1 for lossy outputs)."""
    if rho.dim != basis.dim:
        raise ValueError(f"state dim {rho.dim} does not match basis dim {basis.dim}")
    p = basis.probabilities(rho.matrix)
    return np.maximum(p, 0.0)


def _noisy_frequencies(
    p: np.ndarray, noise: NoiseModel, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """Return (normalised frequencies, raw-sum trace estimate)."""
    total = float(p.sum())
    if noise.kind == "noiseless" or (noise.kind == "gaussian" and noise.eta == 0.0):
        if total <= 0:
            logger.warning("zero-probability measurement; reporting uniform frequencies")
            return np.full(p.size, 1.0 / p.size), 0.0
        return p / total, total

    if noise.kind == "gaussian":
        raw = p + noise.eta * rng.standard_normal(p.size)
        clipped = np.maximum(raw, 0.0)
        n_clipped = int((raw < 0).sum())
        if n_clipped:
            logger.debug("clipped %d negative frequencies at zero", n_clipped)
        raw_sum = float(clipped.sum())
        if raw_sum <= 0:
            logger.warning("all frequencies clipped to zero; reporting uniform")
            return np.full(p.size, 1.0 / p.size), 0.0
        return clipped / raw_sum, raw_sum

    # multinomial: each basis consumes `copies` input copies; undetected
    # copies (lossy process, sum p < 1) carry the trace information.
    n = noise.copies
    survive = min(total, 1.0)
    detected = int(rng.binomial(n, survive)) if survive < 1.0 else n
    if detected == 0:
        logger.warning("no detections in multinomial draw; reporting uniform")
        return np.full(p.size, 1.0 / p.size), 0.0
    counts = rng.multinomial(detected, p / total)
    return counts / detected, detected / n


class ProcessOracle:
    """Hidden true process plus noise; answers measurement requests.

    Holds mutable RNG state, so one oracle instance belongs to one worker.
    """

    def __init__(self, truth: ChoiOperator, noise: NoiseModel, seed):
        self._truth = truth
        self.noise = noise
        self._rng = as_rng(seed)

    @property
    def dim(self) -> int:
        return self._truth.in_dim

    def output_state_matrix(self, rho_in: DensityOperator) -> np.ndarray:
        return apply_choi_matrix(self._truth.matrix, rho_in.matrix)

    def measure(
        self,
        rho_in: DensityOperator,
        basis: VonNeumannBasis,
        input_index: int = 0,
        basis_index: int = 0,
    ) -> MeasurementRecord:
        if rho_in.dim != self.dim or basis.dim != self.dim:
            raise ValueError("input state / basis dimension does not match process")
        out = self.output_state_matrix(rho_in)
        p = np.maximum(basis.probabilities(out), 0.0)
        nu, mu = _noisy_frequencies(p, self.noise, self._rng)
        return MeasurementRecord(
            input_index=input_index,
            basis_index=basis_index,
            basis=basis,
            frequencies=nu,
            trace_estimate=mu,
        )

    # The truth never leaves the oracle; reporting code asks for scalar
    # comparisons instead of the operator itself.
    def reference_fidelity(self, estimate: ChoiOperator, squared: bool = False) -> float:
        from .metrics import process_fidelity

        return process_fidelity(estimate, self._truth, squared=squared)

    def reference_trace(self) -> float:
        return self._truth.trace


def measure(
    oracle: ProcessOracle,
    rho_in: DensityOperator,
    basis: VonNeumannBasis,
    input_index: int = 0,
    basis_index: int = 0,
) -> MeasurementRecord:
    """Functional alias for :meth:`ProcessOracle.measure`."""
    return oracle.measure(rho_in, basis, input_index, basis_index)


def estimate_relative_traces(records: Iterable[MeasurementRecord]) -> dict[int, float]:
    """Per-input relative traces: mean of the raw-sum estimates.

    Exact (equal to tr rho_out) in noiseless mode; proportional up to one
    common factor otherwise.
    """
    sums: dict[int, list[float]] = {}
    for rec in records:
        sums.setdefault(rec.input_index, []).append(rec.trace_estimate)
    if not sums:
        raise ValueError("no measurement records supplied")
    return {j: float(np.mean(vals)) for j, vals in sorted(sums.items())}
