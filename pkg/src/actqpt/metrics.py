"""Figures of merit and trial-level statistics.

The process fidelity is implemented exactly as printed in the source
material:  F = tr sqrt(sqrt(a) b sqrt(a)) / (tr(a) tr(b)),  with no outer
square on the numerator trace.  For equal unit-trace operands this equals
1; for generally-scaled operands it is *not* symmetric or normalised the
way the conventional (squared) fidelity is, so a `squared` switch is
provided for sensitivity checks.  The simulated "true" processes carry
unit trace, which keeps the printed formula meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChoiOperator

__all__ = [
    "FIDELITY_CAP",
    "process_fidelity",
    "bkd_baseline",
    "TrialStatistics",
    "aggregate_trials",
]

FIDELITY_CAP = 1.0 + 1e-9


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, u = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.sqrt(np.maximum(w, 0.0))
    return (u * w) @ u.conj().T


def process_fidelity(a: ChoiOperator, b: ChoiOperator, squared: bool = False) -> float:
    """Fidelity between two (generally non-trace-preserving) process operators."""
    am = a.matrix if isinstance(a, ChoiOperator) else np.asarray(a, dtype=np.complex128)
    bm = b.matrix if isinstance(b, ChoiOperator) else np.asarray(b, dtype=np.complex128)
    if am.shape != bm.shape:
        raise ValueError(f"operand shapes differ: {am.shape} vs {bm.shape}")
    tr_a = float(np.trace(am).real)
    tr_b = float(np.trace(bm).real)
    if tr_a <= 0.0 or tr_b <= 0.0:
        raise ValueError("fidelity undefined for zero-trace operands")
    ra = _psd_sqrt(am)
    inner = _psd_sqrt(ra @ bm @ ra)
    overlap = float(np.trace(inner).real)
    if squared:
        value = overlap * overlap / (tr_a * tr_b)
    else:
        value = overlap / (tr_a * tr_b)
    return float(np.clip(value, 0.0, FIDELITY_CAP))


def bkd_baseline(d: int) -> int:
    """Measurement-settings count of the unitary-assuming benchmark scheme:
    d^2 + d non-projective entangling measurements."""
    if d < 2:
        raise ValueError("dimension must be at least 2")
    return d * d + d


@dataclass(frozen=True)
class TrialStatistics:
    """Sample statistics of the measurement cost over repeated trials."""

    mean_m_ic: float
    std_m_ic: float
    count: int
    config_hash: str
    certified_count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("need at least one trial")
        if self.std_m_ic < 0:
            raise ValueError("standard deviation cannot be negative")


def aggregate_trials(reports) -> TrialStatistics:
    """Unbiased mean/std of M_IC over trials sharing one configuration."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    hashes = {r.config_hash for r in reports}
    if len(hashes) != 1:
        raise ValueError(f"cannot aggregate mixed configurations: {sorted(hashes)}")
    values = np.array([r.m_ic for r in reports], dtype=np.float64)
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return TrialStatistics(
        mean_m_ic=float(values.mean()),
        std_m_ic=std,
        count=values.size,
        config_hash=hashes.pop(),
        certified_count=sum(1 for r in reports if r.certified),
    )
