"""Serialisation of run artifacts and the on-disk text formats.

All JSON is canonical (sorted keys, compact separators, floats written with
full round-trip precision) so identical runs produce byte-identical files
and `deserialize(serialize(x))` re-serialises to the same bytes.  Matrix
files are line-oriented text with explicit real/imaginary pairs, row-major,
with a dimension header: diffable and easy to generate externally.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ChoiOperator, DensityOperator, VonNeumannBasis
from .estimation import MlEstimate
from .icc import IccWitness
from .measurement import MeasurementRecord
from .metrics import TrialStatistics

__all__ = [
    "SCHEMA_VERSION",
    "canonical_json",
    "canonical_hash",
    "serialize_report",
    "deserialize_report",
    "report_trace_rows",
    "trace_rows_to_csv",
    "csv_to_trace_rows",
    "serialize_statistics",
    "deserialize_statistics",
    "write_choi_file",
    "read_choi_file",
    "write_kraus_file",
    "read_kraus_file",
    "read_spectrum_file",
    "write_records_file",
    "read_records_file",
    "RecordsFileError",
]

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def _plain(obj):
    """Recursively convert numpy scalars/arrays into plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, compact, lossless floats."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def canonical_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:12]


def _matrix_json(mat: np.ndarray) -> dict:
    m = np.asarray(mat)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def _matrix_from_json(data: dict) -> np.ndarray:
    return np.asarray(data["re"], dtype=np.float64) + 1j * np.asarray(data["im"], dtype=np.float64)


# ---------------------------------------------------------------------------
# run reports
# ---------------------------------------------------------------------------

def _record_json(rec: MeasurementRecord) -> dict:
    return {
        "basis_index": rec.basis_index,
        "vectors": _matrix_json(rec.basis.vectors),
        "frequencies": rec.frequencies.tolist(),
        "trace_estimate": rec.trace_estimate,
    }


def _act_json(act) -> dict:
    return {
        "index": act.input_index,
        "rho_in": _matrix_json(act.rho_in.matrix),
        "mu_hat": act.mu_hat,
        "records": [_record_json(r) for r in act.records],
        "p_hats": [p.tolist() for p in act.ml.p_hats],
        "ml_rho": _matrix_json(act.ml.rho.matrix),
        "ml_log_likelihood": act.ml.log_likelihood,
        "scvx_trace": list(act.scvx_trace),
        "icc_log": act.icc_log,
        "certified": act.certified,
        "capped": act.capped,
    }


def serialize_report(report, format: str = "json") -> bytes:
    """Serialise a run report: "json" = full report, "csv" = trace table."""
    fmt = format.lower()
    if fmt == "csv":
        return trace_rows_to_csv(report_trace_rows(report)).encode("utf-8")
    if fmt != "json":
        raise ValueError(f"unknown serialisation format {format!r}")
    payload = {
        "kind": "qpt-run-report",
        "schema_version": report.schema_version,
        "config": report.config,
        "config_hash": report.config_hash,
        "master_seed": report.master_seed,
        "trial_index": report.trial_index,
        "state_witness": _matrix_json(report.state_witness.operator.matrix),
        "process_witness": _matrix_json(report.process_witness.operator.matrix),
        "inputs": [_act_json(a) for a in report.act_results],
        "process_steps": report.process_steps,
        "m_ic": report.m_ic,
        "certified": report.certified,
        "final_choi": _matrix_json(report.final_choi.matrix),
        "ls_d_min": report.ls_d_min,
    }
    return canonical_json(payload).encode("utf-8")


def deserialize_report(blob: bytes | str):
    """Rebuild a QptRunReport from its JSON serialisation.

    Iteration diagnostics are not stored, so the reconstructed ML estimates
    carry only the fields the file defines; re-serialising the result is
    byte-identical to the input.
    """
    from .tomography import ActResult, QptRunReport

    data = json.loads(blob if isinstance(blob, str) else blob.decode("utf-8"))
    if data.get("kind") != "qpt-run-report":
        raise ValueError("not a run-report file")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"unsupported report schema version {data.get('schema_version')!r}"
        )
    acts = []
    for blk in data["inputs"]:
        records = [
            MeasurementRecord(
                input_index=blk["index"],
                basis_index=rec["basis_index"],
                basis=VonNeumannBasis(_matrix_from_json(rec["vectors"])),
                frequencies=np.asarray(rec["frequencies"], dtype=np.float64),
                trace_estimate=rec["trace_estimate"],
            )
            for rec in blk["records"]
        ]
        ml = MlEstimate(
            rho=DensityOperator(_matrix_from_json(blk["ml_rho"])),
            p_hats=[np.asarray(p, dtype=np.float64) for p in blk["p_hats"]],
            log_likelihood=blk["ml_log_likelihood"],
            iterations=0,
            pg_norm=0.0,
            converged=True,
        )
        acts.append(
            ActResult(
                input_index=blk["index"],
                rho_in=DensityOperator(_matrix_from_json(blk["rho_in"])),
                bases=[r.basis for r in records],
                records=records,
                ml=ml,
                mu_hat=blk["mu_hat"],
                scvx_trace=list(blk["scvx_trace"]),
                icc_log=blk["icc_log"],
                certified=blk["certified"],
                capped=blk["capped"],
            )
        )
    state_w = IccWitness("state", DensityOperator(_matrix_from_json(data["state_witness"])))
    process_w = IccWitness("process", DensityOperator(_matrix_from_json(data["process_witness"])))
    return QptRunReport(
        schema_version=data["schema_version"],
        config=data["config"],
        config_hash=data["config_hash"],
        master_seed=data["master_seed"],
        trial_index=data["trial_index"],
        state_witness=state_w,
        process_witness=process_w,
        act_results=acts,
        process_steps=data["process_steps"],
        m_ic=data["m_ic"],
        certified=data["certified"],
        final_choi=ChoiOperator(_matrix_from_json(data["final_choi"]), normalization="raw"),
        ls_d_min=data["ls_d_min"],
    )


# ---------------------------------------------------------------------------
# trace tables (CSV)
# ---------------------------------------------------------------------------

_TRACE_COLUMNS = ("step", "M", "s_cvx_state", "s_cvx_process", "fidelity", "K_j", "j")


def report_trace_rows(report) -> list[dict]:
    """One row per state-level step; process-level columns are filled on the
    closing step of each probed input."""
    rows = []
    d = report.config["dim"]
    step = 0
    m = 0
    for act, proc in zip(report.act_results, _padded_steps(report)):
        for k, s_state in enumerate(act.scvx_trace, start=1):
            step += 1
            m += d
            last = k == len(act.scvx_trace)
            rows.append(
                {
                    "step": step,
                    "M": m,
                    "s_cvx_state": s_state,
                    "s_cvx_process": proc["s_cvx"] if last and proc else None,
                    "fidelity": proc["fidelity"] if last and proc else None,
                    "K_j": k,
                    "j": act.input_index,
                }
            )
    return rows


def _padded_steps(report):
    steps = list(report.process_steps)
    steps += [None] * (len(report.act_results) - len(steps))
    return steps


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def trace_rows_to_csv(rows: Iterable[dict]) -> str:
    lines = [",".join(_TRACE_COLUMNS)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[c]) for c in _TRACE_COLUMNS))
    return "\n".join(lines) + "\n"


def csv_to_trace_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if ln]
    if not lines or lines[0] != ",".join(_TRACE_COLUMNS):
        raise ValueError("not a trace CSV (bad header)")
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        row = {}
        for col, cell in zip(_TRACE_COLUMNS, cells):
            if cell == "":
                row[col] = None
            elif col in ("step", "M", "K_j", "j"):
                row[col] = int(cell)
            else:
                row[col] = float(cell)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# aggregate statistics
# ---------------------------------------------------------------------------

def serialize_statistics(stats: TrialStatistics) -> bytes:
    payload = {
        "kind": "trial-statistics",
        "schema_version": SCHEMA_VERSION,
        "mean_m_ic": stats.mean_m_ic,
        "std_m_ic": stats.std_m_ic,
        "count": stats.count,
        "config_hash": stats.config_hash,
        "certified_count": stats.certified_count,
    }
    return canonical_json(payload).encode("utf-8")


def deserialize_statistics(blob: bytes | str) -> TrialStatistics:
    data = json.loads(blob if isinstance(blob, str) else blob.decode("utf-8"))
    if data.get("kind") != "trial-statistics":
        raise ValueError("not a trial-statistics file")
    return TrialStatistics(
        mean_m_ic=data["mean_m_ic"],
        std_m_ic=data["std_m_ic"],
        count=data["count"],
        config_hash=data["config_hash"],
        certified_count=data["certified_count"],
    )


# ---------------------------------------------------------------------------
# matrix text files (process inputs)
# ---------------------------------------------------------------------------

def _matrix_lines(mat: np.ndarray) -> list[str]:
    return [" ".join(f"{v.real!r} {v.imag!r}" for v in row) for row in np.asarray(mat, dtype=complex)]


def _parse_matrix(lines: Sequence[str], start: int, n: int, path: str) -> np.ndarray:
    mat = np.zeros((n, n), dtype=np.complex128)
    for i in range(n):
        lineno = start + i
        try:
            parts = [float(t) for t in lines[lineno].split()]
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno + 1}: malformed matrix row") from exc
        if len(parts) != 2 * n:
            raise ValueError(f"{path}:{lineno + 1}: expected {2 * n} numbers, got {len(parts)}")
        mat[i] = np.array(parts[0::2]) + 1j * np.array(parts[1::2])
    return mat


def write_choi_file(path, choi: ChoiOperator) -> None:
    d = choi.in_dim
    lines = ["choi v1", f"dim {d}"] + _matrix_lines(choi.matrix)
    Path(path).write_text("\n".join(lines) + "\n")


def read_choi_file(path) -> ChoiOperator:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "choi v1":
        raise ValueError(f"{path}:1: not a choi file")
    d = int(lines[1].split()[1])
    mat = _parse_matrix(lines, 2, d * d, str(path))
    return ChoiOperator(mat, normalization="raw")


def write_kraus_file(path, kraus: Sequence[np.ndarray]) -> None:
    ops = [np.asarray(k, dtype=complex) for k in kraus]
    d = ops[0].shape[0]
    lines = ["kraus v1", f"dim {d}", f"count {len(ops)}"]
    for op in ops:
        lines += _matrix_lines(op)
    Path(path).write_text("\n".join(lines) + "\n")


def read_kraus_file(path) -> list[np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "kraus v1":
        raise ValueError(f"{path}:1: not a kraus file")
    d = int(lines[1].split()[1])
    count = int(lines[2].split()[1])
    ops = []
    pos = 3
    for _ in range(count):
        ops.append(_parse_matrix(lines, pos, d, str(path)))
        pos += d
    return ops


def read_spectrum_file(path) -> np.ndarray:
    """Eigenvalue list for building random processes with a pinned spectrum."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "spectrum v1":
        raise ValueError(f"{path}:1: not a spectrum file")
    d = int(lines[1].split()[1])
    values = []
    for i, ln in enumerate(lines[2:], start=3):
        if not ln.strip():
            continue
        try:
            values.append(float(ln))
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: not a number: {ln!r}") from exc
    spec = np.array(values, dtype=np.float64)
    if spec.size == 0 or spec.size > d * d:
        raise ValueError(f"{path}: need between 1 and {d * d} eigenvalues, got {spec.size}")
    if spec.min() <= 0:
        raise ValueError(f"{path}: eigenvalues must be positive")
    return spec


# ---------------------------------------------------------------------------
# measurement records files
# ---------------------------------------------------------------------------

class RecordsFileError(ValueError):
    """Malformed records file; message carries the offending line number."""


def write_records_file(path, report) -> None:
    """Export the measured dataset of a run: input states, bases,
    frequencies and relative-trace estimates, line-oriented."""
    d = report.config["dim"]
    lines = ["records v1", f"dim {d}"]
    for act in report.act_results:
        j = act.input_index
        row = " ".join(f"{v.real!r} {v.imag!r}" for v in act.rho_in.matrix.ravel())
        lines.append(f"input {j} {row}")
        lines.append(f"mu {j} {act.mu_hat!r}")
        for rec in act.records:
            vec = " ".join(f"{v.real!r} {v.imag!r}" for v in rec.basis.vectors.ravel())
            lines.append(f"basis {j} {rec.basis_index} {vec}")
            freq = " ".join(repr(float(f)) for f in rec.frequencies)
            lines.append(f"freq {j} {rec.basis_index} {freq}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_records_file(path) -> dict:
    """Parse a records file into {j: {"rho_in", "mu", "records": [...]}}."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "records v1":
        raise RecordsFileError(f"{path}:1: not a records file")
    try:
        d = int(lines[1].split()[1])
    except (IndexError, ValueError) as exc:
        raise RecordsFileError(f"{path}:2: malformed dimension header") from exc

    def parse_complex_block(tokens: list[str], n_entries: int, lineno: int) -> np.ndarray:
        if len(tokens) != 2 * n_entries:
            raise RecordsFileError(
                f"{path}:{lineno}: expected {2 * n_entries} numbers, got {len(tokens)}"
            )
        vals = np.array([float(t) for t in tokens])
        return vals[0::2] + 1j * vals[1::2]

    data: dict[int, dict] = {}
    pending_basis: dict[tuple[int, int], VonNeumannBasis] = {}
    for lineno, raw in enumerate(lines[2:], start=3):
        if not raw.strip():
            continue
        parts = raw.split()
        tag = parts[0]
        try:
            if tag == "input":
                j = int(parts[1])
                mat = parse_complex_block(parts[2:], d * d, lineno).reshape(d, d)
                data.setdefault(j, {"records": []})["rho_in"] = DensityOperator(mat)
            elif tag == "mu":
                j = int(parts[1])
                data.setdefault(j, {"records": []})["mu"] = float(parts[2])
            elif tag == "basis":
                j, k = int(parts[1]), int(parts[2])
                mat = parse_complex_block(parts[3:], d * d, lineno).reshape(d, d)
                pending_basis[(j, k)] = VonNeumannBasis(mat)
            elif tag == "freq":
                j, k = int(parts[1]), int(parts[2])
                freqs = np.array([float(t) for t in parts[3:]])
                if freqs.size != d:
                    raise RecordsFileError(
                        f"{path}:{lineno}: expected {d} frequencies, got {freqs.size}"
                    )
                basis = pending_basis.get((j, k))
                if basis is None:
                    raise RecordsFileError(
                        f"{path}:{lineno}: freq line before its basis line for ({j},{k})"
                    )
                data.setdefault(j, {"records": []})["records"].append(
                    MeasurementRecord(
                        input_index=j,
                        basis_index=k,
                        basis=basis,
                        frequencies=freqs,
                        trace_estimate=data.get(j, {}).get("mu", 0.0) or 0.0,
                    )
                )
            else:
                raise RecordsFileError(f"{path}:{lineno}: unknown tag {tag!r}")
        except RecordsFileError:
            raise
        except Exception as exc:
            raise RecordsFileError(f"{path}:{lineno}: {exc}") from exc
    if not data:
        raise RecordsFileError(f"{path}: no records found")
    for j, blk in sorted(data.items()):
        if "rho_in" not in blk:
            raise RecordsFileError(f"{path}: input state missing for index {j}")
        if "mu" not in blk:
            raise RecordsFileError(f"{path}: relative trace missing for index {j}")
        if not blk["records"]:
            raise RecordsFileError(f"{path}: no measured bases for index {j}")
    return dict(sorted(data.items()))
