"""File formats: model and system JSON, trajectory JSON Lines, CSV tables.

Model files are a single JSON object with explicit row-stochastic
orientation (row index = conditioning state).  Dataset files are JSON
Lines, one trajectory per line, nothing else, so they can be streamed
and concatenated.  CSV tables open with comment lines carrying a hash
and echo of the resolved configuration that produced them, then a
regular header row.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .hmm import Dataset, FiniteHmm, Trajectory, validate_model
from .kalman import LinearGaussianModel

__all__ = [
    "read_model",
    "write_model",
    "read_dataset",
    "write_dataset",
    "read_system",
    "write_system",
    "read_jsonl",
    "write_jsonl",
    "write_json",
    "read_json",
    "config_hash",
    "write_csv",
    "read_csv_rows",
]


def _check_model(m: FiniteHmm, source: str) -> FiniteHmm:
    report = validate_model(m)
    if not report:
        raise ValueError(
            f"{source} is not a valid model:\n  " + "\n  ".join(report.problems)
        )
    return m


def read_model(path) -> FiniteHmm:
    with open(path) as fh:
        payload = json.load(fh)
    m = FiniteHmm(
        p0=payload["p0"], trans=payload["trans"], emit=payload["emit"]
    )
    declared = (payload.get("n_states"), payload.get("n_outputs"))
    if declared != (None, None) and declared != (m.n_states, m.n_outputs):
        raise ValueError(
            f"{path} declares alphabet {declared}, tables say "
            f"({m.n_states}, {m.n_outputs})"
        )
    return _check_model(m, str(path))


def write_model(path, m: FiniteHmm, extra: dict | None = None) -> Path:
    _check_model(m, "model to write")
    payload = {
        "n_states": m.n_states,
        "n_outputs": m.n_outputs,
        "p0": m.p0.tolist(),
        "trans": m.trans.tolist(),
        "emit": m.emit.tolist(),
    }
    if extra:
        payload.update(extra)
    return write_json(path, payload)


def read_dataset(path) -> Dataset:
    trajectories = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            try:
                trajectories.append(
                    Trajectory(
                        states=record["states"],
                        observations=record["observations"],
                        seed=int(record.get("seed", 0)),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{line_no}: bad trajectory: {exc}") from exc
    if not trajectories:
        raise ValueError(f"{path} contains no trajectories")
    return Dataset(tuple(trajectories))


def write_dataset(path, data: Dataset) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for traj in data.trajectories:
            fh.write(
                json.dumps(
                    {
                        "seed": traj.seed,
                        "states": traj.states.tolist(),
                        "observations": traj.observations.tolist(),
                    }
                )
                + "\n"
            )
    return path


def read_system(path) -> LinearGaussianModel:
    with open(path) as fh:
        payload = json.load(fh)
    try:
        return LinearGaussianModel(
            A=payload["A"],
            C=payload["C"],
            sigma_w=payload["sigma_w"],
            sigma_v=payload["sigma_v"],
            x0_mean=payload["x0_mean"],
            sigma_x0=payload["sigma_x0"],
        )
    except KeyError as exc:
        raise ValueError(f"{path} is missing system field {exc}") from exc


def write_system(path, m: LinearGaussianModel) -> Path:
    return write_json(
        path,
        {
            "A": m.A.tolist(),
            "C": m.C.tolist(),
            "sigma_w": m.sigma_w.tolist(),
            "sigma_v": m.sigma_v.tolist(),
            "x0_mean": m.x0_mean.tolist(),
            "sigma_x0": m.sigma_x0.tolist(),
        },
    )


def write_json(path, payload: dict) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
    return path


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_jsonl(path, records, meta: dict | None = None) -> Path:
    """One JSON object per line, optionally preceded by a _meta line."""
    path = Path(path)
    with open(path, "w") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}) + "\n")
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return path


def read_jsonl(path) -> tuple[dict | None, list[dict]]:
    """Inverse of ``write_jsonl``: (meta or None, records)."""
    meta = None
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "_meta" in record and not records and meta is None:
                meta = record["_meta"]
            else:
                records.append(record)
    return meta, records


def _jsonable(value):
    if isinstance(value, (np.integer, np.floating)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def config_hash(config: dict) -> str:
    """Short stable digest of a configuration mapping."""
    canonical = json.dumps(_jsonable(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def write_csv(path, header: list[str], rows, config: dict) -> Path:
    """CSV with two leading comment lines: config hash, then the config."""
    path = Path(path)
    config = _jsonable(config)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash(config)}\n")
        fh.write(f"# config={json.dumps(config, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv_rows(path) -> tuple[list[str], list[list[str]]]:
    """Read back a ``write_csv`` file, skipping comment lines."""
    with open(path, newline="") as fh:
        reader = csv.reader(
            line for line in fh if not line.startswith("#")
        )
        rows = list(reader)
    return rows[0], rows[1:]
