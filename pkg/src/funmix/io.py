"""CSV persistence for datasets, traces, summaries and run manifests.

Dataset files are long format with header ``subject_id,kind,covariate_id,t,value``:

* ``response`` rows carry ``y_i`` (``covariate_id`` and ``t`` empty),
* ``scalar`` rows carry ``z_ik`` with ``covariate_id = k`` (1-based),
* ``curve`` rows carry one observation ``X_ij(t)`` with ``covariate_id = j``.

Floats are written with 17 significant digits so values round-trip exactly.
Loaded subjects are ordered by id (numerically when every id is an integer).
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .bspline import Curve
from .design import Dataset
from .errors import DatasetError
from .summary import FitSummary, Trace

DATASET_HEADER = ["subject_id", "kind", "covariate_id", "t", "value"]
KINDS = ("response", "scalar", "curve")


def _fmt(v) -> str:
    return format(float(v), ".17g")


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_HEADER)
        for i, sid in enumerate(dataset.subject_ids):
            w.writerow([sid, "response", "", "", _fmt(dataset.y[i])])
            for k in range(dataset.scalars.shape[1]):
                w.writerow([sid, "scalar", k + 1, "", _fmt(dataset.scalars[i, k])])
            for j in dataset.covariate_ids():
                c = dataset.curves[j][i]
                for t, v in zip(c.grid, c.values):
                    w.writerow([sid, "curve", j, _fmt(t), _fmt(v)])


def _sort_ids(ids):
    try:
        as_int = [int(s) for s in ids]
    except ValueError:
        return sorted(ids), ids
    order = np.argsort(as_int, kind="stable")
    return [ids[k] for k in order], as_int


def load_dataset(path, n_covariates: int | None = None) -> Dataset:
    """Read a long-format dataset file.

    Parameters
    ----------
    n_covariates : int, optional
        Expected number of functional covariates ``J``; ids outside ``1..J``
        are rejected.  By default ``J`` is the largest id present and every
        id in ``1..J`` must occur.

    Raises
    ------
    DatasetError
        With the offending line number for malformed rows, duplicate or
        missing responses, repeated time points and unknown covariate ids.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file {path} does not exist")
    responses, scalars, curves, first_line = {}, {}, {}, {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != DATASET_HEADER:
            raise DatasetError(f"{path}:1: header must be {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise DatasetError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            sid, kind, cid, t, value = (s.strip() for s in row)
            if not sid:
                raise DatasetError(f"{path}:{lineno}: empty subject_id")
            if kind not in KINDS:
                raise DatasetError(f"{path}:{lineno}: unknown kind {kind!r}")
            try:
                val = float(value)
                cid_i = int(cid) if kind != "response" else None
                t_f = float(t) if kind == "curve" else None
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            first_line.setdefault(sid, lineno)
            if kind == "response":
                if sid in responses:
                    raise DatasetError(f"{path}:{lineno}: second response for subject {sid}")
                responses[sid] = val
            elif kind == "scalar":
                if cid_i < 1:
                    raise DatasetError(f"{path}:{lineno}: scalar index must be >= 1")
                if (sid, cid_i) in scalars:
                    raise DatasetError(f"{path}:{lineno}: repeated scalar {cid_i} for {sid}")
                scalars[(sid, cid_i)] = val
            else:
                if cid_i < 1 or (n_covariates is not None and cid_i > n_covariates):
                    raise DatasetError(f"{path}:{lineno}: unknown covariate id {cid_i}")
                curves.setdefault((sid, cid_i), []).append((t_f, val, lineno))
    ids = list(first_line)
    for sid in ids:
        if sid not in responses:
            raise DatasetError(f"{path}:{first_line[sid]}: subject {sid} has no response")
    ids, _ = _sort_ids(ids)
    cov_ids = sorted({j for _, j in curves})
    J = n_covariates if n_covariates is not None else (max(cov_ids) if cov_ids else 0)
    missing = sorted(set(range(1, J + 1)) - set(cov_ids))
    if missing:
        raise DatasetError(f"{path}: covariate ids {missing} never appear (expected 1..{J})")
    p = max((k for _, k in scalars), default=0)
    Z = np.empty((len(ids), p))
    for i, sid in enumerate(ids):
        for k in range(1, p + 1):
            if (sid, k) not in scalars:
                raise DatasetError(f"{path}:{first_line[sid]}: subject {sid} lacks scalar {k}")
            Z[i, k - 1] = scalars[(sid, k)]
    out = {}
    for j in range(1, J + 1):
        out[j] = []
        for sid in ids:
            obs = curves.get((sid, j))
            if not obs:
                raise DatasetError(
                    f"{path}:{first_line[sid]}: subject {sid} has no curve for covariate {j}")
            obs.sort(key=lambda r: r[0])
            ts = np.array([r[0] for r in obs])
            dup = np.nonzero(np.diff(ts) <= 0)[0]
            if dup.size:
                line = obs[dup[0] + 1][2]
                raise DatasetError(
                    f"{path}:{line}: grid of subject {sid}, covariate {j} is not strictly "
                    f"increasing (t={ts[dup[0] + 1]!r} repeated)")
            out[j].append(Curve(ts, np.array([r[1] for r in obs])))
    return Dataset(np.array(ids), np.array([responses[s] for s in ids]), Z, curves=out)


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- traces

def _write_matrix(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _read_matrix(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(v) for v in row] for row in reader if row]
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def _subject_columns(subject_ids, classes: int | None):
    if classes is None:
        return [str(s) for s in subject_ids]
    return [f"{s}:{c}" for s in subject_ids for c in range(classes)]


def save_trace(trace: Trace, directory, subject_ids=None) -> list:
    """Write ``trace.csv`` and, when present, the per-draw membership files.

    Returns the file names written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_matrix(directory / "trace.csv", trace.names, trace.draws)
    files = ["trace.csv"]
    for label, arr in (("responsibilities", trace.responsibilities),
                       ("probabilities", trace.probabilities)):
        if arr is None:
            continue
        n = arr.shape[1]
        ids = subject_ids if subject_ids is not None else np.arange(n)
        classes = arr.shape[2] if arr.ndim == 3 else None
        _write_matrix(directory / f"{label}.csv", _subject_columns(ids, classes),
                      arr.reshape(arr.shape[0], -1))
        files.append(f"{label}.csv")
    return files


def load_trace(directory, meta: dict | None = None) -> Trace:
    directory = Path(directory)
    names, draws = _read_matrix(directory / "trace.csv")
    arrays = {}
    for label in ("responsibilities", "probabilities"):
        f = directory / f"{label}.csv"
        if not f.exists():
            arrays[label] = None
            continue
        header, mat = _read_matrix(f)
        if ":" in header[0]:
            classes = len({h.rsplit(":", 1)[1] for h in header})
            mat = mat.reshape(mat.shape[0], -1, classes)
        arrays[label] = mat
    if meta is None and (directory / "manifest.json").exists():
        meta = read_manifest(directory).get("meta", {})
    return Trace(names, draws, arrays["responsibilities"], arrays["probabilities"], meta or {})


# ---------------------------------------------------------------- summaries

def save_summary(summary: FitSummary, directory, subject_ids=None) -> list:
    """Parameter table, memberships, decile counts and the PPC table."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "mean", "sd", "lower", "upper"])
        for r in summary.params:
            w.writerow([r.name, _fmt(r.mean), _fmt(r.sd), _fmt(r.lower), _fmt(r.upper)])
    m = np.asarray(summary.membership)
    f = np.asarray(summary.fitted)
    ids = subject_ids if subject_ids is not None else np.arange(m.shape[0])
    with open(directory / "membership.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if m.ndim == 1:
            w.writerow(["subject_id", "membership", "fitted"])
            for sid, a, b in zip(ids, m, f):
                w.writerow([sid, _fmt(a), _fmt(b)])
        else:
            L = m.shape[1]
            w.writerow(["subject_id"] + [f"membership_{c}" for c in range(L)]
                       + [f"fitted_{c}" for c in range(L)])
            for sid, a, b in zip(ids, m, f):
                w.writerow([sid] + [_fmt(v) for v in a] + [_fmt(v) for v in b])
    with open(directory / "deciles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "bin", "count"])
        tables = summary.deciles
        if tables and isinstance(tables[0][1], list):
            for cls, table in tables:
                for label, count in table:
                    w.writerow([cls.split()[-1], label, count])
        else:
            for label, count in tables:
                w.writerow([1, label, count])
    files = ["summary.csv", "membership.csv", "deciles.csv"]
    if summary.ppc:
        with open(directory / "ppc.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "observed", "replicate_mean", "p_value"])
            for row in summary.ppc:
                w.writerow([_fmt(v) for v in row])
        files.append("ppc.csv")
    return files


def read_summary_table(directory) -> list:
    with open(Path(directory) / "summary.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        return [dict(name=r["name"], **{k: float(r[k]) for k in ("mean", "sd", "lower", "upper")})
                for r in reader]


# ---------------------------------------------------------------- manifests

def write_manifest(directory, manifest: dict) -> None:
    with open(Path(directory) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def read_manifest(directory) -> dict:
    with open(Path(directory) / "manifest.json") as fh:
        return json.load(fh)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")
