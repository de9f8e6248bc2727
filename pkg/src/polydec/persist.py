"""File formats: models as JSON documents, datasets as CSV with a JSON
metadata sidecar.

Floats are written in Python's shortest round-trip decimal form, so a
save/load cycle reproduces every value bit for bit.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .model import (BranchPolynomial, Dataset, DecoupledMap, MonomialBasis,
                    PolynomialMap, StateSpaceModel)

__all__ = [
    "SchemaError", "model_to_dict", "model_from_dict",
    "save_model", "load_model", "save_dataset", "load_dataset",
]


class SchemaError(ValueError):
    """A document does not match the expected layout; the message names
    the offending field or row."""


def _matrix(a):
    return np.asarray(a, dtype=float).tolist()


def _nl_to_dict(nl):
    if nl is None:
        return None
    if isinstance(nl, PolynomialMap):
        return {"kind": "coupled",
                "exponents": np.asarray(nl.basis.exponents).tolist(),
                "coeffs": _matrix(nl.coeffs)}
    return {"kind": "decoupled",
            "W": _matrix(nl.W), "V": _matrix(nl.V),
            "branches": [{"coeffs": np.asarray(b.coeffs, dtype=float).tolist(),
                          "lowest_power": int(b.lowest_power)}
                         for b in nl.branches],
            "unified": bool(nl.unified)}


def model_to_dict(model):
    return {"n": model.n, "m": model.m, "p": model.p,
            "ts": float(model.sample_period),
            "A": _matrix(model.A), "B": _matrix(model.B),
            "C": _matrix(model.C), "D": _matrix(model.D),
            "state_nl": _nl_to_dict(model.state_nl),
            "output_nl": _nl_to_dict(model.output_nl)}


def _field(doc, name, where="model"):
    if name not in doc:
        raise SchemaError(f"{where} field '{name}' missing")
    return doc[name]


def _shaped(doc, name, shape, where="model"):
    try:
        arr = np.asarray(_field(doc, name, where), dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where} field '{name}' is not numeric: {exc}") from None
    if arr.shape != shape:
        raise SchemaError(f"{where} field '{name}' has shape {arr.shape}, "
                          f"expected {shape}")
    return arr


def _nl_from_dict(doc, tag):
    if doc is None:
        return None
    where = f"{tag} nonlinearity"
    if not isinstance(doc, dict):
        raise SchemaError(f"{where} must be an object or null")
    kind = _field(doc, "kind", where)
    if kind == "coupled":
        try:
            exponents = np.asarray(_field(doc, "exponents", where), dtype=int)
            coeffs = np.asarray(_field(doc, "coeffs", where), dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None
        if exponents.ndim != 2:
            raise SchemaError(f"{where} field 'exponents' must be a matrix")
        try:
            return PolynomialMap(MonomialBasis(exponents.shape[1], exponents), coeffs)
        except ValueError as exc:
            raise SchemaError(f"{where}: {exc}") from None
    if kind == "decoupled":
        branches_doc = _field(doc, "branches", where)
        if not isinstance(branches_doc, list) or not branches_doc:
            raise SchemaError(f"{where} field 'branches' must be a non-empty list")
        branches = []
        for i, b in enumerate(branches_doc):
            if not isinstance(b, dict):
                raise SchemaError(f"{where} branch {i} must be an object")
            try:
                branches.append(BranchPolynomial(
                    np.asarray(_field(b, "coeffs", f"{where} branch {i}"), dtype=float),
                    int(_field(b, "lowest_power", f"{where} branch {i}"))))
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{where} branch {i}: {exc}") from None
        unified = bool(doc.get("unified", False))
        if unified:
            shared = branches[0]
            branches = [shared] * len(branches)
        try:
            return DecoupledMap(_field(doc, "W", where), _field(doc, "V", where),
                                branches, unified=unified)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None
    raise SchemaError(f"{where} has unknown kind {kind!r}")


def model_from_dict(doc):
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    try:
        n = int(_field(doc, "n"))
        m = int(_field(doc, "m"))
        p = int(_field(doc, "p"))
        ts = float(_field(doc, "ts"))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"model dimensions: {exc}") from None
    if ts <= 0:
        raise SchemaError("model field 'ts' must be positive")
    A = _shaped(doc, "A", (n, n))
    B = _shaped(doc, "B", (n, m))
    C = _shaped(doc, "C", (p, n))
    D = _shaped(doc, "D", (p, m))
    state_nl = _nl_from_dict(doc.get("state_nl"), "state")
    output_nl = _nl_from_dict(doc.get("output_nl"), "output")
    try:
        return StateSpaceModel(A, B, C, D, state_nl=state_nl,
                               output_nl=output_nl, sample_period=ts)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def save_model(model, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    return model_from_dict(doc)


def save_map(map_, path):
    """Write one nonlinear map (coupled or decoupled) to a JSON file."""
    doc = _nl_to_dict(map_)
    if doc is None:
        raise SchemaError("cannot save a missing map")
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_map(path):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from None
    nl = _nl_from_dict(doc, "map")
    if nl is None:
        raise SchemaError("map file holds null")
    return nl


# ---------------------------------------------------------------------------
# datasets

def _meta_path(path):
    path = Path(path)
    if path.suffix == ".csv":
        return path.with_suffix(".meta.json")
    return path.with_name(path.name + ".meta.json")


def save_dataset(dataset, path):
    """Write the record as CSV (columns k, u1..um, y1..yp) plus a
    metadata sidecar next to it holding fs and x0."""
    path = Path(path)
    m = dataset.u.shape[1]
    p = dataset.y.shape[1]
    header = (["k"] + [f"u{j + 1}" for j in range(m)]
              + [f"y{j + 1}" for j in range(p)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(dataset.n_samples):
            w.writerow([k] + [repr(float(v)) for v in dataset.u[k]]
                       + [repr(float(v)) for v in dataset.y[k]])
    meta = {"fs": dataset.sample_rate,
            "x0": None if dataset.x0 is None else dataset.x0.tolist()}
    _meta_path(path).write_text(json.dumps(meta, indent=1) + "\n")


def _parse_header(header):
    if not header or header[0] != "k":
        raise SchemaError("dataset header must start with 'k'")
    m = p = 0
    for name in header[1:]:
        if name == f"u{m + 1}" and p == 0:
            m += 1
        elif name == f"y{p + 1}":
            p += 1
        else:
            raise SchemaError(f"unexpected dataset column '{name}'")
    if p == 0:
        raise SchemaError("dataset has no output columns")
    return m, p


def load_dataset(path):
    path = Path(path)
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise SchemaError(f"metadata sidecar {meta_path.name} missing")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"metadata is not valid JSON: {exc}") from None
    fs = _field(meta, "fs", "metadata")
    x0 = meta.get("x0")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("dataset file is empty") from None
        m, p = _parse_header(header)
        u_rows, y_rows = [], []
        for i, row in enumerate(reader, start=1):
            if len(row) != 1 + m + p:
                raise SchemaError(f"row {i}: expected {1 + m + p} fields, "
                                  f"got {len(row)}")
            try:
                int(row[0])
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise SchemaError(f"row {i}: {exc}") from None
            u_rows.append(vals[:m])
            y_rows.append(vals[m:])
    try:
        return Dataset(np.asarray(u_rows, dtype=float).reshape(-1, m),
                       np.asarray(y_rows, dtype=float).reshape(-1, p),
                       fs, x0=x0)
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
