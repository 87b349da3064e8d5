"""Plain-text inputs and outputs: observation CSVs and the model file.

Model file grammar (line oriented, UTF-8)::

    file     := { comment | blank | section }
    comment  := "#" text
    section  := "[" name "]" { entry }
    entry    := key "=" value
    name     := "model" | "manifest" | "gate" | "expert " INT

``[model]`` holds family, K, p, q and fit summaries (loglik, eta, bic, aic,
icl, n_iters, converged). ``[gate]`` has one ``alpha_k`` row per
non-reference component, as space-separated numbers. ``[expert k]`` has
``beta`` (space-separated), ``sigma2`` and, where the family uses them,
``lambda`` and ``nu``. ``[manifest]`` records the command and options that
produced the file. Floats are written with 17 significant digits, which
round-trips IEEE doubles exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .distributions import Family
from .moe import MoEParams, MoESpec

__all__ = [
    "InputError",
    "fmt",
    "read_xy_csv",
    "read_x_csv",
    "write_csv",
    "ModelFile",
    "write_model_file",
    "read_model_file",
]


class InputError(ValueError):
    """Malformed or non-finite input data."""


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------

def _read_columns(path, required: Sequence[str], optional: Sequence[str] = ()) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        for col in required:
            if col not in header:
                raise InputError(f"{path}: missing column '{col}' in header {header}")
        wanted = list(required) + [c for c in optional if c in header]
        idx = {c: header.index(c) for c in wanted}
        cols = {c: [] for c in wanted}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for c, j in idx.items():
                try:
                    v = float(row[j])
                except ValueError:
                    raise InputError(f"{path}:{lineno}: '{row[j]}' is not a number") from None
                if not np.isfinite(v):
                    raise InputError(f"{path}:{lineno}: non-finite value in column '{c}'")
                cols[c].append(v)
    if not cols[required[0]]:
        raise InputError(f"{path}: no observations")
    return {c: np.asarray(v) for c, v in cols.items()}


def read_xy_csv(path):
    cols = _read_columns(path, ("x", "y"))
    return cols["x"], cols["y"]


def read_x_csv(path):
    """x column plus y when present (y is None otherwise)."""
    cols = _read_columns(path, ("x",), ("y",))
    return cols["x"], cols.get("y")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


# --------------------------------------------------------------------------
# model file
# --------------------------------------------------------------------------

@dataclass
class ModelFile:
    spec: MoESpec
    params: MoEParams
    summary: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)


def _vec(values) -> str:
    return " ".join(fmt(v) for v in np.ravel(values))


def write_model_file(path, spec: MoESpec, params: MoEParams, summary: Optional[dict] = None,
                     manifest: Optional[dict] = None) -> None:
    lines = ["# nnmoe model file", "[model]",
             f"family = {spec.family.value}", f"K = {spec.K}", f"p = {spec.p}", f"q = {spec.q}"]
    for key, val in (summary or {}).items():
        lines.append(f"{key} = {fmt(val) if not isinstance(val, str) else val}")
    if manifest:
        lines += ["", "[manifest]"]
        for key, val in manifest.items():
            lines.append(f"{key} = {fmt(val) if not isinstance(val, str) else val}")
    lines += ["", "[gate]"]
    for k in range(params.alpha.shape[0]):
        lines.append(f"alpha_{k + 1} = {_vec(params.alpha[k])}")
    for k in range(params.K):
        lines += ["", f"[expert {k + 1}]", f"beta = {_vec(params.beta[k])}",
                  f"sigma2 = {fmt(params.sigma2[k])}"]
        if params.lam is not None:
            lines.append(f"lambda = {fmt(params.lam[k])}")
        if params.nu is not None:
            lines.append(f"nu = {fmt(params.nu[k])}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_sections(text: str, path) -> dict:
    sections: dict = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if current is None or "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value' inside a section")
        key, _, value = line.partition("=")
        sections[current][key.strip()] = value.strip()
    return sections


def _floats(s: str, path, what: str) -> np.ndarray:
    try:
        out = np.array([float(t) for t in s.split()], dtype=float)
    except ValueError:
        raise InputError(f"{path}: bad number list for {what}: '{s}'") from None
    if not np.all(np.isfinite(out)):
        raise InputError(f"{path}: non-finite value in {what}")
    return out


def _typed(value: str):
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def read_model_file(path) -> ModelFile:
    sections = _parse_sections(Path(path).read_text(), path)
    try:
        model = sections["model"]
        spec = MoESpec(Family.parse(model["family"]), int(model["K"]), int(model["p"]), int(model["q"]))
    except (KeyError, ValueError) as exc:
        raise InputError(f"{path}: incomplete [model] section ({exc})") from None
    gate = sections.get("gate", {})
    alpha = np.zeros((spec.K - 1, spec.q + 1))
    for k in range(spec.K - 1):
        key = f"alpha_{k + 1}"
        if key not in gate:
            raise InputError(f"{path}: missing {key} in [gate]")
        alpha[k] = _floats(gate[key], path, key)
    beta = np.zeros((spec.K, spec.p + 1))
    sigma2 = np.zeros(spec.K)
    lam = np.zeros(spec.K) if spec.family.has_skew else None
    nu = np.zeros(spec.K) if spec.family.has_dof else None
    for k in range(spec.K):
        sec = sections.get(f"expert {k + 1}")
        if sec is None:
            raise InputError(f"{path}: missing [expert {k + 1}]")
        try:
            beta[k] = _floats(sec["beta"], path, "beta")
            sigma2[k] = _floats(sec["sigma2"], path, "sigma2")[0]
            if lam is not None:
                lam[k] = _floats(sec["lambda"], path, "lambda")[0]
            if nu is not None:
                nu[k] = _floats(sec["nu"], path, "nu")[0]
        except (KeyError, IndexError, ValueError) as exc:
            raise InputError(f"{path}: bad [expert {k + 1}] section ({exc})") from None
    try:
        params = MoEParams(alpha, beta, sigma2, lam, nu)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    summary = {k: _typed(v) for k, v in model.items() if k not in ("family", "K", "p", "q")}
    manifest = {k: _typed(v) for k, v in sections.get("manifest", {}).items()}
    return ModelFile(spec, params, summary, manifest)
