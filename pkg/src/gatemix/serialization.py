"""Plain-text formats: measure documents, dataset CSV, solution files,
and flat key/value configuration.

Every file starts with a ``format=1`` version line.  Floats are written
with 17 significant digits so a parse/serialize round trip is lossless
for double precision.
"""

from __future__ import annotations

import numpy as np

from .measure import Dataset, MixingMeasure
from .polysys import CandidateSolution

__all__ = [
    "FormatError",
    "measure_to_text", "measure_from_text", "write_measure", "read_measure",
    "dataset_to_text", "dataset_from_text", "write_dataset", "read_dataset",
    "solution_to_text", "solution_from_text", "write_solution", "read_solution",
    "parse_kv", "format_float",
]

FORMAT_LINE = "format=1"


class FormatError(ValueError):
    """Malformed document, with the offending line or key named."""


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def _floats(values) -> str:
    return " ".join(format_float(v) for v in np.asarray(values, dtype=float).ravel())


def _check_format(lines, what: str):
    if not lines or lines[0].strip() != FORMAT_LINE:
        raise FormatError(f"{what}: first line must be '{FORMAT_LINE}'")


def _kv_lines(lines, what: str):
    """(line_number, key, value) triples, skipping blanks and comments."""
    out = []
    for ln, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{what}: line {ln}: expected key=value, got '{line}'")
        key, _, value = line.partition("=")
        out.append((ln, key.strip(), value.strip()))
    return out


def parse_kv(text: str, what: str = "config") -> dict[str, str]:
    """Flat key/value document into an ordered dict; duplicate keys rejected."""
    lines = text.splitlines()
    _check_format(lines, what)
    out: dict[str, str] = {}
    for ln, key, value in _kv_lines(lines[1:], what):
        if key == "format":
            continue
        if key in out:
            raise FormatError(f"{what}: line {ln}: duplicate key '{key}'")
        out[key] = value
    return out


# ---------------------------------------------------------------------------
# measure documents
# ---------------------------------------------------------------------------


def measure_to_text(measure: MixingMeasure) -> str:
    lines = [
        FORMAT_LINE,
        f"dim={measure.dim}",
        f"k={measure.k}",
        f"beta0={_floats(measure.beta0)}",
        f"beta1={_floats(measure.beta1)}",
        f"a={_floats(measure.a)}",
        f"b={_floats(measure.b)}",
        f"sigma={_floats(measure.sigma)}",
    ]
    return "\n".join(lines) + "\n"


def measure_from_text(text: str) -> MixingMeasure:
    kv = parse_kv(text, "measure document")
    required = ["dim", "k", "beta0", "beta1", "a", "b", "sigma"]
    for key in required:
        if key not in kv:
            raise FormatError(f"measure document: missing key '{key}'")
    for key in kv:
        if key not in required:
            raise FormatError(f"measure document: unknown key '{key}'")
    try:
        dim = int(kv["dim"])
        k = int(kv["k"])
    except ValueError as exc:
        raise FormatError(f"measure document: dim and k must be integers ({exc})")

    def arr(key, count):
        vals = np.array([float(v) for v in kv[key].split()])
        if vals.size != count:
            raise FormatError(
                f"measure document: key '{key}' has {vals.size} values, expected {count}"
            )
        return vals

    return MixingMeasure(
        beta0=arr("beta0", k),
        beta1=arr("beta1", k * dim).reshape(k, dim),
        a=arr("a", k * dim).reshape(k, dim),
        b=arr("b", k),
        sigma=arr("sigma", k),
    )


def write_measure(measure: MixingMeasure, path) -> None:
    with open(path, "w") as fh:
        fh.write(measure_to_text(measure))


def read_measure(path) -> MixingMeasure:
    with open(path) as fh:
        return measure_from_text(fh.read())


# ---------------------------------------------------------------------------
# dataset CSV
# ---------------------------------------------------------------------------


def dataset_to_text(data: Dataset) -> str:
    header = ",".join([f"x{u + 1}" for u in range(data.dim)] + ["y"])
    lines = [FORMAT_LINE, header]
    for i in range(data.n):
        lines.append(",".join(
            [format_float(v) for v in data.x[i]] + [format_float(data.y[i])]
        ))
    return "\n".join(lines) + "\n"


def dataset_from_text(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    _check_format(lines, "dataset")
    if len(lines) < 3:
        raise FormatError("dataset: needs a header and at least one row")
    header = lines[1].split(",")
    if header[-1] != "y" or any(h != f"x{u + 1}" for u, h in enumerate(header[:-1])):
        raise FormatError(f"dataset: bad header '{lines[1]}', expected x1,..,xd,y")
    d = len(header) - 1
    rows = []
    for ln, raw in enumerate(lines[2:], start=3):
        parts = raw.split(",")
        if len(parts) != d + 1:
            raise FormatError(f"dataset: line {ln}: expected {d + 1} fields, got {len(parts)}")
        rows.append([float(v) for v in parts])
    arr = np.asarray(rows)
    return Dataset(x=arr[:, :d], y=arr[:, d])


def write_dataset(data: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(dataset_to_text(data))


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        return dataset_from_text(fh.read())


# ---------------------------------------------------------------------------
# solution files
# ---------------------------------------------------------------------------


def solution_to_text(sol: CandidateSolution) -> str:
    lines = [
        FORMAT_LINE,
        f"m={sol.m}",
        f"d={sol.d}",
        f"p1={_floats(sol.p1)}",
        f"p2={_floats(sol.p2)}",
        f"p3={_floats(sol.p3)}",
        f"p4={_floats(sol.p4)}",
        f"p5={_floats(sol.p5)}",
    ]
    return "\n".join(lines) + "\n"


def solution_from_text(text: str) -> CandidateSolution:
    kv = parse_kv(text, "solution file")
    required = ["m", "d", "p1", "p2", "p3", "p4", "p5"]
    for key in required:
        if key not in kv:
            raise FormatError(f"solution file: missing key '{key}'")
    for key in kv:
        if key not in required:
            raise FormatError(f"solution file: unknown key '{key}'")
    m = int(kv["m"])
    d = int(kv["d"])

    def arr(key, count):
        vals = np.array([float(v) for v in kv[key].split()])
        if vals.size != count:
            raise FormatError(
                f"solution file: key '{key}' has {vals.size} values, expected {count}"
            )
        return vals

    return CandidateSolution(
        p1=arr("p1", m * d).reshape(m, d),
        p2=arr("p2", m * d).reshape(m, d),
        p3=arr("p3", m),
        p4=arr("p4", m),
        p5=arr("p5", m),
    )


def write_solution(sol: CandidateSolution, path) -> None:
    with open(path, "w") as fh:
        fh.write(solution_to_text(sol))


def read_solution(path) -> CandidateSolution:
    with open(path) as fh:
        return solution_from_text(fh.read())
