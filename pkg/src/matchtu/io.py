"""CSV encodings for counts, matrices, margins and bases.

Every writer emits a canonical layout (labels in type-space order, zeros
included, shortest round-trip float repr), so write(read(f)) reproduces a
canonical file byte for byte. Readers take labels in order of first
appearance and report problems with file and line number.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DuplicateCellError, InputError, NegativeMassError
from .model import BasisSystem, Margins, MatchingPatterns, SampleCounts, TypeSpace

SINGLE_TOKEN = "0"
COUNTS_HEADER = ("x_type", "y_type", "count")
MARGINS_HEADER = ("side", "type", "mass")
BASIS_HEADER = ("k", "x_type", "y_type", "value")


def format_number(v: float) -> str:
    """Integers print without a decimal point; everything else uses repr."""
    v = float(v)
    if math.isfinite(v) and v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(v)


def _rows(path) -> tuple[tuple[str, ...], list[tuple[int, list[str]]]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError("file not found", path) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read file ({exc})", path) from None
    reader = csv.reader(text.splitlines())
    numbered = [(i + 1, [c.strip() for c in row]) for i, row in enumerate(reader)]
    numbered = [(i, row) for i, row in numbered if any(row)]
    if not numbered:
        raise InputError("file is empty", path)
    (_, header), body = numbered[0], numbered[1:]
    return tuple(header), body


def _expect_header(path, header, expected):
    if header != tuple(expected):
        raise InputError(f"expected header {','.join(expected)}, got {','.join(header)}", path, 1)


def _number(path, line, text, what) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{what} {text!r} is not a number", path, line) from None
    if not math.isfinite(v):
        raise InputError(f"{what} must be finite, got {text!r}", path, line)
    return v


def _width(path, line, row, n):
    if len(row) != n:
        raise InputError(f"expected {n} fields, got {len(row)}", path, line)


def _first_appearance(values: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(v for v in values if v != SINGLE_TOKEN))


def _write(path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- counts

def read_counts(path) -> SampleCounts:
    """Household counts in long format; ``0`` as partner type means single.

    Cells absent from the file count as zero. Counts need not be integers
    (noise-free frequency data), in which case the sample is flagged
    non-integral.
    """
    header, body = _rows(path)
    _expect_header(path, header, COUNTS_HEADER)
    seen: dict[tuple[str, str], int] = {}
    entries = []
    for line, row in body:
        _width(path, line, row, 3)
        x, y, c = row
        if not x or not y:
            raise InputError("empty type label", path, line)
        if x == SINGLE_TOKEN and y == SINGLE_TOKEN:
            raise InputError("a row cannot be single on both sides", path, line)
        count = _number(path, line, c, "count")
        if count < 0:
            raise NegativeMassError(f"{path}:{line}: negative count {c} for cell ({x}, {y})")
        if (x, y) in seen:
            raise DuplicateCellError(
                f"{path}:{line}: duplicate cell ({x}, {y}), first given on line {seen[(x, y)]}"
            )
        seen[(x, y)] = line
        entries.append((x, y, count))

    xs = _first_appearance(e[0] for e in entries)
    ys = _first_appearance(e[1] for e in entries)
    if not xs or not ys:
        raise InputError("counts need at least one type on each side", path)
    types = TypeSpace(xs, ys)
    xi = {s: i for i, s in enumerate(types.x_labels)}
    yi = {s: j for j, s in enumerate(types.y_labels)}
    nx, ny = types.shape
    mu, mu_x0, mu_0y = np.zeros((nx, ny)), np.zeros(nx), np.zeros(ny)
    for x, y, c in entries:
        if y == SINGLE_TOKEN:
            mu_x0[xi[x]] = c
        elif x == SINGLE_TOKEN:
            mu_0y[yi[y]] = c
        else:
            mu[xi[x], yi[y]] = c
    vec = np.concatenate([mu.ravel(), mu_x0, mu_0y])
    integral = bool(np.all(vec == np.round(vec)))
    return SampleCounts(MatchingPatterns(mu, mu_x0, mu_0y), integral=integral, types=types)


def counts_rows(mu: MatchingPatterns, types: TypeSpace):
    for i, x in enumerate(types.x_labels):
        for j, y in enumerate(types.y_labels):
            yield x, y, format_number(mu.mu[i, j])
    for i, x in enumerate(types.x_labels):
        yield x, SINGLE_TOKEN, format_number(mu.mu_x0[i])
    for j, y in enumerate(types.y_labels):
        yield SINGLE_TOKEN, y, format_number(mu.mu_0y[j])


def write_counts(path, data: SampleCounts | MatchingPatterns, types: TypeSpace | None = None) -> None:
    """Canonical order: couples x-major, then x singles, then y singles."""
    if isinstance(data, SampleCounts):
        types = types or data.types
        data = data.mu_hat
    types = types or TypeSpace.default(*data.shape)
    if types.shape != data.shape:
        raise DimensionError("type labels do not match the table")
    _write(path, COUNTS_HEADER, counts_rows(data, types))


# ---------------------------------------------------------------- matrices

def read_matrix(path) -> tuple[np.ndarray, TypeSpace]:
    """Wide matrix: header ``x_type,<y labels...>``, one row per x type."""
    header, body = _rows(path)
    if len(header) < 2 or header[0] != "x_type":
        raise InputError("matrix header must start with x_type followed by y labels", path, 1)
    ys = header[1:]
    xs, values = [], []
    for line, row in body:
        _width(path, line, row, len(header))
        xs.append(row[0])
        values.append([_number(path, line, c, "entry") for c in row[1:]])
    if not xs:
        raise InputError("matrix has no rows", path)
    try:
        types = TypeSpace(tuple(xs), tuple(ys))
    except Exception as exc:
        raise InputError(str(exc), path) from None
    return np.array(values, dtype=float), types


def write_matrix(path, arr, types: TypeSpace | None = None) -> None:
    arr = np.asarray(arr, dtype=float)
    types = types or TypeSpace.default(*arr.shape)
    if types.shape != arr.shape:
        raise DimensionError("type labels do not match the matrix")
    _write(path, ("x_type",) + types.y_labels,
           ((x,) + tuple(format_number(v) for v in arr[i]) for i, x in enumerate(types.x_labels)))


# ---------------------------------------------------------------- margins

def read_margins(path) -> tuple[Margins, TypeSpace]:
    header, body = _rows(path)
    _expect_header(path, header, MARGINS_HEADER)
    sides: dict[str, dict[str, float]] = {"x": {}, "y": {}}
    for line, row in body:
        _width(path, line, row, 3)
        side, label, mass = row
        if side not in sides:
            raise InputError(f"side must be x or y, got {side!r}", path, line)
        if label in sides[side]:
            raise DuplicateCellError(f"{path}:{line}: duplicate {side} type {label}")
        value = _number(path, line, mass, "mass")
        if value < 0:
            raise NegativeMassError(f"{path}:{line}: negative mass for {side} type {label}")
        sides[side][label] = value
    try:
        types = TypeSpace(tuple(sides["x"]), tuple(sides["y"]))
    except Exception as exc:
        raise InputError(str(exc), path) from None
    return Margins(list(sides["x"].values()), list(sides["y"].values())), types


def write_margins(path, margins: Margins, types: TypeSpace | None = None) -> None:
    types = types or TypeSpace.default(*margins.shape)
    rows = [("x", s, format_number(v)) for s, v in zip(types.x_labels, margins.n)]
    rows += [("y", s, format_number(v)) for s, v in zip(types.y_labels, margins.m)]
    _write(path, MARGINS_HEADER, rows)


# ---------------------------------------------------------------- bases

def read_basis(path) -> tuple[BasisSystem, TypeSpace]:
    """Long format ``k,x_type,y_type,value``; omitted entries are zero."""
    header, body = _rows(path)
    _expect_header(path, header, BASIS_HEADER)
    seen: dict[tuple[str, str, str], int] = {}
    entries = []
    for line, row in body:
        _width(path, line, row, 4)
        k, x, y, val = row
        if SINGLE_TOKEN in (x, y):
            raise InputError("basis entries are defined on couples only", path, line)
        if (k, x, y) in seen:
            raise DuplicateCellError(
                f"{path}:{line}: duplicate basis entry ({k}, {x}, {y}), first on line {seen[(k, x, y)]}"
            )
        seen[(k, x, y)] = line
        entries.append((k, x, y, _number(path, line, val, "value")))
    if not entries:
        raise InputError("basis file has no entries", path)
    names = tuple(dict.fromkeys(e[0] for e in entries))
    types = TypeSpace(_first_appearance(e[1] for e in entries), _first_appearance(e[2] for e in entries))
    ki = {s: i for i, s in enumerate(names)}
    xi = {s: i for i, s in enumerate(types.x_labels)}
    yi = {s: i for i, s in enumerate(types.y_labels)}
    bases = np.zeros((len(names),) + types.shape)
    for k, x, y, v in entries:
        bases[ki[k], xi[x], yi[y]] = v
    return BasisSystem(bases, names), types


def write_basis(path, basis: BasisSystem, types: TypeSpace | None = None) -> None:
    types = types or TypeSpace.default(*basis.shape)
    rows = (
        (name, x, y, format_number(basis.bases[k, i, j]))
        for k, name in enumerate(basis.k_names)
        for i, x in enumerate(types.x_labels)
        for j, y in enumerate(types.y_labels)
    )
    _write(path, BASIS_HEADER, rows)


# ---------------------------------------------------------------- alignment

def _permutation(source: Sequence[str], target: Sequence[str], side: str) -> np.ndarray:
    if set(source) != set(target) or len(source) != len(target):
        raise DimensionError(
            f"{side} types differ between files: {sorted(set(source) ^ set(target))}"
        )
    pos = {s: i for i, s in enumerate(source)}
    return np.array([pos[s] for s in target], dtype=np.int64)


def align_basis(basis: BasisSystem, source: TypeSpace, target: TypeSpace) -> BasisSystem:
    """Reorder basis cells from ``source`` label order to ``target`` order."""
    px = _permutation(source.x_labels, target.x_labels, "x")
    py = _permutation(source.y_labels, target.y_labels, "y")
    return BasisSystem(basis.bases[:, px][:, :, py], basis.k_names)


def align_margins(margins: Margins, source: TypeSpace, target: TypeSpace) -> Margins:
    px = _permutation(source.x_labels, target.x_labels, "x")
    py = _permutation(source.y_labels, target.y_labels, "y")
    return Margins(margins.n[px], margins.m[py])


def align_matrix(arr, source: TypeSpace, target: TypeSpace) -> np.ndarray:
    px = _permutation(source.x_labels, target.x_labels, "x")
    py = _permutation(source.y_labels, target.y_labels, "y")
    return np.asarray(arr)[np.ix_(px, py)]


# ---------------------------------------------------------------- tables

def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Generic tidy CSV; floats go through :func:`format_number`."""
    _write(path, header, ([format_number(c) if isinstance(c, (float, np.floating)) else str(c) for c in r]
                          for r in rows))


def read_table(path) -> tuple[tuple[str, ...], list[list[str]]]:
    header, body = _rows(path)
    return header, [row for _, row in body]
