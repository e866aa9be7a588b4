"""Data model for forward-reverse Brascamp-Lieb data.

A datum consists of k input spaces E_i = R^{n_i} with positive rational
exponents c_i, m output spaces E^j = R^{m_j} with positive rational
exponents d_j, and a grid of linear maps B[i][j] : E_i -> E^j (absent
entries are zero maps). The assembled output map B_j acts on the direct
sum E_0 of the inputs, and the exponent-weighted map is B_j composed
with the block scaling Lambda = diag(c_i * id_{E_i}).

All types are immutable after construction; share them freely across
threads. Exact rational bookkeeping (the scaling condition) never touches
floating point.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from ._linalg import (
    RANK_RTOL,
    asymmetry,
    block_diag,
    offsets_of,
    rank,
    sym,
)

__all__ = [
    "DatumFormatError",
    "SymmetricOperator",
    "SpdOperator",
    "BlockDiagonal",
    "Datum",
    "ValidationReport",
    "validate",
    "assemble_Bj",
    "dual_datum",
    "map_extremizers_to_dual",
    "direct_sum",
    "datum_from_dict",
    "datum_to_dict",
    "load_datum",
    "parse_rational",
    "canonical_json",
]

_SYM_ATOL = 1e-12


class DatumFormatError(ValueError):
    """Malformed datum input; the message names the offending entry."""


def parse_rational(value, where: str = "value") -> Fraction:
    """Parse an exact positive-or-zero rational from an int or a 'p/q' string.

    Floats are rejected: exponents are exact by contract.
    """
    if isinstance(value, bool):
        raise DatumFormatError(f"{where}: expected a rational, got a bool")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        return value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise DatumFormatError(f"{where}: cannot parse rational from {value!r}") from exc
    raise DatumFormatError(
        f"{where}: expected an int or 'p/q' string, got {type(value).__name__}"
    )


@dataclass(frozen=True)
class SymmetricOperator:
    """A symmetric operator on R^n, symmetrized as (A + A^T)/2 at construction.

    Inputs whose asymmetry exceeds 1e-12 are rejected as input errors rather
    than silently symmetrized.
    """

    entries: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"symmetric operator must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("symmetric operator has non-finite entries")
        skew = asymmetry(a)
        if skew > _SYM_ATOL:
            raise ValueError(f"input asymmetry {skew:.3e} exceeds tolerance {_SYM_ATOL:.0e}")
        object.__setattr__(self, "entries", sym(a))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.entries


@dataclass(frozen=True)
class SpdOperator(SymmetricOperator):
    """A symmetric positive definite operator, verified by Cholesky."""

    def __post_init__(self) -> None:
        super().__post_init__()
        try:
            np.linalg.cholesky(self.entries)
        except np.linalg.LinAlgError as exc:
            raise ValueError("operator is not positive definite") from exc

    def inv(self) -> "SpdOperator":
        w, v = np.linalg.eigh(self.entries)
        return SpdOperator(sym((v / w) @ v.T))

    def logdet(self) -> float:
        return float(np.linalg.slogdet(self.entries)[1])


@dataclass(frozen=True)
class BlockDiagonal:
    """Block-diagonal operator assembled from square blocks."""

    blocks: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "blocks", tuple(np.asarray(b, dtype=float) for b in self.blocks)
        )
        for t, b in enumerate(self.blocks):
            if b.ndim != 2 or b.shape[0] != b.shape[1]:
                raise ValueError(f"block {t + 1} is not square: shape {b.shape}")

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(b.shape[0] for b in self.blocks)

    def dense(self) -> np.ndarray:
        return block_diag(list(self.blocks))


def _check_exponents(values, count: int, name: str) -> tuple[Fraction, ...]:
    out = []
    for t, v in enumerate(values):
        f = parse_rational(v, where=f"{name}[{t + 1}]")
        if f <= 0:
            raise DatumFormatError(f"{name}[{t + 1}] = {f} must be positive")
        out.append(f)
    if len(out) != count:
        raise DatumFormatError(f"{name} has {len(out)} entries, expected {count}")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class Datum:
    """An immutable forward-reverse Brascamp-Lieb datum (c, d, B)."""

    input_dims: tuple[int, ...]
    output_dims: tuple[int, ...]
    c: tuple[Fraction, ...]
    d: tuple[Fraction, ...]
    B: tuple[tuple[np.ndarray | None, ...], ...] = field(repr=False)

    def __post_init__(self) -> None:
        ins = tuple(int(n) for n in self.input_dims)
        outs = tuple(int(n) for n in self.output_dims)
        if len(ins) == 0 or len(outs) == 0:
            raise DatumFormatError("a datum needs at least one input and one output space")
        for t, n in enumerate(ins):
            if n < 1:
                raise DatumFormatError(f"input_dims[{t + 1}] = {n}; factors must have dim >= 1")
        for t, n in enumerate(outs):
            if n < 1:
                raise DatumFormatError(f"output_dims[{t + 1}] = {n}; outputs must have dim >= 1")
        object.__setattr__(self, "input_dims", ins)
        object.__setattr__(self, "output_dims", outs)
        object.__setattr__(self, "c", _check_exponents(self.c, len(ins), "c"))
        object.__setattr__(self, "d", _check_exponents(self.d, len(outs), "d"))

        grid = self.B
        if len(grid) != len(ins):
            raise DatumFormatError(f"B grid has {len(grid)} rows, expected k = {len(ins)}")
        rows = []
        for i, row in enumerate(grid):
            if len(row) != len(outs):
                raise DatumFormatError(
                    f"B grid row {i + 1} has {len(row)} entries, expected m = {len(outs)}"
                )
            cells = []
            for j, cell in enumerate(row):
                if cell is None:
                    cells.append(None)
                    continue
                a = np.asarray(cell, dtype=float)
                if a.shape != (outs[j], ins[i]):
                    raise DatumFormatError(
                        f"B[{i + 1},{j + 1}] has shape {a.shape}, "
                        f"expected ({outs[j]}, {ins[i]}) (rows = dim of output {j + 1})"
                    )
                if not np.all(np.isfinite(a)):
                    raise DatumFormatError(f"B[{i + 1},{j + 1}] has non-finite entries")
                a = a.copy()
                a.setflags(write=False)
                cells.append(a)
            rows.append(tuple(cells))
        object.__setattr__(self, "B", tuple(rows))

    # -- sizes and offsets -------------------------------------------------

    @property
    def k(self) -> int:
        return len(self.input_dims)

    @property
    def m(self) -> int:
        return len(self.output_dims)

    @cached_property
    def total_input_dim(self) -> int:
        return sum(self.input_dims)

    @cached_property
    def total_output_dim(self) -> int:
        return sum(self.output_dims)

    @cached_property
    def input_offsets(self) -> list[int]:
        return offsets_of(self.input_dims)

    @cached_property
    def output_offsets(self) -> list[int]:
        return offsets_of(self.output_dims)

    # -- exact rational bookkeeping ---------------------------------------

    @cached_property
    def scaling_lhs(self) -> Fraction:
        return sum((ci * ni for ci, ni in zip(self.c, self.input_dims)), Fraction(0))

    @cached_property
    def scaling_rhs(self) -> Fraction:
        return sum((dj * mj for dj, mj in zip(self.d, self.output_dims)), Fraction(0))

    @property
    def scaling_ok(self) -> bool:
        """Exact scaling condition sum_i c_i dim(E_i) == sum_j d_j dim(E^j)."""
        return self.scaling_lhs == self.scaling_rhs

    @cached_property
    def c_float(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.c)

    @cached_property
    def d_float(self) -> tuple[float, ...]:
        return tuple(float(x) for x in self.d)

    @cached_property
    def exponent_diag(self) -> np.ndarray:
        """Diagonal of Lambda = direct sum of c_i * id_{E_i}, as an N-vector."""
        out = np.empty(self.total_input_dim)
        for i, (ci, ni) in enumerate(zip(self.c_float, self.input_dims)):
            out[self.input_offsets[i]:self.input_offsets[i] + ni] = ci
        return out

    # -- assembled maps -----------------------------------------------------

    @cached_property
    def _assembled(self) -> tuple[np.ndarray, ...]:
        mats = []
        for j, mj in enumerate(self.output_dims):
            bj = np.zeros((mj, self.total_input_dim))
            for i, ni in enumerate(self.input_dims):
                cell = self.B[i][j]
                if cell is not None:
                    bj[:, self.input_offsets[i]:self.input_offsets[i] + ni] = cell
            bj.setflags(write=False)
            mats.append(bj)
        return tuple(mats)

    def assembled(self, j: int) -> np.ndarray:
        """B_j : E_0 -> E^j as a dense (dim E^j) x N matrix."""
        return self._assembled[j]

    @cached_property
    def weighted_maps(self) -> tuple[np.ndarray, ...]:
        """The exponent-weighted maps B_j Lambda, cached per output."""
        lam = self.exponent_diag
        return tuple(bj * lam[None, :] for bj in self._assembled)

    def input_block(self, a: np.ndarray, i: int) -> np.ndarray:
        off = self.input_offsets
        return a[off[i]:off[i + 1], off[i]:off[i + 1]]

    # -- serialization -------------------------------------------------------

    def to_json_dict(self) -> dict:
        grid = {}
        for i in range(self.k):
            for j in range(self.m):
                cell = self.B[i][j]
                if cell is not None:
                    grid[f"{i + 1},{j + 1}"] = [[float(x) for x in row] for row in cell]
        return {
            "input_dims": list(self.input_dims),
            "output_dims": list(self.output_dims),
            "c": [str(x) for x in self.c],
            "d": [str(x) for x in self.d],
            "B": grid,
        }

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_json_dict()).encode()).hexdigest()


# -- construction from JSON ---------------------------------------------------


def datum_from_dict(obj: dict) -> Datum:
    """Build a Datum from its JSON object form, naming offending entries."""
    if not isinstance(obj, dict):
        raise DatumFormatError("datum JSON must be an object")
    for key in ("input_dims", "output_dims", "c", "d", "B"):
        if key not in obj:
            raise DatumFormatError(f"datum JSON missing key {key!r}")
    try:
        ins = [int(n) for n in obj["input_dims"]]
        outs = [int(n) for n in obj["output_dims"]]
    except (TypeError, ValueError) as exc:
        raise DatumFormatError("input_dims/output_dims must be integer lists") from exc
    grid_obj = obj["B"]
    if not isinstance(grid_obj, dict):
        raise DatumFormatError('B must be an object with "i,j" keys')
    k, m = len(ins), len(outs)
    grid: list[list[np.ndarray | None]] = [[None] * m for _ in range(k)]
    for key, cell in grid_obj.items():
        try:
            si, sj = key.split(",")
            i, j = int(si), int(sj)
        except ValueError as exc:
            raise DatumFormatError(f'B key {key!r} is not of the form "i,j"') from exc
        if not (1 <= i <= k) or not (1 <= j <= m):
            raise DatumFormatError(
                f"B[{i},{j}] is out of range for k = {k} inputs, m = {m} outputs"
            )
        try:
            a = np.asarray(cell, dtype=float)
        except (TypeError, ValueError) as exc:
            raise DatumFormatError(f"B[{i},{j}] is not a numeric matrix") from exc
        if a.ndim != 2:
            raise DatumFormatError(f"B[{i},{j}] must be a matrix (list of rows)")
        grid[i - 1][j - 1] = a
    return Datum(
        input_dims=tuple(ins),
        output_dims=tuple(outs),
        c=tuple(parse_rational(x, where=f"c[{t + 1}]") for t, x in enumerate(obj["c"])),
        d=tuple(parse_rational(x, where=f"d[{t + 1}]") for t, x in enumerate(obj["d"])),
        B=tuple(tuple(row) for row in grid),
    )


def datum_to_dict(datum: Datum) -> dict:
    return datum.to_json_dict()


def load_datum(path: str) -> Datum:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatumFormatError(f"{path}: invalid JSON ({exc})") from exc
    return datum_from_dict(obj)


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class ValidationReport:
    scaling_ok: bool
    scaling_lhs: Fraction
    scaling_rhs: Fraction
    surjective: tuple[bool, ...]
    errors: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.scaling_ok and all(self.surjective) and not self.errors

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok,
            "scaling_ok": self.scaling_ok,
            "scaling_lhs": str(self.scaling_lhs),
            "scaling_rhs": str(self.scaling_rhs),
            "surjective": list(self.surjective),
            "errors": list(self.errors),
        }


def validate(datum: Datum, rtol: float = RANK_RTOL) -> ValidationReport:
    """Check exact scaling and surjectivity of every assembled output map.

    Shape errors are impossible on a constructed Datum (rejected at parse
    time); the report records the exact rational scaling check and a rank
    check of each B_j at relative tolerance rtol.
    """
    surj = []
    errors = []
    for j, mj in enumerate(datum.output_dims):
        r = rank(datum.assembled(j), rtol=rtol)
        surj.append(r == mj)
        if r != mj:
            errors.append(f"output map {j + 1} has rank {r} < dim {mj} (not surjective)")
    if not datum.scaling_ok:
        errors.append(
            f"scaling condition fails: sum c_i dim(E_i) = {datum.scaling_lhs} "
            f"!= {datum.scaling_rhs} = sum d_j dim(E^j)"
        )
    return ValidationReport(
        scaling_ok=datum.scaling_ok,
        scaling_lhs=datum.scaling_lhs,
        scaling_rhs=datum.scaling_rhs,
        surjective=tuple(surj),
        errors=tuple(errors),
    )


def assemble_Bj(datum: Datum, j: int) -> np.ndarray:
    """Dense assembled map B_j : E_0 -> E^j (0-based j)."""
    if not (0 <= j < datum.m):
        raise IndexError(f"output index {j} out of range for m = {datum.m}")
    return datum.assembled(j)


# -- duality -------------------------------------------------------------------


def dual_datum(datum: Datum) -> Datum:
    """The dual datum (d, c, B*): inputs and outputs swap, maps transpose.

    Applying this twice returns the original datum with bitwise-identical
    matrices.
    """
    grid = tuple(
        tuple(
            None if datum.B[i][j] is None else datum.B[i][j].T
            for i in range(datum.k)
        )
        for j in range(datum.m)
    )
    return Datum(
        input_dims=datum.output_dims,
        output_dims=datum.input_dims,
        c=datum.d,
        d=datum.c,
        B=grid,
    )


def map_extremizers_to_dual(
    V_list: list[SpdOperator], U_list: list[SpdOperator]
) -> tuple[list[SpdOperator], list[SpdOperator]]:
    """Map feasible (V, U) for a datum to (V', U') for its dual.

    V'_j = U_j^{-1} and U'_i = V_i^{-1}; feasibility transfers by the Schur
    complement argument, and optimality transfers when (V, U) is optimal.
    """
    vs = [v if isinstance(v, SpdOperator) else SpdOperator(np.asarray(v, float)) for v in V_list]
    us = [u if isinstance(u, SpdOperator) else SpdOperator(np.asarray(u, float)) for u in U_list]
    return [u.inv() for u in us], [v.inv() for v in vs]


# -- datum algebra -------------------------------------------------------------


def direct_sum(a: Datum, b: Datum) -> Datum:
    """Block direct sum: factors and outputs concatenate, no cross maps."""
    k, m = a.k + b.k, a.m + b.m
    grid: list[list[np.ndarray | None]] = [[None] * m for _ in range(k)]
    for i in range(a.k):
        for j in range(a.m):
            grid[i][j] = a.B[i][j]
    for i in range(b.k):
        for j in range(b.m):
            grid[a.k + i][a.m + j] = b.B[i][j]
    return Datum(
        input_dims=a.input_dims + b.input_dims,
        output_dims=a.output_dims + b.output_dims,
        c=a.c + b.c,
        d=a.d + b.d,
        B=tuple(tuple(row) for row in grid),
    )


# -- canonical JSON ------------------------------------------------------------


def _round_floats(obj):
    if isinstance(obj, float):
        return float(f"{obj:.12g}")
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats rounded to 12 significant digits."""
    return json.dumps(_round_floats(obj), sort_keys=True, separators=(",", ":"), allow_nan=True)
