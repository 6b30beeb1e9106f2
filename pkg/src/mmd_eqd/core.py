"""Data model, configuration and seeded randomness shared by the package."""

from __future__ import annotations

import csv
import enum
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SEED_ENV_VAR = "MMD_EQD_SEED"


class ValidationError(ValueError):
    """Input data or configuration violates a contract."""


class SchemaMismatch(ValidationError):
    pass


class NonBinaryTreatment(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class NumericalError(RuntimeError):
    """A numerical routine failed (e.g. eigensolver non-convergence)."""


# ---------------------------------------------------------------------------
# Observations and datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    w: np.ndarray
    y: np.ndarray
    a: int | None = None


@dataclass(frozen=True)
class Schema:
    """Which CSV columns play the covariate, treatment and outcome roles."""

    w: tuple[str, ...]
    y: tuple[str, ...]
    a: str | None = None

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "Schema":
        def as_tuple(v):
            if v is None:
                return ()
            return (v,) if isinstance(v, str) else tuple(v)

        a = mapping.get("A", mapping.get("a"))
        return cls(
            w=as_tuple(mapping.get("W", mapping.get("w"))),
            y=as_tuple(mapping.get("Y", mapping.get("y"))),
            a=a,
        )

    @property
    def columns(self) -> list[str]:
        cols = list(self.w)
        if self.a is not None:
            cols.append(self.a)
        return cols + list(self.y)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented sample of ``n`` observations.

    ``w`` is (n, q), ``y`` is (n, d) even for scalar outcomes, ``a`` is an
    integer vector of 0/1 labels or ``None``.
    """

    w: np.ndarray
    y: np.ndarray
    a: np.ndarray | None = None
    schema: Schema | None = None

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if y.ndim == 1:
            y = y[:, None]
        n = y.shape[0]
        if w.shape[0] != n:
            raise ValidationError(f"w has {w.shape[0]} rows but y has {n}")
        if n < 2:
            raise ValidationError("a dataset needs at least two observations")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
            raise NonFiniteValue("covariates and outcomes must be finite")
        a = self.a
        if a is not None:
            a = np.asarray(a)
            if a.shape != (n,):
                raise ValidationError("treatment vector must have one entry per row")
            if not np.all(np.isin(a, (0, 1))):
                raise NonBinaryTreatment("treatment values must be exactly 0 or 1")
            a = a.astype(int)
            a.setflags(write=False)
        w.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def w_dim(self) -> int:
        return self.w.shape[1]

    @property
    def y_dim(self) -> int:
        return self.y.shape[1]

    def __len__(self) -> int:
        return self.n

    @property
    def observations(self) -> list[Observation]:
        a = self.a if self.a is not None else [None] * self.n
        return [Observation(w=self.w[i], y=self.y[i], a=None if a[i] is None else int(a[i]))
                for i in range(self.n)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            w=self.w[idx], y=self.y[idx],
            a=None if self.a is None else self.a[idx],
            schema=self.schema,
        )

    def default_schema(self) -> Schema:
        if self.schema is not None:
            return self.schema
        w = tuple(f"w{j + 1}" for j in range(self.w_dim))
        y = ("y",) if self.y_dim == 1 else tuple(f"y{j + 1}" for j in range(self.y_dim))
        return Schema(w=w, y=y, a="a" if self.a is not None else None)

    def to_csv(self, path: str | Path | None = None) -> str:
        """Write a header + rows CSV; floats use ``repr`` so they round-trip."""
        schema = self.default_schema()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(schema.columns)
        for i in range(self.n):
            row = [repr(float(v)) for v in self.w[i]]
            if self.a is not None:
                row.append(str(int(self.a[i])))
            row.extend(repr(float(v)) for v in self.y[i])
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _parse_float(cell: str, column: str, row: int) -> float:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise NonFiniteValue(f"row {row}, column {column!r}: cannot parse {cell!r}") from None
    if not np.isfinite(value):
        raise NonFiniteValue(f"row {row}, column {column!r}: non-finite value {cell!r}")
    return value


def validate_dataset(raw: Sequence[Sequence[str]], schema: Schema | Mapping) -> Dataset:
    """Turn a parsed CSV table (header first) into a validated :class:`Dataset`."""
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    if not raw:
        raise SchemaMismatch("empty table: a header row is required")
    header = [h.strip() for h in raw[0]]
    missing = [c for c in schema.columns if c not in header]
    if missing:
        raise SchemaMismatch(f"columns not found in header: {missing}")
    if not schema.y:
        raise SchemaMismatch("schema must name at least one outcome column")
    pos = {c: header.index(c) for c in schema.columns}

    w_rows, a_rows, y_rows = [], [], []
    for r, row in enumerate(raw[1:], start=2):
        if len(row) != len(header):
            raise SchemaMismatch(f"row {r} has {len(row)} cells, header has {len(header)}")
        w_rows.append([_parse_float(row[pos[c]], c, r) for c in schema.w])
        y_rows.append([_parse_float(row[pos[c]], c, r) for c in schema.y])
        if schema.a is not None:
            a_val = _parse_float(row[pos[schema.a]], schema.a, r)
            if a_val not in (0.0, 1.0):
                raise NonBinaryTreatment(f"row {r}: treatment {row[pos[schema.a]]!r} is not 0/1")
            a_rows.append(int(a_val))

    n = len(y_rows)
    w = np.array(w_rows, dtype=float).reshape(n, len(schema.w))
    return Dataset(
        w=w,
        y=np.array(y_rows, dtype=float),
        a=np.array(a_rows, dtype=int) if schema.a is not None else None,
        schema=schema,
    )


def read_csv(path: str | Path, schema: Schema | Mapping) -> Dataset:
    with open(path, newline="") as fh:
        raw = list(csv.reader(fh))
    return validate_dataset(raw, schema)


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSeed:
    """A (seed, stream) pair naming one reproducible random stream."""

    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.stream < 0:
            raise ValueError("stream id must be non-negative")

    def generator(self, *keys: int) -> np.random.Generator:
        """Generator for this stream; extra ``keys`` select independent sub-streams."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.stream, *keys]))

    def child(self, stream: int) -> "RngSeed":
        return replace(self, stream=stream)

    @classmethod
    def from_env(cls, default: int = 0, stream: int = 0) -> "RngSeed":
        value = os.environ.get(SEED_ENV_VAR)
        return cls(int(value) if value else default, stream)


def standard_normal_stream(seed: RngSeed, count: int) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be non-negative")
    return seed.generator().standard_normal(count)


# ---------------------------------------------------------------------------
# Test configuration
# ---------------------------------------------------------------------------


class Calibration(str, enum.Enum):
    DEGENERATE_S = "degenerate-s"
    GRAM_EIGEN = "gram-eigen"
    CHEBYSHEV = "chebyshev"


class Splitting(str, enum.Enum):
    NONE = "none"
    TWO_FOLD = "two-fold"


ALL = "all"


def default_eigen_count(n: int) -> int | str:
    return ALL if n <= 125 else 200


@dataclass(frozen=True)
class TestConfig:
    """Settings for one run of the test.

    ``eigen_count=None`` means the size-dependent default (all eigenvalues up
    to n=125, the top 200 beyond).
    """

    __test__ = False  # not a pytest class

    alpha: float = 0.05
    calibration: Calibration = Calibration.GRAM_EIGEN
    eigen_count: int | str | None = None
    mc_draws: int = 100_000
    bandwidth: float = 1.0
    sample_splitting: Splitting = Splitting.NONE
    seed: RngSeed = field(default_factory=RngSeed)

    def __post_init__(self):
        object.__setattr__(self, "calibration", Calibration(self.calibration))
        object.__setattr__(self, "sample_splitting", Splitting(self.sample_splitting))
        if isinstance(self.seed, int):
            object.__setattr__(self, "seed", RngSeed(self.seed))
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")
        if not self.bandwidth > 0:
            raise ValidationError("bandwidth must be positive")
        if self.mc_draws < 1:
            raise ValidationError("mc_draws must be positive")
        ec = self.eigen_count
        if isinstance(ec, str):
            if ec.lower() != ALL:
                raise ValidationError(f"eigen_count must be a positive integer or 'all', got {ec!r}")
            object.__setattr__(self, "eigen_count", ALL)
        elif ec is not None and ec < 1:
            raise ValidationError("eigen_count must be positive")

    def resolved_eigen_count(self, n: int) -> int | str:
        ec = self.eigen_count if self.eigen_count is not None else default_eigen_count(n)
        if ec != ALL and ec > n:
            raise ValidationError(f"eigen_count={ec} exceeds n={n}")
        return ec

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = self.calibration.value
        d["sample_splitting"] = self.sample_splitting.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        seed = d.get("seed")
        if isinstance(seed, Mapping):
            d["seed"] = RngSeed(**seed)
        elif isinstance(seed, int):
            d["seed"] = RngSeed(seed)
        return cls(**d)


def load_config_file(path: str | Path) -> dict:
    """Read a JSON or TOML file into a plain dict (no validation)."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def as_generator(seed: RngSeed | np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return np.random.default_rng(seed)


def iter_chunks(total: int, size: int) -> Iterable[tuple[int, int]]:
    for start in range(0, total, size):
        yield start, min(start + size, total)
