"""Long-format clustered and longitudinal data: loading, validation, transforms.

A :class:`Dataset` is an immutable long-format table with one row per
observation, a mandatory cluster identifier column, and an optional integer
occasion column for longitudinal data.  Rows are kept sorted by cluster label
(and by occasion within cluster when an occasion column is declared), so that
per-cluster blocks are contiguous and deterministic across runs.

Missing covariate or response values are allowed to remain in a Dataset as
NaN; they are excluded per model at design-build time so that one Dataset can
serve many model specifications.  Only rows whose cluster (or occasion)
identifier is missing are dropped at load time, since they can never be
attributed to a cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .errors import (
    DataError,
    DegenerateScaleError,
    ConfigError,
    ParseError,
    SchemaError,
)

#: Tokens treated as missing in the CSV dialect.
MISSING_TOKENS = ("", "NA")

NUMERIC = "numeric"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Dataset:
    """Long-format observations sorted by cluster.

    Parameters
    ----------
    frame : pandas.DataFrame
        Column data; numeric columns are float64, categorical columns are
        strings.  The index is a contiguous RangeIndex.
    cluster_column : str
        Name of the level-2 identifier column.
    occasion_column : str or None
        Name of the integer occasion-index column for longitudinal data.
    n_excluded : int
        Rows dropped at load time because their cluster or occasion
        identifier was missing.
    """

    frame: pd.DataFrame
    cluster_column: str
    occasion_column: str | None = None
    n_excluded: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.frame.columns)

    def is_numeric(self, column: str) -> bool:
        self._require(column)
        return pd.api.types.is_numeric_dtype(self.frame[column])

    def _require(self, column: str) -> None:
        if column not in self.frame.columns:
            raise SchemaError(f"column {column!r} not in dataset")

    def with_column(self, name: str, values) -> "Dataset":
        """Return a new Dataset with an appended column."""
        if name in self.frame.columns:
            raise SchemaError(f"column {name!r} already exists")
        frame = self.frame.copy()
        frame[name] = np.asarray(values)
        return replace(self, frame=frame)

    @classmethod
    def from_frame(
        cls,
        frame: pd.DataFrame,
        cluster: str,
        occasion: str | None = None,
    ) -> "Dataset":
        """Build a Dataset from an in-memory table.

        Rows with a missing cluster (or occasion, when declared) identifier
        are dropped and counted.  Rows are sorted by cluster label, stably,
        and by occasion within cluster when an occasion column is given.
        Numeric columns must not contain infinities; occasions must be
        integer valued and unique within cluster.
        """
        frame = frame.copy()
        for col in (cluster, occasion):
            if col is not None and col not in frame.columns:
                raise SchemaError(f"column {col!r} not in table")

        n_before = len(frame)
        keep = frame[cluster].notna()
        if occasion is not None:
            keep &= frame[occasion].notna()
        frame = frame.loc[keep]
        n_excluded = n_before - len(frame)
        if len(frame) == 0:
            raise DataError("no rows remain after excluding missing identifiers")

        for col in frame.columns:
            if pd.api.types.is_numeric_dtype(frame[col]):
                values = frame[col].to_numpy(dtype=float, na_value=np.nan)
                bad = np.isinf(values)
                if bad.any():
                    raise DataError(
                        f"column {col!r} contains non-finite value at row "
                        f"{int(np.argmax(bad))}"
                    )
                frame[col] = values
            else:
                frame[col] = frame[col].astype(object).where(frame[col].notna(), np.nan)

        if occasion is not None:
            occ = frame[occasion].to_numpy(dtype=float)
            if not np.allclose(occ, np.round(occ)):
                raise DataError(f"occasion column {occasion!r} must be integer valued")
            frame[occasion] = np.round(occ).astype(np.int64)
            frame = frame.sort_values([cluster, occasion], kind="stable")
            if frame.duplicated([cluster, occasion]).any():
                dup = frame[frame.duplicated([cluster, occasion])].iloc[0]
                raise DataError(
                    f"duplicate (cluster, occasion) pair "
                    f"({dup[cluster]!r}, {dup[occasion]!r})"
                )
        else:
            frame = frame.sort_values(cluster, kind="stable")

        frame = frame.reset_index(drop=True)
        return cls(
            frame=frame,
            cluster_column=cluster,
            occasion_column=occasion,
            n_excluded=n_excluded,
        )

    def to_csv(self, path) -> None:
        """Write the table in the loader's CSV dialect (missing -> empty)."""
        self.frame.to_csv(path, index=False, na_rep="")


@dataclass(frozen=True)
class GroupIndex:
    """Per-cluster row spans of a cluster-sorted Dataset."""

    clusters: tuple
    starts: np.ndarray
    sizes: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def total_rows(self) -> int:
        return int(self.sizes.sum())

    def rows(self, j: int) -> slice:
        start = int(self.starts[j])
        return slice(start, start + int(self.sizes[j]))


def load_long_csv(
    path,
    schema: dict[str, str],
    cluster: str,
    occasion: str | None = None,
) -> Dataset:
    """Load a long-format CSV into a Dataset.

    Parameters
    ----------
    path : path-like
        Comma-separated UTF-8 file with a header row.  Missing values are
        the empty field or the literal ``NA``.
    schema : dict
        Maps column name to ``"numeric"`` or ``"categorical"``.  Every
        declared column must appear in the header; undeclared file columns
        are ignored.
    cluster : str
        Level-2 identifier column; must be declared in the schema.
    occasion : str, optional
        Integer occasion column for longitudinal data; must be declared.

    Raises
    ------
    ParseError
        Malformed CSV or unparseable numeric cell (reports the data row).
    SchemaError
        Declared column absent from the header, or bad type declaration.
    DataError
        No usable rows, infinities, or duplicate (cluster, occasion) pairs.
    """
    for col, kind in schema.items():
        if kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown type {kind!r} for column {col!r}")
    for col in (cluster, occasion):
        if col is not None and col not in schema:
            raise SchemaError(f"column {col!r} must be declared in the schema")

    try:
        raw = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            encoding="utf-8",
            skip_blank_lines=True,
        )
    except pd.errors.ParserError as exc:
        raise ParseError(f"malformed CSV {path}: {exc}") from exc
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"empty file: {path}") from exc

    missing_cols = [c for c in schema if c not in raw.columns]
    if missing_cols:
        raise SchemaError(f"columns {missing_cols} not found in header of {path}")

    frame = pd.DataFrame(index=raw.index)
    for col, kind in schema.items():
        cells = raw[col].str.strip()
        is_missing = cells.isin(MISSING_TOKENS)
        if kind == NUMERIC:
            values = pd.to_numeric(cells.where(~is_missing), errors="coerce")
            bad = values.isna() & ~is_missing
            if bad.any():
                row = int(np.argmax(bad.to_numpy()))
                raise ParseError(
                    f"row {row + 1}: cannot parse {cells.iloc[row]!r} as a "
                    f"number for column {col!r}"
                )
            frame[col] = values.to_numpy(dtype=float)
        else:
            frame[col] = cells.where(~is_missing, np.nan)

    return Dataset.from_frame(frame, cluster=cluster, occasion=occasion)


def standardize(ds: Dataset, column: str) -> Dataset:
    """Rescale a numeric column to sample mean 0 and variance 1 (n-1 divisor)."""
    _check_numeric(ds, column)
    values = ds.frame[column].to_numpy()
    finite = values[np.isfinite(values)]
    if np.unique(finite).size < 2:
        raise DegenerateScaleError(f"column {column!r} has fewer than 2 distinct values")
    mean = finite.mean()
    sd = finite.std(ddof=1)
    frame = ds.frame.copy()
    frame[column] = (values - mean) / sd
    return replace(ds, frame=frame)


def cluster_mean(ds: Dataset, column: str, name: str | None = None) -> Dataset:
    """Append a column holding each row's cluster mean of `column`.

    Missing values are ignored in the mean; the derived column is constant
    within every cluster.
    """
    _check_numeric(ds, column)
    name = name or f"{column}_mean"
    means = ds.frame.groupby(ds.cluster_column, sort=False)[column].transform("mean")
    return ds.with_column(name, means.to_numpy())


def encode_categorical(ds: Dataset, column: str, reference: str) -> Dataset:
    """Append one 0/1 indicator per non-reference level of a categorical column.

    Levels are ordered lexicographically; the reference level is omitted.
    The original column is retained.  Rows with a missing category get
    missing indicators.
    """
    ds._require(column)
    if ds.is_numeric(column):
        raise SchemaError(f"column {column!r} is numeric, not categorical")
    cells = ds.frame[column]
    levels = sorted(cells.dropna().unique().tolist())
    if reference not in levels:
        raise ConfigError(
            f"reference level {reference!r} not among levels {levels} of {column!r}"
        )
    out = ds
    for level in levels:
        if level == reference:
            continue
        indicator = np.where(
            cells.isna(), np.nan, (cells == level).astype(float)
        )
        out = out.with_column(f"{column}_{level}", indicator)
    return out


def interaction(ds: Dataset, a: str, b: str, name: str | None = None) -> Dataset:
    """Append the elementwise product of two numeric columns."""
    _check_numeric(ds, a)
    _check_numeric(ds, b)
    name = name or f"{a}_x_{b}"
    product = ds.frame[a].to_numpy() * ds.frame[b].to_numpy()
    return ds.with_column(name, product)


def group_index(ds: Dataset) -> GroupIndex:
    """Index the per-cluster row spans of a cluster-sorted Dataset."""
    labels = ds.frame[ds.cluster_column].to_numpy()
    if len(labels) == 0:
        raise DataError("cannot index an empty dataset")
    change = np.empty(len(labels), dtype=bool)
    change[0] = True
    change[1:] = labels[1:] != labels[:-1]
    starts = np.flatnonzero(change)
    clusters = tuple(labels[starts])
    if len(set(clusters)) != len(clusters):
        raise DataError("dataset rows are not sorted by cluster")
    sizes = np.diff(np.append(starts, len(labels)))
    return GroupIndex(clusters=clusters, starts=starts, sizes=sizes)


def _check_numeric(ds: Dataset, column: str) -> None:
    ds._require(column)
    if not ds.is_numeric(column):
        raise SchemaError(f"column {column!r} is not numeric")
