"""Model specification and per-cluster design-matrix construction.

A :class:`ModelSpec` names the response, the fixed terms, the random terms
over the cluster, and the level-1 residual structure.  Terms are either the
intercept ``"1"``, a numeric column name, or a product ``"a:b"`` of two
numeric columns ("a*b" is accepted and normalized).  Dummies and other
derived regressors are created with the dataset transforms and then named
like any other column.

:func:`build_design` evaluates a spec against a Dataset, drops the rows
missing the response or any used covariate (per-model missing-at-random
handling), and returns contiguous per-cluster blocks for the likelihood
kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .data import Dataset, group_index
from .errors import CollinearityError, DataError, SchemaError, SpecError

INTERCEPT = "1"

IID = "iid"
AR1 = "ar1"

#: Relative tolerance on singular values for the stacked-design rank check.
RANK_RTOL = 1e-10


@dataclass(frozen=True)
class Residual:
    """Level-1 residual structure: independent or AR(1) over occasions."""

    kind: str = IID
    occasion: str | None = None

    def __post_init__(self):
        if self.kind not in (IID, AR1):
            raise SpecError(f"unknown residual kind {self.kind!r}")
        if self.kind == AR1 and not self.occasion:
            raise SpecError("ar1 residuals require an occasion column name")
        if self.kind == IID and self.occasion is not None:
            raise SpecError("iid residuals take no occasion column")


def _normalize_term(term: str) -> str:
    term = term.strip().replace("*", ":")
    parts = [p.strip() for p in term.split(":")]
    if any(not p for p in parts) or len(parts) > 2:
        raise SpecError(f"malformed term {term!r}")
    if INTERCEPT in parts and len(parts) > 1:
        raise SpecError(f"intercept cannot enter a product: {term!r}")
    return ":".join(parts)


def term_columns(term: str) -> tuple[str, ...]:
    """Base column names a term reads (empty for the intercept)."""
    if term == INTERCEPT:
        return ()
    return tuple(term.split(":"))


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a two-level linear mixed model.

    Parameters
    ----------
    response : str
        Name of the numeric response column.
    fixed : sequence of str
        Ordered fixed-effect terms.
    random : sequence of str
        Ordered random-effect terms over the cluster.  Every random term
        must also appear among the fixed terms, so that the random effects
        stay centered at zero.
    cluster : str
        Name of the level-2 identifier column.
    residual : Residual
        Level-1 residual structure.
    """

    response: str
    fixed: tuple[str, ...]
    random: tuple[str, ...] = (INTERCEPT,)
    cluster: str = "cluster"
    residual: Residual = field(default_factory=Residual)

    def __post_init__(self):
        fixed = tuple(_normalize_term(t) for t in self.fixed)
        random = tuple(_normalize_term(t) for t in self.random)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "random", random)
        if not self.response:
            raise SpecError("response column name is required")
        if not fixed:
            raise SpecError("at least one fixed term is required")
        if not random:
            raise SpecError("at least one random term is required")
        for terms in (fixed, random):
            if len(set(terms)) != len(terms):
                raise SpecError(f"duplicate terms in {terms}")
        missing = [t for t in random if t not in fixed]
        if missing:
            raise SpecError(
                f"random terms {missing} must also appear among the fixed terms"
            )

    @property
    def p(self) -> int:
        return len(self.fixed)

    @property
    def q(self) -> int:
        return len(self.random)

    def base_columns(self) -> tuple[str, ...]:
        """All column names the spec reads, response first, without repeats."""
        seen: dict[str, None] = {self.response: None}
        for term in self.fixed + self.random:
            for col in term_columns(term):
                seen.setdefault(col, None)
        return tuple(seen)

    def to_json_dict(self) -> dict:
        residual: dict = {"kind": self.residual.kind}
        if self.residual.occasion is not None:
            residual["occasion"] = self.residual.occasion
        return {
            "response": self.response,
            "fixed": list(self.fixed),
            "random": {"cluster": self.cluster, "terms": list(self.random)},
            "residual": residual,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ModelSpec":
        try:
            residual = Residual(
                kind=doc.get("residual", {}).get("kind", IID),
                occasion=doc.get("residual", {}).get("occasion"),
            )
            return cls(
                response=doc["response"],
                fixed=tuple(doc["fixed"]),
                random=tuple(doc["random"]["terms"]),
                cluster=doc["random"]["cluster"],
                residual=residual,
            )
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed model-spec JSON: {exc}") from exc


def describe(spec: ModelSpec) -> str:
    """Deterministic one-line rendering of the model formula."""
    fixed = " + ".join(spec.fixed)
    random = " + ".join(spec.random)
    text = f"{spec.response} ~ {fixed} + ({random} | {spec.cluster})"
    if spec.residual.kind == AR1:
        text += f", resid = ar1({spec.residual.occasion})"
    return text


@dataclass(frozen=True)
class DesignMatrices:
    """Per-cluster numeric blocks of a model evaluated on a Dataset.

    Blocks are ordered by sorted cluster label.  ``X[j]`` is n_j x p,
    ``Z[j]`` is n_j x q with Z columns a subset of the X columns by term
    identity, and ``occasions[j]`` holds the integer occasion indices when
    the Dataset declares them (needed for AR(1) residual gaps).
    """

    y: tuple[np.ndarray, ...]
    X: tuple[np.ndarray, ...]
    Z: tuple[np.ndarray, ...]
    occasions: tuple[np.ndarray, ...] | None
    clusters: tuple
    fixed_labels: tuple[str, ...]
    random_labels: tuple[str, ...]
    cluster_name: str
    response: str
    n_dropped: int
    cluster_constants: dict[str, np.ndarray]

    @property
    def J(self) -> int:
        return len(self.clusters)

    @property
    def n(self) -> int:
        return sum(len(yj) for yj in self.y)

    @property
    def p(self) -> int:
        return len(self.fixed_labels)

    @property
    def q(self) -> int:
        return len(self.random_labels)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(yj) for yj in self.y], dtype=np.int64)

    @cached_property
    def pattern_groups(self) -> tuple["PatternGroup", ...]:
        """Clusters grouped by identical (Z, occasions) pattern.

        Clusters sharing a random-design block and occasion layout share the
        same marginal covariance for any variance parameters, so the
        likelihood kernel factors it once per group.  Grouping changes
        nothing observable: it is keyed on exact byte equality.
        """
        groups: dict[bytes, list[int]] = {}
        for j in range(self.J):
            key = self.Z[j].tobytes()
            if self.occasions is not None:
                key += b"|" + self.occasions[j].tobytes()
            groups.setdefault(key, []).append(j)
        out = []
        for members in groups.values():
            j0 = members[0]
            X = np.stack([self.X[j] for j in members])
            y = np.stack([self.y[j] for j in members])
            m, nj, p = X.shape
            # Fixed right-hand side for the per-group whitening solve.
            rhs = np.concatenate([X.transpose(1, 0, 2).reshape(nj, m * p), y.T], axis=1)
            out.append(
                PatternGroup(
                    members=tuple(members),
                    Z=self.Z[j0],
                    occ=None if self.occasions is None else self.occasions[j0],
                    X=X,
                    y=y,
                    rhs=rhs,
                    first_cluster=self.clusters[j0],
                )
            )
        return tuple(out)


@dataclass(frozen=True)
class PatternGroup:
    """Clusters that share one covariance pattern (see DesignMatrices)."""

    members: tuple[int, ...]
    Z: np.ndarray
    occ: np.ndarray | None
    X: np.ndarray  # (m, n, p)
    y: np.ndarray  # (m, n)
    rhs: np.ndarray  # (n, m*p + m): member X blocks then member y columns
    first_cluster: object


def _evaluate_term(term: str, frame) -> np.ndarray:
    if term == INTERCEPT:
        return np.ones(len(frame))
    cols = term_columns(term)
    values = frame[cols[0]].to_numpy(dtype=float)
    for col in cols[1:]:
        values = values * frame[col].to_numpy(dtype=float)
    return values


def build_design(ds: Dataset, spec: ModelSpec) -> DesignMatrices:
    """Evaluate a ModelSpec on a Dataset into per-cluster blocks.

    Rows missing the response or any covariate the spec uses are dropped
    here (and counted in ``n_dropped``); clusters losing all rows drop out
    of the index.  The stacked fixed design must have full column rank.
    """
    if spec.cluster != ds.cluster_column:
        raise SpecError(
            f"spec clusters on {spec.cluster!r} but dataset is indexed by "
            f"{ds.cluster_column!r}"
        )
    if spec.residual.kind == AR1:
        if ds.occasion_column is None:
            raise SpecError("ar1 residuals require a dataset with an occasion column")
        if spec.residual.occasion != ds.occasion_column:
            raise SpecError(
                f"ar1 occasion {spec.residual.occasion!r} does not match the "
                f"dataset occasion column {ds.occasion_column!r}"
            )

    for col in spec.base_columns():
        if col not in ds.frame.columns:
            raise SchemaError(f"column {col!r} not in dataset")
        if not ds.is_numeric(col):
            raise SchemaError(
                f"column {col!r} is categorical; encode it before modelling"
            )

    used = ds.frame[list(spec.base_columns())].to_numpy(dtype=float)
    keep = np.isfinite(used).all(axis=1)
    n_dropped = int((~keep).sum())
    frame = ds.frame.loc[keep]
    if len(frame) == 0:
        raise DataError("no complete rows remain for this model")

    X_cols = [_evaluate_term(t, frame) for t in spec.fixed]
    X_all = np.column_stack(X_cols)
    _check_rank(X_all, spec.fixed)
    Z_all = np.column_stack([X_cols[spec.fixed.index(t)] for t in spec.random])
    y_all = frame[spec.response].to_numpy(dtype=float)

    sub = Dataset(
        frame=frame.reset_index(drop=True),
        cluster_column=ds.cluster_column,
        occasion_column=ds.occasion_column,
    )
    gi = group_index(sub)
    spans = [gi.rows(j) for j in range(gi.n_clusters)]
    occasions = None
    if ds.occasion_column is not None:
        occ_all = frame[ds.occasion_column].to_numpy(dtype=np.int64)
        occasions = tuple(occ_all[s] for s in spans)

    constants = _cluster_constants(frame, spec, gi, spans)

    return DesignMatrices(
        y=tuple(y_all[s] for s in spans),
        X=tuple(X_all[s] for s in spans),
        Z=tuple(Z_all[s] for s in spans),
        occasions=occasions,
        clusters=gi.clusters,
        fixed_labels=spec.fixed,
        random_labels=spec.random,
        cluster_name=spec.cluster,
        response=spec.response,
        n_dropped=n_dropped,
        cluster_constants=constants,
    )


def _cluster_constants(frame, spec: ModelSpec, gi, spans) -> dict[str, np.ndarray]:
    """Values of base columns that are constant within every cluster."""
    constants: dict[str, np.ndarray] = {}
    for col in spec.base_columns():
        if col == spec.response:
            continue
        values = frame[col].to_numpy(dtype=float)
        per_cluster = np.array([values[s][0] for s in spans])
        if all(np.all(values[s] == per_cluster[j]) for j, s in enumerate(spans)):
            constants[col] = per_cluster
    return constants


def _check_rank(X: np.ndarray, labels: tuple[str, ...]) -> None:
    s = np.linalg.svd(X, compute_uv=False)
    rank = int((s > s[0] * RANK_RTOL).sum()) if s.size else 0
    if rank == X.shape[1]:
        return
    # Greedy prefix scan to name the first term that adds no rank.
    prev = 0
    for k in range(X.shape[1]):
        sk = np.linalg.svd(X[:, : k + 1], compute_uv=False)
        rk = int((sk > sk[0] * RANK_RTOL).sum())
        if rk == prev:
            raise CollinearityError(
                f"fixed design is rank deficient: term {labels[k]!r} is "
                f"collinear with the preceding terms",
                term=labels[k],
            )
        prev = rk
    raise CollinearityError("fixed design is rank deficient")
