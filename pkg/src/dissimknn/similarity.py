"""Set-based similarities, their dissimilarity corrections and top-k neighbor extraction.

Every measure is a function of three counts for an ordered pair ``(i, j)``:
``n_i = |U(i)|``, ``n_j = |U(j)|`` and ``n_both = |U(i) & U(j)|`` (with user
profiles ``I(u)`` in place of ``U(i)`` on the user axis). A measure is the
composition of

* a base similarity of a family (jaccard, sorensen, asym-jaccard, asor),
* a dissimilarity of the same family, asymmetric (users of ``j`` that never
  experienced ``i``) or symmetric (both exclusive parts), and
* a combiner: none, additive ``sim - lam * dis`` or multiplicative
  ``sim / max(dis, floor)`` where ``floor = 1 / denominator``.

For a fixed target ``i`` the asymmetric dissimilarity penalises candidates
``j`` whose audience is mostly outside ``U(i)``.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .dataset import Dataset
from .exceptions import ConfigurationError

_log = logging.getLogger(__name__)

FAMILIES = ("jaccard", "sorensen", "asym-jaccard", "asor")
ADJUSTMENTS = ("none", "additive", "multiplicative")
SYMMETRIES = ("asymmetric", "symmetric", "n/a")


@dataclass(frozen=True)
class PairCounts:
    n_i: int
    n_j: int
    n_both: int

    def __post_init__(self):
        if min(self.n_i, self.n_j, self.n_both) < 0:
            raise ValueError("counts must be non-negative")
        if self.n_both > min(self.n_i, self.n_j):
            raise ValueError(f"n_both={self.n_both} exceeds min(n_i, n_j)")

    @property
    def union(self) -> int:
        return self.n_i + self.n_j - self.n_both

    def swapped(self) -> "PairCounts":
        return PairCounts(self.n_j, self.n_i, self.n_both)


@dataclass(frozen=True)
class MeasureSpec:
    """Declarative description of one similarity measure.

    ``dissim_family`` overrides the family used for the dissimilarity term and
    its clamp floor; it exists only to express the cross-family compositions
    (e.g. asymmetric Jaccard times the inverse Jaccard dissimilarity) used by
    ``preset(..., literal_tables=True)``.
    """

    family: str
    adjustment: str = "none"
    dissim_symmetry: str = "n/a"
    lam: float | None = None
    dissim_family: str | None = None
    name: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.adjustment not in ADJUSTMENTS:
            raise ConfigurationError(f"unknown adjustment {self.adjustment!r}")
        if self.dissim_symmetry not in SYMMETRIES:
            raise ConfigurationError(f"unknown dissimilarity symmetry {self.dissim_symmetry!r}")
        if self.adjustment == "none":
            if self.dissim_symmetry != "n/a" or self.lam is not None or self.dissim_family is not None:
                raise ConfigurationError("an unadjusted measure takes no dissimilarity or lambda")
            return
        if self.family == "asor":
            raise ConfigurationError("asor is a baseline and cannot be adjusted")
        if self.dissim_symmetry == "n/a":
            raise ConfigurationError("adjusted measures need an asymmetric or symmetric dissimilarity")
        if self.dissim_family not in (None, "jaccard", "sorensen", "asym-jaccard"):
            raise ConfigurationError(f"invalid dissimilarity family {self.dissim_family!r}")
        if self.adjustment == "additive":
            if self.lam is None or not 0 < self.lam <= 1:
                raise ConfigurationError(f"lambda must lie in (0, 1], got {self.lam!r}", "--lambda")
        elif self.lam is not None:
            raise ConfigurationError("lambda only applies to additive measures", "--lambda")

    @property
    def effective_dissim_family(self) -> str:
        return self.dissim_family or self.family

    @property
    def label(self) -> str:
        return self.name or f"{self.family}/{self.adjustment}/{self.dissim_symmetry}"

    def with_lambda(self, lam: float) -> "MeasureSpec":
        return replace(self, lam=lam)


# name -> (family, adjustment, dissim_symmetry)
PRESETS: dict[str, tuple[str, str, str]] = {
    "JS": ("jaccard", "none", "n/a"),
    "AAJ": ("jaccard", "additive", "asymmetric"),
    "MAJ": ("jaccard", "multiplicative", "asymmetric"),
    "S-AAJ": ("jaccard", "additive", "symmetric"),
    "S-MAJ": ("jaccard", "multiplicative", "symmetric"),
    "ASOR": ("asor", "none", "n/a"),
    "SOR": ("sorensen", "none", "n/a"),
    "AAS": ("sorensen", "additive", "asymmetric"),
    "MAS": ("sorensen", "multiplicative", "asymmetric"),
    "S-AAS": ("sorensen", "additive", "symmetric"),
    "S-MAS": ("sorensen", "multiplicative", "symmetric"),
    "AJS": ("asym-jaccard", "none", "n/a"),
    "AAAJ": ("asym-jaccard", "additive", "asymmetric"),
    "MAAJ": ("asym-jaccard", "multiplicative", "asymmetric"),
    "S-AAAJ": ("asym-jaccard", "additive", "symmetric"),
    "S-MAAJ": ("asym-jaccard", "multiplicative", "symmetric"),
}

# multiplicative presets whose published table formula uses the Jaccard-family inverse
_LITERAL_DISSIM_FAMILY = {"MAAJ": "jaccard", "S-MAAJ": "jaccard", "S-MAS": "jaccard"}


def preset_names() -> list[str]:
    return list(PRESETS)


def is_additive(name: str) -> bool:
    return PRESETS[canonical_name(name)][1] == "additive"


def canonical_name(name: str, option: str = "--preset") -> str:
    key = name.strip().upper()
    if key not in PRESETS:
        raise ConfigurationError(f"unknown measure preset {name!r}; choose from {', '.join(PRESETS)}", option)
    return key


def preset(name: str, lam: float | None = None, literal_tables: bool = False) -> MeasureSpec:
    """Build the :class:`MeasureSpec` for a short preset name such as ``"S-MAJ"``.

    ``lam`` is required for additive presets and ignored otherwise.
    """
    key = canonical_name(name)
    family, adjustment, symmetry = PRESETS[key]
    dissim_family = _LITERAL_DISSIM_FAMILY.get(key) if literal_tables else None
    if adjustment == "additive":
        if lam is None:
            raise ConfigurationError(f"preset {key} needs a lambda value", "--lambda")
    else:
        lam = None
    return MeasureSpec(family, adjustment, symmetry, lam, dissim_family, key)


# -- kernels: accept numpy arrays or scalars -------------------------------------


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def _denominator(family: str, n_i, n_j, n_both):
    if family == "jaccard":
        return n_i + n_j - n_both
    if family == "sorensen":
        return n_i + n_j
    if family == "asym-jaccard":
        return n_i
    raise ConfigurationError(f"family {family!r} has no dissimilarity")


def base_values(family: str, n_i, n_j, n_both) -> np.ndarray:
    if family == "asor":
        return _ratio(n_both, n_i) * _ratio(n_both, n_i + n_j)
    return _ratio(n_both, _denominator(family, n_i, n_j, n_both))


def dissim_values(family: str, symmetry: str, n_i, n_j, n_both) -> np.ndarray:
    if symmetry == "asymmetric":
        num = n_j - n_both
    elif symmetry == "symmetric":
        num = n_i + n_j - 2 * n_both
    else:
        raise ConfigurationError(f"no dissimilarity for symmetry {symmetry!r}")
    return _ratio(num, _denominator(family, n_i, n_j, n_both))


def measure_values(spec: MeasureSpec, n_i, n_j, n_both) -> np.ndarray:
    """Vectorised measure over aligned count arrays; degenerate pairs give 0."""
    n_i = np.asarray(n_i, dtype=np.int64)
    n_j = np.asarray(n_j, dtype=np.int64)
    n_both = np.asarray(n_both, dtype=np.int64)
    sim = base_values(spec.family, n_i, n_j, n_both)
    if spec.adjustment == "none":
        return sim
    dfam = spec.effective_dissim_family
    dis = dissim_values(dfam, spec.dissim_symmetry, n_i, n_j, n_both)
    if spec.adjustment == "additive":
        return sim - spec.lam * dis
    den = np.asarray(_denominator(dfam, n_i, n_j, n_both), dtype=np.float64)
    floor = _ratio(1.0, den)
    out = np.zeros_like(sim)
    np.divide(sim, np.maximum(dis, floor), out=out, where=den > 0)
    return out


# -- scalar operations -----------------------------------------------------------


def base_similarity(family: str, c: PairCounts) -> float:
    return float(base_values(family, c.n_i, c.n_j, c.n_both))


def dissimilarity(family: str, symmetry: str, c: PairCounts) -> float:
    return float(dissim_values(family, symmetry, c.n_i, c.n_j, c.n_both))


def dissimilarity_exact(family: str, symmetry: str, c: PairCounts) -> Fraction:
    """Rational form of :func:`dissimilarity`, for exact identities."""
    num = c.n_j - c.n_both if symmetry == "asymmetric" else c.n_i + c.n_j - 2 * c.n_both
    den = _denominator(family, c.n_i, c.n_j, c.n_both)
    return Fraction(num, den) if den > 0 else Fraction(0)


def clamp_floor(family: str, c: PairCounts) -> float:
    """Smallest value the dissimilarity may take in a multiplicative combination."""
    den = _denominator(family, c.n_i, c.n_j, c.n_both)
    return 1.0 / den if den > 0 else 0.0


def combine(adjustment: str, sim: float, dis: float, lam: float | None = None, floor: float | None = None) -> float:
    if adjustment == "none":
        return sim
    if adjustment == "additive":
        if lam is None or not 0 < lam <= 1:
            raise ConfigurationError(f"lambda must lie in (0, 1], got {lam!r}", "--lambda")
        return sim - lam * dis
    if adjustment == "multiplicative":
        if floor is None or not floor > 0:
            raise ConfigurationError(f"clamp floor must be positive, got {floor!r}")
        return sim / max(dis, floor)
    raise ConfigurationError(f"unknown adjustment {adjustment!r}")


def measure_counts(spec: MeasureSpec, c: PairCounts) -> float:
    sim = base_similarity(spec.family, c)
    if spec.adjustment == "none":
        return sim
    dfam = spec.effective_dissim_family
    floor = clamp_floor(dfam, c)
    if spec.adjustment == "multiplicative" and floor == 0.0:
        return 0.0
    dis = dissimilarity(dfam, spec.dissim_symmetry, c)
    return combine(spec.adjustment, sim, dis, spec.lam, floor)


# -- pair counting ---------------------------------------------------------------


def sorted_intersection_size(a: Sequence[int], b: Sequence[int]) -> int:
    """Merge-count the common elements of two strictly increasing sequences."""
    a = a.tolist() if isinstance(a, np.ndarray) else a
    b = b.tolist() if isinstance(b, np.ndarray) else b
    p = q = n = 0
    la, lb = len(a), len(b)
    while p < la and q < lb:
        x, y = a[p], b[q]
        if x == y:
            n += 1
            p += 1
            q += 1
        elif x < y:
            p += 1
        else:
            q += 1
    return n


def _members(d: Dataset, axis: str):
    if axis == "item":
        return d.item_indptr, d.item_users, d.n_items
    if axis == "user":
        return d.user_indptr, d.user_items, d.n_users
    raise ConfigurationError(f"axis must be 'item' or 'user', got {axis!r}", "--scheme")


def member_set(d: Dataset, axis: str, a: int) -> np.ndarray:
    indptr, indices, n = _members(d, axis)
    if not 0 <= a < n:
        raise IndexError(f"{axis} index {a} out of range [0, {n})")
    return indices[indptr[a]:indptr[a + 1]]


def pair_counts(d: Dataset, axis: str, a: int, b: int) -> PairCounts:
    sa, sb = member_set(d, axis, a), member_set(d, axis, b)
    return PairCounts(len(sa), len(sb), sorted_intersection_size(sa, sb))


def measure(spec: MeasureSpec, d: Dataset, axis: str, a: int, b: int) -> float:
    return measure_counts(spec, pair_counts(d, axis, a, b))


# -- neighborhoods -----------------------------------------------------------------


@dataclass(frozen=True)
class NeighborLists:
    """Per-entity ranked neighbors in CSR layout.

    Row ``e`` is ``indices[indptr[e]:indptr[e+1]]`` with the matching
    ``values``, ordered by descending value then ascending index.
    """

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray

    @property
    def n_entities(self) -> int:
        return len(self.indptr) - 1

    def row(self, e: int) -> list[tuple[int, float]]:
        lo, hi = self.indptr[e], self.indptr[e + 1]
        return list(zip(self.indices[lo:hi].tolist(), self.values[lo:hi].tolist()))

    def to_sparse(self) -> sp.csr_matrix:
        n = self.n_entities
        return sp.csr_matrix((self.values, self.indices, self.indptr), shape=(n, n))


def membership_matrix(d: Dataset, axis: str) -> sp.csr_matrix:
    """Binary entity x member matrix with int32 data so products count exactly."""
    indptr, indices, n = _members(d, axis)
    n_members = d.n_users if axis == "item" else d.n_items
    data = np.ones(len(indices), dtype=np.int32)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n_members))


def _row_chunks(m: sp.csr_matrix, budget: int) -> list[tuple[int, int]]:
    # upper bound on co-occurrence entries per row: sum of member degrees
    member_deg = np.asarray(m.sum(axis=0)).ravel().astype(np.int64)
    bound = m.astype(np.int64) @ member_deg
    chunks, lo, acc = [], 0, 0
    for r, w in enumerate(bound.tolist()):
        if acc and acc + w > budget:
            chunks.append((lo, r))
            lo, acc = r, 0
        acc += w
    if lo < m.shape[0]:
        chunks.append((lo, m.shape[0]))
    return chunks


def _rank_within_rows(rows, cols, vals, k):
    # entries arrive ordered by (row, col); the stable sort keeps col order among ties
    order = np.lexsort((-vals, rows))
    r = rows[order]
    start = np.searchsorted(r, r, side="left")
    return order[(np.arange(len(r)) - start) < k]


def _cooccurrence(m, mt, lo, hi):
    c = m[lo:hi] @ mt
    c.sort_indices()
    c = c.tocoo()
    rows = c.row.astype(np.int64) + lo
    cols = c.col.astype(np.int64)
    n_both = c.data.astype(np.int64)
    keep = (cols != rows) & (n_both > 0)
    return rows[keep], cols[keep], n_both[keep]


def cooccurrence_counts(d: Dataset, axis: str, rows: Sequence[int] | None = None):
    """All ordered pairs (a, b), a != b, sharing at least one member, with their counts.

    Returns aligned arrays ``(a, b, n_a, n_b, n_both)``.
    """
    m = membership_matrix(d, axis)
    deg = np.diff(m.indptr).astype(np.int64)
    if rows is None:
        a, b, nb = _cooccurrence(m, m.T.tocsr(), 0, m.shape[0])
    else:
        rows = np.unique(np.asarray(rows, dtype=np.int64))
        c = m[rows] @ m.T.tocsr()
        c.sort_indices()
        c = c.tocoo()
        a, b, nb = rows[c.row], c.col.astype(np.int64), c.data.astype(np.int64)
        keep = (a != b) & (nb > 0)
        a, b, nb = a[keep], b[keep], nb[keep]
    return a, b, deg[a], deg[b], nb


def top_k_all(
    d: Dataset,
    axis: str,
    specs: Sequence[MeasureSpec],
    k: int,
    workers: int = 1,
    chunk_budget: int = 4_000_000,
) -> list[NeighborLists]:
    """Top-``k`` neighbors of every entity on ``axis`` for each spec in one pass.

    Only entities sharing at least one member with the target are candidates.
    Rows are split into chunks whose co-occurrence size stays under
    ``chunk_budget`` entries; chunks run on ``workers`` threads and results do
    not depend on the chunking or worker count.
    """
    if k < 1:
        raise ConfigurationError(f"k must be at least 1, got {k}", "--k")
    m = membership_matrix(d, axis)
    mt = m.T.tocsr()
    deg = np.diff(m.indptr).astype(np.int64)
    n = m.shape[0]

    def work(bounds):
        rows, cols, nb = _cooccurrence(m, mt, *bounds)
        ni, nj = deg[rows], deg[cols]
        parts = []
        for spec in specs:
            vals = measure_values(spec, ni, nj, nb)
            keep = _rank_within_rows(rows, cols, vals, k)
            parts.append((rows[keep], cols[keep], vals[keep]))
        return parts

    chunks = _row_chunks(m, chunk_budget)
    _log.debug("top-k over %d %ss in %d chunk(s)", n, axis, len(chunks))
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    out = []
    for s in range(len(specs)):
        rows = np.concatenate([r[s][0] for r in results]) if results else np.empty(0, np.int64)
        cols = np.concatenate([r[s][1] for r in results]) if results else np.empty(0, np.int64)
        vals = np.concatenate([r[s][2] for r in results]) if results else np.empty(0)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
        out.append(NeighborLists(indptr, cols, vals))
    return out


def top_k_neighbors(d: Dataset, axis: str, target: int, k: int, spec: MeasureSpec) -> list[tuple[int, float]]:
    """Ranked ``(index, value)`` neighbors of a single entity."""
    _, _, n = _members(d, axis)
    if not 0 <= target < n:
        raise IndexError(f"{axis} index {target} out of range [0, {n})")
    if k < 1:
        raise ConfigurationError(f"k must be at least 1, got {k}", "--k")
    a, b, na, nb_, both = cooccurrence_counts(d, axis, [target])
    vals = measure_values(spec, na, nb_, both)
    keep = _rank_within_rows(a, b, vals, k)
    return list(zip(b[keep].tolist(), vals[keep].tolist()))


def format_triples(lists: NeighborLists, ids: Sequence[str] | None = None) -> str:
    """``a \\t b \\t value`` lines sorted by (a, b); tokens replace indices when ``ids`` is given."""
    rows = np.repeat(np.arange(lists.n_entities), np.diff(lists.indptr))
    order = np.lexsort((lists.indices, rows))
    lines = []
    for a, b, v in zip(rows[order].tolist(), lists.indices[order].tolist(), lists.values[order].tolist()):
        if ids is not None:
            a, b = ids[a], ids[b]
        lines.append(f"{a}\t{b}\t{v!r}\n")
    return "".join(lines)
