"""Interaction parsing and the bidirectional sparse adjacency used everywhere else.

A :class:`Dataset` keeps two CSR-style views of the same edge set: for each
item the sorted user indices that experienced it (``U(i)``) and for each user
the sorted item indices in their profile (``I(u)``).
"""

from __future__ import annotations

import io
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from .exceptions import ConfigurationError, EmptyInputError

_log = logging.getLogger(__name__)

COLUMN_NAMES = ("user", "item", "rating", "timestamp")
_SKIP_COLUMNS = ("_", "skip")
_DELIMITERS = {"tab": "\t", "tsv": "\t", "comma": ",", "csv": ",", "space": " ", "semicolon": ";", "pipe": "|"}


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    rating: float = 1.0
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be non-empty")
        if not math.isfinite(self.rating) or self.rating < 0:
            raise ValueError(f"rating must be finite and non-negative, got {self.rating!r}")


@dataclass(frozen=True)
class ColumnFormat:
    """Delimiter plus the role of every column in a line.

    Columns named ``_`` or ``skip`` are ignored. Without a ``rating`` column
    every record gets rating 1.
    """

    delimiter: str = "\t"
    columns: tuple[str, ...] = ("user", "item", "rating", "timestamp")
    header: bool = False

    def __post_init__(self):
        roles = [c for c in self.columns if c not in _SKIP_COLUMNS]
        unknown = set(roles) - set(COLUMN_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown column role(s): {sorted(unknown)}", "--format")
        if len(roles) != len(set(roles)):
            raise ConfigurationError("duplicate column role in format", "--format")
        if "user" not in roles or "item" not in roles:
            raise ConfigurationError("format must name both a user and an item column", "--format")
        if not self.delimiter:
            raise ConfigurationError("empty delimiter", "--format")

    @classmethod
    def parse(cls, text: str, header: bool = False) -> "ColumnFormat":
        """Parse a descriptor such as ``"tab:user,item,rating,timestamp"``.

        The delimiter part is a name (tab, comma, space, semicolon, pipe) or a
        single literal character.
        """
        delim_part, sep, cols_part = text.partition(":")
        if not sep:
            raise ConfigurationError(f"format {text!r} is not DELIMITER:COLUMNS", "--format")
        delimiter = _DELIMITERS.get(delim_part.lower(), delim_part)
        if len(delimiter) != 1:
            raise ConfigurationError(f"unknown delimiter {delim_part!r}", "--format")
        columns = tuple(c.strip().lower() for c in cols_part.split(","))
        return cls(delimiter=delimiter, columns=columns, header=header)

    def index_of(self, role: str) -> int | None:
        try:
            return self.columns.index(role)
        except ValueError:
            return None


@dataclass
class ParseResult:
    records: list[InteractionRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)
    lines_read: int = 0

    def error_report(self, limit: int = 20) -> str:
        lines = [f"{len(self.errors)} malformed line(s) out of {self.lines_read}"]
        lines += [f"  line {no}: {msg}" for no, msg in self.errors[:limit]]
        if len(self.errors) > limit:
            lines.append(f"  ... {len(self.errors) - limit} more")
        return "\n".join(lines)


def _parse_timestamp(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        value = float(text)
        if not value.is_integer():
            raise ValueError(f"timestamp {text!r} is not an integer") from None
        return int(value)


def _text_lines(source) -> Iterable[str]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            yield from _text_lines(fh)
        return
    if isinstance(source, io.TextIOBase):
        yield from source
        return
    wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
    try:
        yield from wrapper
    finally:
        # leave the caller's stream open
        wrapper.detach()


def parse_interactions(source: BinaryIO | TextIO | str | os.PathLike, fmt: ColumnFormat | None = None) -> ParseResult:
    """Read delimited interactions, one record per well-formed line in file order.

    Malformed lines are collected in ``ParseResult.errors`` as
    ``(line_number, message)``. Raises :class:`EmptyInputError` when no line
    yields a valid record.
    """
    fmt = fmt or ColumnFormat()
    iu, ii = fmt.index_of("user"), fmt.index_of("item")
    ir, it = fmt.index_of("rating"), fmt.index_of("timestamp")
    width = max(i for i in (iu, ii, ir, it) if i is not None) + 1

    result = ParseResult(records=[])
    for lineno, raw in enumerate(_text_lines(source), start=1):
        if lineno == 1 and fmt.header:
            continue
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        result.lines_read += 1
        parts = line.split(fmt.delimiter)
        if len(parts) < width:
            result.errors.append((lineno, f"expected at least {width} fields, found {len(parts)}"))
            continue
        try:
            rating = float(parts[ir]) if ir is not None else 1.0
            timestamp = _parse_timestamp(parts[it].strip()) if it is not None else None
            record = InteractionRecord(parts[iu].strip(), parts[ii].strip(), rating, timestamp)
        except ValueError as exc:
            result.errors.append((lineno, str(exc)))
            continue
        result.records.append(record)

    if not result.records:
        raise EmptyInputError(
            "no valid interaction records in input"
            + (f" ({len(result.errors)} malformed line(s))" if result.errors else "")
        )
    return result


class Dataset:
    """Immutable user/item interaction graph with interned identifiers.

    Item-major arrays (``item_indptr``, ``item_users``, ``item_ratings``) hold
    ``U(i)``; user-major arrays (``user_indptr``, ``user_items``,
    ``user_ratings``, ``user_timestamps``) hold ``I(u)``. Rows are strictly
    sorted by index. ``user_timestamps`` is ``None`` unless every interaction
    carries a timestamp.
    """

    def __init__(self, users, items, ratings, timestamps, user_ids: Sequence[str], item_ids: Sequence[str]):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        ratings = np.asarray(ratings, dtype=np.float64)
        self.user_ids = tuple(user_ids)
        self.item_ids = tuple(item_ids)
        self.n_users = len(self.user_ids)
        self.n_items = len(self.item_ids)
        self.user_index = {t: i for i, t in enumerate(self.user_ids)}
        self.item_index = {t: i for i, t in enumerate(self.item_ids)}
        if len(self.user_index) != self.n_users or len(self.item_index) != self.n_items:
            raise ValueError("duplicate identifier tokens")
        if not (len(users) == len(items) == len(ratings)):
            raise ValueError("edge arrays differ in length")
        if len(users) and (users.min() < 0 or users.max() >= self.n_users or items.min() < 0 or items.max() >= self.n_items):
            raise IndexError("edge index out of range")

        by_user = np.lexsort((items, users))
        u_sorted, i_sorted = users[by_user], items[by_user]
        if len(u_sorted) > 1 and np.any((u_sorted[1:] == u_sorted[:-1]) & (i_sorted[1:] == i_sorted[:-1])):
            raise ValueError("duplicate (user, item) edge")
        self.user_indptr = _indptr(u_sorted, self.n_users)
        self.user_items = i_sorted
        self.user_ratings = ratings[by_user]
        if timestamps is None:
            self.user_timestamps = None
        else:
            self.user_timestamps = np.asarray(timestamps, dtype=np.int64)[by_user]

        by_item = np.lexsort((users, items))
        self.item_indptr = _indptr(items[by_item], self.n_items)
        self.item_users = users[by_item]
        self.item_ratings = ratings[by_item]

        for arr in self._arrays():
            arr.setflags(write=False)

    def _arrays(self):
        arrays = [self.user_indptr, self.user_items, self.user_ratings,
                  self.item_indptr, self.item_users, self.item_ratings]
        if self.user_timestamps is not None:
            arrays.append(self.user_timestamps)
        return arrays

    @property
    def n_transactions(self) -> int:
        return len(self.user_items)

    @property
    def has_timestamps(self) -> bool:
        return self.user_timestamps is not None

    def items_of(self, u: int) -> np.ndarray:
        """Sorted item indices in the profile of user ``u``."""
        _check_index(u, self.n_users, "user")
        return self.user_items[self.user_indptr[u]:self.user_indptr[u + 1]]

    def users_of(self, i: int) -> np.ndarray:
        """Sorted user indices that experienced item ``i``."""
        _check_index(i, self.n_items, "item")
        return self.item_users[self.item_indptr[i]:self.item_indptr[i + 1]]

    def user_profile(self, u: int) -> list[tuple[int, float, int | None]]:
        lo, hi = self.user_indptr[u], self.user_indptr[u + 1]
        ts = self.user_timestamps
        return [
            (int(self.user_items[p]), float(self.user_ratings[p]), None if ts is None else int(ts[p]))
            for p in range(lo, hi)
        ]

    def item_raters(self, i: int) -> list[tuple[int, float]]:
        lo, hi = self.item_indptr[i], self.item_indptr[i + 1]
        return [(int(self.item_users[p]), float(self.item_ratings[p])) for p in range(lo, hi)]

    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    def item_degrees(self) -> np.ndarray:
        return np.diff(self.item_indptr)

    def edge_arrays(self):
        """``(users, items, ratings, timestamps)`` in user-major order."""
        users = np.repeat(np.arange(self.n_users), self.user_degrees())
        return users, self.user_items, self.user_ratings, self.user_timestamps

    def interaction_matrix(self) -> sp.csr_matrix:
        """Binary users x items CSR matrix (ratings are not used by the measures)."""
        data = np.ones(self.n_transactions, dtype=np.float64)
        return sp.csr_matrix((data, self.user_items, self.user_indptr), shape=(self.n_users, self.n_items))

    def __repr__(self):
        return f"Dataset(n_users={self.n_users}, n_items={self.n_items}, n_transactions={self.n_transactions})"


def _indptr(sorted_rows: np.ndarray, n_rows: int) -> np.ndarray:
    counts = np.bincount(sorted_rows, minlength=n_rows) if len(sorted_rows) else np.zeros(n_rows, dtype=np.int64)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return indptr


def _check_index(idx: int, n: int, what: str):
    if not 0 <= idx < n:
        raise IndexError(f"{what} index {idx} out of range [0, {n})")


def _supersedes(new: InteractionRecord, old: InteractionRecord) -> bool:
    if new.timestamp is None or old.timestamp is None:
        return True
    return new.timestamp >= old.timestamp


def build_dataset(records: Iterable[InteractionRecord], min_interactions: int | None = None) -> Dataset:
    """Intern identifiers and build the adjacency, collapsing duplicate pairs.

    For repeated (user, item) pairs the record with the greatest timestamp is
    kept; on ties or missing timestamps the later record in input order wins.
    Dense indices follow first-seen order. ``min_interactions`` drops users
    with fewer distinct items (after deduplication).
    """
    latest: dict[tuple[str, str], InteractionRecord] = {}
    for rec in records:
        key = (rec.user_id, rec.item_id)
        old = latest.get(key)
        if old is None or _supersedes(rec, old):
            latest[key] = rec
    if not latest:
        raise EmptyInputError("no interaction records")

    # dict preserves first-insertion order of keys, which is first-seen order
    kept = list(latest.values())
    if min_interactions:
        activity = Counter(r.user_id for r in kept)
        kept = [r for r in kept if activity[r.user_id] >= min_interactions]
        if not kept:
            raise EmptyInputError(f"no user has at least {min_interactions} interactions")

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users = np.empty(len(kept), dtype=np.int64)
    items = np.empty(len(kept), dtype=np.int64)
    ratings = np.empty(len(kept), dtype=np.float64)
    for n, rec in enumerate(kept):
        users[n] = user_index.setdefault(rec.user_id, len(user_index))
        items[n] = item_index.setdefault(rec.item_id, len(item_index))
        ratings[n] = rec.rating

    if all(r.timestamp is not None for r in kept):
        timestamps = np.array([r.timestamp for r in kept], dtype=np.int64)
    else:
        if any(r.timestamp is not None for r in kept):
            _log.warning("some interactions lack timestamps; dataset treated as untimed")
        timestamps = None
    return Dataset(users, items, ratings, timestamps, list(user_index), list(item_index))


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_transactions: int

    @property
    def sparsity(self) -> float:
        return 1.0 - self.n_transactions / (self.n_users * self.n_items)

    def as_dict(self) -> dict:
        return {"users": self.n_users, "items": self.n_items,
                "transactions": self.n_transactions, "sparsity": self.sparsity}

    def format_table(self, name: str = "dataset") -> str:
        header = ("Dataset", "#Users", "#Items", "#Transactions", "Sparsity")
        row = (name, f"{self.n_users:,}", f"{self.n_items:,}", f"{self.n_transactions:,}", f"{100 * self.sparsity:.2f}%")
        widths = [max(len(h), len(c)) for h, c in zip(header, row)]
        fmt = lambda cells: "  ".join(
            c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths))
        )
        return f"{fmt(header)}\n{fmt(row)}"


def dataset_stats(d: Dataset) -> DatasetStats:
    return DatasetStats(d.n_users, d.n_items, d.n_transactions)
