import io
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dissimknn.dataset import (
    ColumnFormat,
    InteractionRecord,
    build_dataset,
    dataset_stats,
    parse_interactions,
)
from dissimknn.exceptions import ConfigurationError, EmptyInputError

from reference import random_edges


def _records(rows):
    return [InteractionRecord(*r) for r in rows]


def test_parse_single_line():
    res = parse_interactions(io.BytesIO(b"u1\ti7\t9\t100\n"), ColumnFormat())
    assert res.records == [InteractionRecord("u1", "i7", 9.0, 100)]
    assert res.errors == []


def test_parse_empty_stream():
    with pytest.raises(EmptyInputError):
        parse_interactions(io.BytesIO(b""))


def test_parse_accumulates_bad_lines():
    src = io.BytesIO(b"u1\ti1\t5\t1\nu2\ti1\tabc\t2\nu3\ti2\t3\t3\n")
    res = parse_interactions(src)
    assert len(res.records) == 2
    assert len(res.errors) == 1
    assert res.errors[0][0] == 2
    assert "line 2" in res.error_report()


def test_parse_only_bad_lines_is_empty_input():
    with pytest.raises(EmptyInputError, match="malformed"):
        parse_interactions(io.BytesIO(b"u1\ti1\tx\n"))


@pytest.mark.parametrize(
    "line, problem",
    [
        (b"u1\ti1\n", "fields"),
        (b"u1\ti1\t-1\t5\n", "non-negative"),
        (b"u1\ti1\tnan\t5\n", "finite"),
        (b"u1\ti1\t3\t5.5\n", "integer"),
        (b"\ti1\t3\t5\n", "non-empty"),
    ],
)
def test_parse_rejects(line, problem):
    res = parse_interactions(io.BytesIO(b"u0\ti0\t1\t1\n" + line))
    assert len(res.records) == 1
    assert problem in res.errors[0][1]


def test_parse_comma_with_header_and_no_rating():
    src = io.BytesIO(b"user,item\na,x\nb,y\n")
    res = parse_interactions(src, ColumnFormat.parse("comma:user,item", header=True))
    assert [(r.user_id, r.item_id, r.rating, r.timestamp) for r in res.records] == [
        ("a", "x", 1.0, None),
        ("b", "y", 1.0, None),
    ]


def test_parse_text_stream_and_skip_column():
    src = io.StringIO("x|u1|i1|4\n")
    res = parse_interactions(src, ColumnFormat.parse("pipe:_,user,item,rating"))
    assert res.records == [InteractionRecord("u1", "i1", 4.0)]


def test_parse_leaves_caller_stream_open():
    src = io.BytesIO(b"u1\ti1\t1\t1\n")
    parse_interactions(src)
    assert not src.closed


@pytest.mark.parametrize("text", ["tab", "tab:user,rating", "tab:user,item,item", "tab:user,item,score", "ab:user,item"])
def test_bad_format_descriptor(text):
    with pytest.raises(ConfigurationError):
        ColumnFormat.parse(text)


def test_parse_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_interactions(tmp_path / "nope.tsv")


def test_dedupe_keeps_latest():
    d = build_dataset(_records([("u1", "i1", 5, 10), ("u1", "i1", 7, 20)]))
    assert d.n_transactions == 1
    assert d.user_profile(0) == [(0, 7.0, 20)]


def test_dedupe_later_timestamp_first_in_file():
    d = build_dataset(_records([("u1", "i1", 7, 20), ("u1", "i1", 5, 10)]))
    assert d.user_profile(0) == [(0, 7.0, 20)]


@pytest.mark.parametrize("ts", [(5, 5), (None, None), (3, None)])
def test_dedupe_ties_keep_last(ts):
    d = build_dataset(_records([("u1", "i1", 1, ts[0]), ("u1", "i1", 2, ts[1])]))
    assert d.user_ratings.tolist() == [2.0]


def test_counting():
    d = build_dataset(_records([("u1", "i1", 5), ("u2", "i1", 4)]))
    assert len(d.users_of(0)) == 2
    assert len(d.items_of(0)) == len(d.items_of(1)) == 1
    assert not d.has_timestamps


def test_first_seen_index_order():
    d = build_dataset(_records([("b", "y", 1), ("a", "x", 1), ("b", "x", 1)]))
    assert d.user_ids == ("b", "a")
    assert d.item_ids == ("y", "x")
    for tok, idx in d.user_index.items():
        assert d.user_ids[idx] == tok


def test_min_interactions_filter():
    d = build_dataset(_records([("a", "x", 1), ("a", "y", 1), ("b", "x", 1)]), min_interactions=2)
    assert d.user_ids == ("a",)
    with pytest.raises(EmptyInputError):
        build_dataset(_records([("a", "x", 1)]), min_interactions=2)


def test_empty_records():
    with pytest.raises(EmptyInputError):
        build_dataset([])


def test_out_of_range_lookups():
    d = build_dataset(_records([("a", "x", 1)]))
    with pytest.raises(IndexError):
        d.items_of(1)
    with pytest.raises(IndexError):
        d.users_of(-1)


def test_arrays_are_read_only():
    d = build_dataset(_records([("a", "x", 1)]))
    with pytest.raises(ValueError):
        d.user_items[0] = 3


def _check_invariants(d, raw):
    """Full re-scan: transpose consistency, sortedness, totals, against raw triples."""
    expected = {}
    for u, i, r, _ in raw:
        expected[(u, i)] = r
    by_user = {}
    for u in range(d.n_users):
        items = d.items_of(u)
        assert np.all(np.diff(items) > 0)
        for i, r, _ in d.user_profile(u):
            by_user[(d.user_ids[u], d.item_ids[i])] = r
    by_item = {}
    for i in range(d.n_items):
        users = d.users_of(i)
        assert np.all(np.diff(users) > 0)
        for u, r in d.item_raters(i):
            by_item[(d.user_ids[u], d.item_ids[i])] = r
    assert by_user == by_item == expected
    assert d.item_degrees().sum() == d.user_degrees().sum() == d.n_transactions == len(expected)


def test_transpose_invariant_random():
    rng = random.Random(7)
    raw = random_edges(rng, 10, 10, 60)
    # add duplicates with later timestamps that must win
    raw += [(u, i, 0.5, ts + 2_000_000) for u, i, _, ts in raw[:10]]
    d = build_dataset(_records(raw))
    latest = {}
    for u, i, r, ts in raw:
        if (u, i) not in latest or ts >= latest[(u, i)][1]:
            latest[(u, i)] = (r, ts)
    _check_invariants(d, [(u, i, r, ts) for (u, i), (r, ts) in latest.items()])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 10)), min_size=1, max_size=100))
def test_transpose_invariant_property(rows):
    recs = [(f"u{u}", f"i{i}", float(r), None) for u, i, r in rows]
    d = build_dataset(_records(recs))
    last = {}
    for u, i, r, ts in recs:
        last[(u, i)] = r
    _check_invariants(d, [(u, i, r, None) for (u, i), r in last.items()])


def test_permutation_insensitive_edges():
    rng = random.Random(3)
    raw = random_edges(rng, 8, 8, 30)
    d1 = build_dataset(_records(raw))
    shuffled = raw[:]
    rng.shuffle(shuffled)
    d2 = build_dataset(_records(shuffled))

    def tokens(d):
        return {(d.user_ids[u], d.item_ids[i], r, t) for u in range(d.n_users) for i, r, t in d.user_profile(u)}

    assert tokens(d1) == tokens(d2)


def test_stats_trivial():
    d = build_dataset(_records([("a", "x", 1)]))
    s = dataset_stats(d)
    assert (s.n_users, s.n_items, s.n_transactions, s.sparsity) == (1, 1, 1, 0.0)
    assert s.as_dict() == {"users": 1, "items": 1, "transactions": 1, "sparsity": 0.0}


@pytest.mark.parametrize(
    "users, items, tx, pct",
    [(7642, 11916, 221367, "99.76%"), (7279, 37232, 2056487, "99.24%"), (1850, 11247, 59071, "99.72%")],
)
def test_stats_table_rows(users, items, tx, pct):
    from dissimknn.dataset import DatasetStats

    s = DatasetStats(users, items, tx)
    assert s.sparsity == 1 - tx / (users * items)
    assert pct in s.format_table()
