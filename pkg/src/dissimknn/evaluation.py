"""Hold-out splitting, Precision@N, aggregate diversity, lambda sweeps and paired tests."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .dataset import Dataset
from .exceptions import ConfigurationError, InsufficientDataError
from .knn import DEFAULT_K, RecommendationList, fit_models, recommend_all, scheme_axis
from .similarity import canonical_name, is_additive, preset

_log = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = (0.2, 0.4, 0.6, 0.8)
SPLIT_MODES = ("temporal", "random")


@dataclass(frozen=True)
class SplitPair:
    """Train dataset (same id space as the source) plus per-user held-out items."""

    train: Dataset
    test: dict[int, list[tuple[int, float]]]
    mode: str
    seed: int | None = None

    @property
    def n_test(self) -> int:
        return sum(len(v) for v in self.test.values())


def _n_test(fraction: Fraction, n: int) -> int:
    if n < 2:
        return 0
    # keep at least one training interaction per user
    return min(math.ceil(fraction * n), n - 1)


def holdout_split(d: Dataset, test_fraction: float = 0.2, mode: str = "temporal", seed: int = 0) -> SplitPair:
    """Per-user hold-out of the ``ceil(test_fraction * |I(u)|)`` latest interactions.

    ``temporal`` orders each profile by (timestamp, item index) and needs
    timestamps; ``random`` uses a per-user shuffle drawn from ``seed``. Users
    with a single interaction stay entirely in train.
    """
    if not 0 < test_fraction < 1:
        raise ConfigurationError(f"test fraction must lie in (0, 1), got {test_fraction!r}", "--fraction")
    if mode not in SPLIT_MODES:
        raise ConfigurationError(f"unknown split mode {mode!r}", "--split")
    if mode == "temporal" and not d.has_timestamps:
        raise ConfigurationError("temporal split needs timestamps on every interaction; use --split random", "--split")

    frac = Fraction(repr(float(test_fraction)))
    rng = np.random.default_rng(seed) if mode == "random" else None
    is_test = np.zeros(d.n_transactions, dtype=bool)
    for u in range(d.n_users):
        lo, hi = int(d.user_indptr[u]), int(d.user_indptr[u + 1])
        n = hi - lo
        n_test = _n_test(frac, n)
        if n_test == 0:
            continue
        if mode == "temporal":
            order = np.lexsort((d.user_items[lo:hi], d.user_timestamps[lo:hi]))
        else:
            order = rng.permutation(n)
        is_test[lo + order[n - n_test:]] = True

    users, items, ratings, ts = d.edge_arrays()
    train = Dataset(users[~is_test], items[~is_test], ratings[~is_test],
                    None if ts is None else ts[~is_test], d.user_ids, d.item_ids)
    test: dict[int, list[tuple[int, float]]] = {}
    for u, i, r in zip(users[is_test].tolist(), items[is_test].tolist(), ratings[is_test].tolist()):
        test.setdefault(u, []).append((i, r))
    return SplitPair(train, test, mode, seed if mode == "random" else None)


def relevant_items(test: Mapping[int, Sequence[tuple[int, float]]], threshold: float = 0.0) -> dict[int, set[int]]:
    """Held-out items rated at least ``threshold``; users left with none are omitted."""
    out = {}
    for u, pairs in test.items():
        rel = {i for i, r in pairs if r >= threshold}
        if rel:
            out[u] = rel
    return out


def precision_at_n(
    lists: Mapping[int, RecommendationList],
    test: Mapping[int, Sequence[tuple[int, float]]],
    threshold: float = 0.0,
    n: int = 10,
) -> tuple[float | None, dict[int, float]]:
    """Mean and per-user ``|top-n & relevant| / n`` over users with a relevant test item.

    The mean is ``None`` when no user is evaluable.
    """
    per_user = {}
    for u, rel in sorted(relevant_items(test, threshold).items()):
        rl = lists.get(u)
        hits = 0 if rl is None else sum(1 for i, _ in rl.items[:n] if i in rel)
        per_user[u] = hits / n
    if not per_user:
        return None, per_user
    return float(np.mean(list(per_user.values()))), per_user


def diversity_at_n(lists: Iterable[RecommendationList] | Mapping[int, RecommendationList], n: int | None = None) -> int:
    """Number of distinct items across all lists (catalog coverage)."""
    if isinstance(lists, Mapping):
        lists = lists.values()
    return len({i for rl in lists for i, _ in rl.items[:n]})


@dataclass(frozen=True)
class SignificanceResult:
    statistic: float
    p_value: float
    significant: bool
    n_pairs: int
    alpha: float = 0.05

    def as_dict(self) -> dict:
        stat = self.statistic
        return {
            "statistic": stat if math.isfinite(stat) else ("inf" if stat > 0 else "-inf"),
            "p_value": self.p_value,
            "significant": self.significant,
            "n_pairs": self.n_pairs,
            "alpha": self.alpha,
        }


def _align(a, b) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(a, Mapping) and isinstance(b, Mapping):
        common = sorted(set(a) & set(b))
        return (np.array([a[u] for u in common], dtype=np.float64),
                np.array([b[u] for u in common], dtype=np.float64))
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("unkeyed vectors must have equal length")
    return a, b


def paired_significance(a, b, alpha: float = 0.05) -> SignificanceResult:
    """Two-sided paired t-test of ``a`` against ``b``.

    ``a`` and ``b`` are either aligned sequences or mappings keyed by user, in
    which case only users present in both are paired. Zero-variance
    differences give ``p = 1`` when all differences vanish and ``p = 0``
    otherwise.
    """
    x, y = _align(a, b)
    if len(x) < 2:
        raise InsufficientDataError(f"paired test needs at least 2 pairs, got {len(x)}")
    diff = x - y
    mean = diff.mean()
    sd = diff.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return SignificanceResult(0.0, 1.0, False, len(x), alpha)
        return SignificanceResult(math.copysign(math.inf, mean), 0.0, True, len(x), alpha)
    t = float(mean / (sd / math.sqrt(len(x))))
    p = float(2.0 * stats.t.sf(abs(t), len(x) - 1))
    return SignificanceResult(t, p, p < alpha, len(x), alpha)


@dataclass
class EvalReport:
    scheme: str
    preset: str
    lam: float | None
    k: int
    n: int
    threshold: float
    precision: float | None
    users: tuple[int, ...]
    per_user_precision: tuple[float, ...]
    diversity: int
    best: bool = False
    baseline: str | None = None
    significance: SignificanceResult | None = None
    literal_tables: bool = False

    @property
    def n_evaluated_users(self) -> int:
        return len(self.users)

    @property
    def per_user(self) -> dict[int, float]:
        return dict(zip(self.users, self.per_user_precision))

    def as_dict(self, user_ids: Sequence[str] | None = None, per_user: bool = True) -> dict:
        out = {
            "scheme": self.scheme,
            "preset": self.preset,
            "lambda": self.lam,
            "k": self.k,
            "N": self.n,
            "threshold": self.threshold,
            "literal_tables": self.literal_tables,
            "precision_at_n": self.precision,
            "diversity_at_n": self.diversity,
            "n_evaluated_users": self.n_evaluated_users,
            "best": self.best,
            "baseline": self.baseline,
            "significance": None if self.significance is None else self.significance.as_dict(),
        }
        if per_user:
            names = self.users if user_ids is None else [user_ids[u] for u in self.users]
            out["per_user_precision"] = [[u, p] for u, p in zip(names, self.per_user_precision)]
        return out


def _report_from_lists(scheme, spec, k, n, threshold, lists, split, literal_tables) -> EvalReport:
    mean, per_user = precision_at_n(lists, split.test, threshold, n)
    return EvalReport(
        scheme=scheme,
        preset=spec.name or spec.label,
        lam=spec.lam,
        k=k,
        n=n,
        threshold=threshold,
        precision=mean,
        users=tuple(per_user),
        per_user_precision=tuple(per_user.values()),
        diversity=diversity_at_n(lists, n),
        literal_tables=literal_tables,
    )


def evaluate_presets(
    split: SplitPair,
    scheme: str,
    presets: Sequence[str],
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    k: int = DEFAULT_K,
    n: int = 10,
    threshold: float = 0.0,
    literal_tables: bool = False,
    workers: int = 1,
) -> list[EvalReport]:
    """Evaluate each preset once, or once per lambda for additive presets.

    Recommendation lists are produced only for users with at least one
    relevant held-out item, under the all-unrated-items candidate rule.
    """
    axis = scheme_axis(scheme)
    if not presets:
        raise ConfigurationError("no presets given", "--preset")
    if not lambda_grid:
        raise ConfigurationError("lambda grid is empty", "--lambda")
    if n < 1:
        raise ConfigurationError(f"N must be at least 1, got {n}", "--top-n")
    users = sorted(relevant_items(split.test, threshold))
    reports = []
    for name in presets:
        name = canonical_name(name)
        if is_additive(name):
            specs = [preset(name, lam, literal_tables) for lam in lambda_grid]
        else:
            specs = [preset(name, None, literal_tables)]
        _log.info("evaluating %s (%d cell(s))", name, len(specs))
        for model in fit_models(split.train, axis, specs, k, workers):
            lists = recommend_all(model, split.train, n, users=users, workers=workers)
            reports.append(_report_from_lists(scheme, model.spec, k, n, threshold, lists, split, literal_tables))
    return reports


def mark_best(reports: Sequence[EvalReport]) -> dict[str, EvalReport]:
    """Flag the highest-precision report of each preset (ties: smaller lambda)."""
    best: dict[str, EvalReport] = {}
    for r in reports:
        r.best = False
        cur = best.get(r.preset)
        if cur is None or _better(r, cur):
            best[r.preset] = r
    for r in best.values():
        r.best = True
    return best


def _better(a: EvalReport, b: EvalReport) -> bool:
    pa = -math.inf if a.precision is None else a.precision
    pb = -math.inf if b.precision is None else b.precision
    if pa != pb:
        return pa > pb
    return (a.lam or 0.0) < (b.lam or 0.0)


def attach_significance(reports: Sequence[EvalReport], baseline: str, alpha: float = 0.05) -> None:
    """Paired-test every non-baseline report against the baseline's best report."""
    baseline = canonical_name(baseline)
    best = mark_best(reports)
    if baseline not in best:
        raise ConfigurationError(f"baseline {baseline} was not evaluated", "--baseline")
    ref = best[baseline]
    for r in reports:
        if r.preset == baseline:
            continue
        r.baseline = baseline
        try:
            r.significance = paired_significance(r.per_user, ref.per_user, alpha)
        except InsufficientDataError:
            r.significance = None


def lambda_sweep(
    split: SplitPair,
    scheme: str,
    presets: Sequence[str],
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    k: int = DEFAULT_K,
    n: int = 10,
    threshold: float = 0.0,
    literal_tables: bool = False,
    baseline: str | None = None,
    alpha: float = 0.05,
    workers: int = 1,
) -> list[EvalReport]:
    """Evaluate the (preset, lambda) grid, mark the best cell per preset, optionally test against a baseline."""
    names = [canonical_name(p) for p in presets]
    if baseline is not None and canonical_name(baseline) not in names:
        names = [canonical_name(baseline)] + names
    reports = evaluate_presets(split, scheme, names, lambda_grid, k, n, threshold, literal_tables, workers)
    mark_best(reports)
    if baseline is not None:
        attach_significance(reports, baseline, alpha)
    return reports


# -- output ------------------------------------------------------------------------


def format_report_table(reports: Sequence[EvalReport], title: str | None = None) -> str:
    n = reports[0].n if reports else 10
    header = ("scheme", "preset", "lambda", f"P@{n}", f"D@{n}", "users", "best", "sig")
    rows = []
    for r in reports:
        if r.significance is None:
            sig = "-"
        else:
            sig = f"*{r.significance.p_value:.3g}" if r.significance.significant else f"{r.significance.p_value:.3g}"
        rows.append((
            r.scheme,
            r.preset,
            "" if r.lam is None else f"{r.lam:g}",
            "n/a" if r.precision is None else f"{r.precision:.4f}",
            str(r.diversity),
            str(r.n_evaluated_users),
            "best" if r.best else "",
            sig,
        ))
    widths = [max(len(h), *(len(row[c]) for row in rows)) if rows else len(h) for c, h in enumerate(header)]
    left = {0, 1, 6}
    fmt = lambda cells: "  ".join(c.ljust(w) if k in left else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths))).rstrip()
    lines = [] if title is None else [title]
    lines.append(fmt(header))
    lines.append("  ".join("-" * w for w in widths))
    lines += [fmt(row) for row in rows]
    return "\n".join(lines) + "\n"
