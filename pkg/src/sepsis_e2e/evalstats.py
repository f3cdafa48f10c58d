"""Classification metrics and nonparametric comparison statistics.

Confusion-matrix rates, win/loss tabulation against baselines, the
tie-corrected Friedman rank test with its chi-square tail probability, and
the exact Wilcoxon signed-rank test. Everything here is a pure function on
plain values; the heavy lifting is integer combinatorics, so there are no
array dependencies beyond the standard library.
"""

import csv
import math
from dataclasses import dataclass

from .errors import (
    BadDomainError,
    BadLabelError,
    EmptyInputError,
    HeaderMismatchError,
    IncompleteGridError,
    LengthMismatchError,
    MalformedRowError,
    UnknownModelError,
)

METRIC_NAMES = ("ppv", "npv", "accuracy", "sensitivity", "specificity")
METRIC_LABELS = {
    "ppv": "PPV",
    "npv": "NPV",
    "accuracy": "Accuracy",
    "sensitivity": "Sensitivity",
    "specificity": "Specificity",
}


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise BadDomainError("%s must be a non-negative integer, got %r" % (name, v))
            setattr(self, name, int(v))

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn


def confusion(predictions, labels):
    """Count a 2x2 confusion matrix from paired 0/1 vectors."""
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise LengthMismatchError(
            "%d predictions vs %d labels" % (len(predictions), len(labels))
        )
    if not predictions:
        raise EmptyInputError("cannot build a confusion matrix from no pairs")
    tp = fp = fn = tn = 0
    for p, y in zip(predictions, labels):
        if p not in (0, 1) or y not in (0, 1):
            raise BadLabelError("predictions and labels must be 0 or 1")
        if p == 1:
            if y == 1:
                tp += 1
            else:
                fp += 1
        else:
            if y == 1:
                fn += 1
            else:
                tn += 1
    return ConfusionMatrix(tp=tp, fp=fp, fn=fn, tn=tn)


def _rate(num, den):
    return float("nan") if den == 0 else 100.0 * num / den


def metrics(cm):
    """Rates in percent at full precision; 0/0 comes back as NaN, never 0."""
    return {
        "ppv": _rate(cm.tp, cm.tp + cm.fp),
        "npv": _rate(cm.tn, cm.tn + cm.fn),
        "accuracy": _rate(cm.tp + cm.tn, cm.total),
        "sensitivity": _rate(cm.tp, cm.tp + cm.fn),
        "specificity": _rate(cm.tn, cm.tn + cm.fp),
    }


@dataclass
class MetricTable:
    """datasets x models grid of percent values for each metric."""

    datasets: list
    models: list
    values: dict

    def __post_init__(self):
        n, k = len(self.datasets), len(self.models)
        for metric in METRIC_NAMES:
            grid = self.values.get(metric)
            if grid is None or len(grid) != n or any(len(row) != k for row in grid):
                raise IncompleteGridError("metric %r grid is not %dx%d" % (metric, n, k))
            for row in grid:
                if any(v != v for v in row):
                    raise IncompleteGridError("metric %r grid has missing cells" % metric)


def load_metric_table(path):
    """Read the baseline CSV: dataset,model,ppv,npv,accuracy,sensitivity,specificity.

    Dataset and model orders follow first appearance; the grid must be
    complete with no duplicate (dataset, model) rows.
    """
    expected = ["dataset", "model"] + list(METRIC_NAMES)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRowError("%s: empty metric table" % path) from None
        if [h.strip().lower() for h in header] != expected:
            raise HeaderMismatchError(
                "%s: expected columns %s" % (path, ",".join(expected))
            )
        datasets, models, cells = [], [], {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(expected):
                raise MalformedRowError(
                    "%s line %d: expected %d fields, got %d"
                    % (path, lineno, len(expected), len(rec))
                )
            ds, model = rec[0].strip(), rec[1].strip()
            if (ds, model) in cells:
                raise MalformedRowError(
                    "%s line %d: duplicate cell (%s, %s)" % (path, lineno, ds, model)
                )
            try:
                cells[(ds, model)] = [float(v) for v in rec[2:]]
            except ValueError:
                raise MalformedRowError(
                    "%s line %d: unparsable metric value" % (path, lineno)
                ) from None
            if ds not in datasets:
                datasets.append(ds)
            if model not in models:
                models.append(model)
    missing = [
        (ds, m) for ds in datasets for m in models if (ds, m) not in cells
    ]
    if missing:
        raise IncompleteGridError(
            "%s: missing cells %s" % (path, ", ".join("%s/%s" % c for c in missing))
        )
    values = {
        metric: [[cells[(ds, m)][i] for m in models] for ds in datasets]
        for i, metric in enumerate(METRIC_NAMES)
    }
    return MetricTable(datasets=datasets, models=models, values=values)


def win_loss(table, target_model, metric, tie_as_win=True):
    """Tally (dataset, baseline) comparisons for one metric.

    A tie counts as a win by default; totals always sum to
    n_datasets * (n_models - 1).
    """
    if target_model not in table.models:
        raise UnknownModelError("model %r not in table" % target_model)
    if metric not in METRIC_NAMES:
        raise BadDomainError("unknown metric %r" % metric)
    t = table.models.index(target_model)
    wins = losses = 0
    for row in table.values[metric]:
        for j, other in enumerate(table.models):
            if j == t:
                continue
            target_val, other_val = row[t], row[j]
            if target_val > other_val or (tie_as_win and target_val == other_val):
                wins += 1
            else:
                losses += 1
    return wins, losses


def _average_ranks(row):
    """Ascending 1-based ranks with ties sharing their average rank."""
    k = len(row)
    order = sorted(range(k), key=lambda j: row[j])
    ranks = [0.0] * k
    i = 0
    while i < k:
        j = i
        while j + 1 < k and row[order[j + 1]] == row[order[i]]:
            j += 1
        avg = (i + j + 2) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def _tie_term(row):
    """Sum of t^3 - t over groups of tied values in one row."""
    groups = {}
    for v in row:
        groups[v] = groups.get(v, 0) + 1
    return sum(t ** 3 - t for t in groups.values() if t > 1)


def _check_grid(values):
    rows = [list(r) for r in values]
    if rows and any(len(r) != len(rows[0]) for r in rows):
        raise IncompleteGridError("ragged metric grid")
    if len(rows) < 2 or any(len(r) < 2 for r in rows):
        raise BadDomainError("need at least 2 datasets and 2 models")
    k = len(rows[0])
    for r in rows:
        if any(v != v for v in r):
            raise IncompleteGridError("grid has missing cells")
    return rows, len(rows), k


@dataclass
class FriedmanResult:
    statistic: float
    df: int
    p_value: float
    rank_sums: list
    tie_corrected: bool


def friedman(values):
    """Tie-corrected Friedman rank test over an n-datasets x k-models grid.

    Models are ranked ascending within each dataset (best value gets rank
    k), ties sharing average ranks. The raw statistic
    12/(n k (k+1)) * sum(R_j^2) - 3 n (k+1) is divided by the correction
    1 - sum(t^3 - t) / (n k (k^2 - 1)); a correction of 0 (everything
    tied) yields statistic 0 and p 1.
    """
    rows, n, k = _check_grid(values)
    rank_sums = [0.0] * k
    tie_total = 0
    for row in rows:
        for j, r in enumerate(_average_ranks(row)):
            rank_sums[j] += r
        tie_total += _tie_term(row)

    raw = 12.0 / (n * k * (k + 1)) * sum(r * r for r in rank_sums) - 3.0 * n * (k + 1)
    correction = 1.0 - tie_total / (n * k * (k * k - 1))
    if correction == 0.0:
        return FriedmanResult(0.0, k - 1, 1.0, rank_sums, True)
    statistic = max(raw / correction, 0.0)
    return FriedmanResult(
        statistic=statistic,
        df=k - 1,
        p_value=chi2_sf(statistic, k - 1),
        rank_sums=rank_sums,
        tie_corrected=tie_total > 0,
    )


def mean_ranks(values):
    """Per-model mean rank over datasets, same ranking rule as friedman."""
    rows, n, _ = _check_grid(values)
    sums = None
    for row in rows:
        r = _average_ranks(row)
        sums = r if sums is None else [a + b for a, b in zip(sums, r)]
    return [s / n for s in sums]


def chi2_sf(x, df):
    """Upper-tail chi-square probability Q(df/2, x/2).

    Closed forms through the regularized upper incomplete gamma function:
    even df uses the finite Poisson sum (df=2 is exactly e^(-x/2)), odd df
    starts from Q(1/2, y) = erfc(sqrt(y)) and climbs the recurrence
    Q(a+1, y) = Q(a, y) + y^a e^(-y) / gamma(a+1).
    """
    x = float(x)
    if int(df) != df or df < 1:
        raise BadDomainError("df must be a positive integer, got %r" % (df,))
    df = int(df)
    if not x >= 0.0:
        raise BadDomainError("x must be non-negative, got %r" % x)
    if x == 0.0:
        return 1.0
    y = x / 2.0
    if df % 2 == 0:
        term = 1.0
        total = 1.0
        for j in range(1, df // 2):
            term *= y / j
            total += term
        return min(1.0, math.exp(-y) * total)
    q = math.erfc(math.sqrt(y))
    a = 0.5
    t = math.sqrt(y) * math.exp(-y) / math.gamma(1.5)
    while 2 * a < df:
        q += t
        t *= y / (a + 1.0)
        a += 1.0
    return min(1.0, q)


@dataclass
class WilcoxonResult:
    w_statistic: float
    n_effective: int
    p_two_sided: float


def wilcoxon_signed_rank(x, y):
    """Two-sided Wilcoxon signed-rank test on paired vectors.

    Zero differences are discarded; |d| gets average ranks; W is
    min(W+, W-). For n_effective <= 25 the p-value is exact: the count of
    sign assignments whose min rank sum is <= W, over 2^n. Larger n uses
    the normal approximation with tie-adjusted variance and a continuity
    correction. No surviving pairs gives p = 1.
    """
    x = list(x)
    y = list(y)
    if len(x) != len(y) or not x:
        raise LengthMismatchError(
            "need equal-length non-empty vectors, got %d and %d" % (len(x), len(y))
        )
    diffs = [float(a) - float(b) for a, b in zip(x, y) if float(a) != float(b)]
    n = len(diffs)
    if n == 0:
        return WilcoxonResult(w_statistic=0.0, n_effective=0, p_two_sided=1.0)

    absd = [abs(d) for d in diffs]
    ranks = _average_ranks(absd)
    w_plus = sum(r for r, d in zip(ranks, diffs) if d > 0)
    w_minus = sum(r for r, d in zip(ranks, diffs) if d < 0)
    w = min(w_plus, w_minus)

    if n <= 25:
        # Doubled ranks are integers even with .5 average ranks, so the
        # subset-sum table and the final count are exact.
        doubled = [int(round(2 * r)) for r in ranks]
        total = sum(doubled)
        w2 = int(round(2 * w))
        dp = [0] * (total + 1)
        dp[0] = 1
        for r2 in doubled:
            for s in range(total - r2, -1, -1):
                if dp[s]:
                    dp[s + r2] += dp[s]
        count = sum(c for s, c in enumerate(dp) if min(s, total - s) <= w2)
        p = count / 2 ** n
    else:
        mu = n * (n + 1) / 4.0
        tie_sum = _tie_term(absd)
        sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_sum / 48.0
        if sigma2 <= 0.0:
            p = 1.0
        else:
            z = (w - mu + 0.5) / math.sqrt(sigma2)
            p = min(1.0, math.erfc(-z / math.sqrt(2.0)))
    return WilcoxonResult(w_statistic=float(w), n_effective=n, p_two_sided=p)


def stats_report(table, target_model, tie_as_win=True):
    """Render the comparison report for one target model against a table.

    One line per metric with win/loss, the tie-corrected Friedman p-value
    and statistic, then mean ranks, then one exact Wilcoxon line per
    baseline pairing the target across every (dataset, metric) cell.
    """
    if target_model not in table.models:
        raise UnknownModelError("model %r not in table" % target_model)
    n, k = len(table.datasets), len(table.models)
    lines = [
        "model comparison: %s vs %d baselines over %d datasets" % (target_model, k - 1, n),
        "",
        "%-12s %9s %9s %8s" % ("metric", "win/loss", "p-value", "F-rank"),
    ]
    for metric in METRIC_NAMES:
        wins, losses = win_loss(table, target_model, metric, tie_as_win=tie_as_win)
        fr = friedman(table.values[metric])
        lines.append(
            "%-12s %9s %9.4f %8.3f"
            % (METRIC_LABELS[metric], "%d/%d" % (wins, losses), fr.p_value, fr.statistic)
        )
    lines.append("")
    lines.append("mean ranks (higher is better):")
    for metric in METRIC_NAMES:
        ranks = mean_ranks(table.values[metric])
        parts = ", ".join("%s %.3f" % (m, r) for m, r in zip(table.models, ranks))
        lines.append("  %-12s %s" % (METRIC_LABELS[metric], parts))
    lines.append("")
    lines.append(
        "wilcoxon signed-rank, %s vs each baseline over %d (dataset, metric) pairs:"
        % (target_model, n * len(METRIC_NAMES))
    )
    t = table.models.index(target_model)
    for j, other in enumerate(table.models):
        if j == t:
            continue
        xs, ys = [], []
        for metric in METRIC_NAMES:
            for row in table.values[metric]:
                xs.append(row[t])
                ys.append(row[j])
        res = wilcoxon_signed_rank(xs, ys)
        lines.append(
            "  vs %-14s W=%g n=%d p=%.6g" % (other, res.w_statistic, res.n_effective, res.p_two_sided)
        )
    return "\n".join(lines) + "\n"
