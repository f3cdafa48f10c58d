"""Record-to-sample conversion.

Turns raw per-patient hourly records into fixed-width training and
inference vectors: record-global forward fill, completeness-gated
segmentation (a batch variant for training down-sampling and an
incremental variant for streaming), zero-fill of never-observed features,
and z-score normalization with statistics fitted on training samples only.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadDomainError,
    DimensionMismatchError,
    EmptyInputError,
    HeaderMismatchError,
    MalformedRowError,
    OutOfOrderRowError,
)
from .ingest import schema_hash

STD_FLOOR = 1e-8


@dataclass
class PipelineConfig:
    """Segmentation and vectorization settings.

    completeness_threshold: fraction of features that must be observed
        (raw, within the current window) before a sample is emitted.
    carry_fill_across_windows: when True (default), forward-filled values
        persist across emissions; when False, the fill state resets with
        the window so each sample only sees observations from its own
        window.
    append_mask_channels: when True, sample_matrix appends the D mask bits
        as extra input columns (the model then consumes 2D-wide vectors).
    """

    schema: object
    completeness_threshold: float = 0.8
    carry_fill_across_windows: bool = True
    append_mask_channels: bool = False

    def __post_init__(self):
        t = float(self.completeness_threshold)
        if not 0.0 < t <= 1.0:
            raise BadDomainError(
                "completeness_threshold must be in (0,1], got %r" % t
            )
        self.completeness_threshold = t


@dataclass
class SegmenterState:
    """Per-patient accumulation state for the streaming window."""

    patient_id: str
    last_known: list
    observed_in_window: set = field(default_factory=set)
    window_start_hour: int = 0
    last_hour: int = None


def new_state(patient_id, d):
    return SegmenterState(patient_id=patient_id, last_known=[None] * d)


@dataclass
class Sample:
    """One emitted feature vector; the unit of training and inference."""

    patient_id: str
    hour: int
    label: int
    values: list
    mask: list


@dataclass
class NormStats:
    """Per-feature mean/std/observation-count fitted on training samples."""

    mean: list
    std: list
    count: list


def forward_fill_step(state, row):
    """Fold one row into the fill state.

    Observed cells overwrite last_known and join the window's observed
    set; missing cells leave last_known untouched.
    """
    if len(row.values) != len(state.last_known):
        raise DimensionMismatchError(
            "row has %d values, state tracks %d features"
            % (len(row.values), len(state.last_known))
        )
    for i, v in enumerate(row.values):
        if v is not None:
            state.last_known[i] = v
            state.observed_in_window.add(i)
    state.last_hour = row.hour
    return state


def completeness(state, d):
    """Fraction of the D features observed raw in the current window."""
    return len(state.observed_in_window) / d


def _emit(patient_id, hour, label, last_known):
    values = [0.0 if v is None else float(v) for v in last_known]
    mask = [v is not None for v in last_known]
    return Sample(patient_id=patient_id, hour=hour, label=label, values=values, mask=mask)


def stream_window_step(state, row, cfg):
    """Consume one row; return a Sample when the window fills, else None.

    Emission happens the first time completeness reaches the threshold
    since the last emission. The observed set then resets; last_known
    persists unless carry_fill_across_windows is off.
    """
    if state.last_hour is not None and row.hour <= state.last_hour:
        raise OutOfOrderRowError(
            "row hour %d arrived at or before hour %d" % (row.hour, state.last_hour)
        )
    forward_fill_step(state, row)
    d = cfg.schema.d
    if completeness(state, d) >= cfg.completeness_threshold:
        sample = _emit(state.patient_id, row.hour, row.label, state.last_known)
        state.observed_in_window = set()
        state.window_start_hour = row.hour + 1
        if not cfg.carry_fill_across_windows:
            state.last_known = [None] * d
        return sample
    return None


def downsample_training(record, cfg):
    """Segment a record into training samples by the completeness rule.

    Scans rows in order with record-global forward fill; whenever the
    fraction of features observed raw since the last emission reaches the
    threshold, the current filled vector (never-observed features
    zero-filled), the current row's label, and the current hour become one
    Sample and the observed set clears. Trailing rows that never reach the
    threshold yield nothing.
    """
    d = cfg.schema.d
    last_known = [None] * d
    seen = set()
    prev_hour = None
    out = []
    for row in record.rows:
        if len(row.values) != d:
            raise DimensionMismatchError(
                "row at hour %d has %d values for a %d-feature schema"
                % (row.hour, len(row.values), d)
            )
        if prev_hour is not None and row.hour <= prev_hour:
            raise OutOfOrderRowError(
                "row hour %d arrived at or before hour %d" % (row.hour, prev_hour)
            )
        prev_hour = row.hour
        for i, v in enumerate(row.values):
            if v is not None:
                last_known[i] = v
                seen.add(i)
        if len(seen) / d >= cfg.completeness_threshold:
            out.append(_emit(record.patient_id, row.hour, row.label, last_known))
            seen = set()
            if not cfg.carry_fill_across_windows:
                last_known = [None] * d
    return out


def fit_norm_stats(samples):
    """Fit per-feature mean and population std over observed entries only.

    Features never observed get mean 0, std 1, count 0; zero-variance
    features keep their mean and get std 1, so their observed entries
    normalize to exactly 0. Nonzero stds are floored at 1e-8.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInputError("cannot fit normalization stats on no samples")
    d = len(samples[0].values)
    for s in samples:
        if len(s.values) != d or len(s.mask) != d:
            raise DimensionMismatchError("samples disagree on feature count")

    values = np.array([s.values for s in samples], dtype=np.float64)
    mask = np.array([s.mask for s in samples], dtype=bool)
    count = mask.sum(axis=0)
    safe = np.maximum(count, 1)
    mean = np.where(count > 0, (values * mask).sum(axis=0) / safe, 0.0)
    var = (mask * (values - mean) ** 2).sum(axis=0) / safe
    std = np.where(
        count == 0, 1.0, np.where(var == 0.0, 1.0, np.maximum(np.sqrt(var), STD_FLOOR))
    )
    return NormStats(mean=mean.tolist(), std=std.tolist(), count=count.tolist())


def normalize(sample, stats):
    """Z-score observed entries; pin never-observed entries to exactly 0.

    Apply exactly once: the operation is not idempotent on observed
    entries. Returns a new Sample; the mask is unchanged.
    """
    d = len(sample.values)
    if len(stats.mean) != d or len(stats.std) != d:
        raise DimensionMismatchError(
            "stats cover %d features, sample has %d" % (len(stats.mean), d)
        )
    values = [
        (v - m) / s if keep else 0.0
        for v, m, s, keep in zip(sample.values, stats.mean, stats.std, sample.mask)
    ]
    return Sample(
        patient_id=sample.patient_id,
        hour=sample.hour,
        label=sample.label,
        values=values,
        mask=list(sample.mask),
    )


def sample_matrix(samples, append_mask_channels=False):
    """Stack samples into (X, y) arrays for the network.

    X is (N, D) float64, or (N, 2D) with the mask bits appended as 0/1
    columns when append_mask_channels is on; y is (N,) int64 labels.
    """
    samples = list(samples)
    if not samples:
        raise EmptyInputError("no samples to stack")
    x = np.array([s.values for s in samples], dtype=np.float64)
    if append_mask_channels:
        m = np.array([s.mask for s in samples], dtype=np.float64)
        x = np.hstack([x, m])
    y = np.array([s.label for s in samples], dtype=np.int64)
    return np.ascontiguousarray(x), y


# --- plain-text artifacts ---


def save_norm_stats(stats, schema, threshold, path):
    """Write stats as text: a header line, then "name mean std count" rows."""
    lines = ["schema=%s threshold=%s" % (schema_hash(schema), repr(float(threshold)))]
    for name, m, s, c in zip(schema.names, stats.mean, stats.std, stats.count):
        lines.append("%s %s %s %d" % (name, repr(float(m)), repr(float(s)), int(c)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_norm_stats(path, schema):
    """Read a stats file written by save_norm_stats.

    Returns (NormStats, threshold). The schema hash and the feature names
    must match the given schema.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise MalformedRowError("%s: empty stats file" % path)
    header = dict(
        part.split("=", 1) for part in lines[0].split() if "=" in part
    )
    if header.get("schema") != schema_hash(schema):
        raise HeaderMismatchError(
            "%s: stats were fitted under a different schema" % path
        )
    try:
        threshold = float(header["threshold"])
    except (KeyError, ValueError):
        raise MalformedRowError("%s: bad stats header %r" % (path, lines[0])) from None

    if len(lines) - 1 != schema.d:
        raise MalformedRowError(
            "%s: expected %d feature lines, got %d" % (path, schema.d, len(lines) - 1)
        )
    mean, std, count = [], [], []
    for name, line in zip(schema.names, lines[1:]):
        parts = line.split()
        if len(parts) != 4 or parts[0] != name:
            raise MalformedRowError("%s: bad stats line %r" % (path, line))
        try:
            mean.append(float(parts[1]))
            std.append(float(parts[2]))
            count.append(int(parts[3]))
        except ValueError:
            raise MalformedRowError("%s: bad stats line %r" % (path, line)) from None
    return NormStats(mean=mean, std=std, count=count), threshold


def _csv_header(schema):
    names = list(schema.names)
    return ["patient_id", "hour", "label"] + names + ["mask_" + n for n in names]


def save_samples(samples, schema, path):
    """Write samples as CSV: patient_id, hour, label, D values, D mask bits."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_csv_header(schema))
        for s in samples:
            if len(s.values) != schema.d:
                raise DimensionMismatchError(
                    "sample has %d values for a %d-feature schema"
                    % (len(s.values), schema.d)
                )
            writer.writerow(
                [s.patient_id, s.hour, s.label]
                + [repr(float(v)) for v in s.values]
                + [int(b) for b in s.mask]
            )


def load_samples(path, schema):
    """Read a CSV written by save_samples."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRowError("%s: empty sample file" % path) from None
        if header != _csv_header(schema):
            raise HeaderMismatchError("%s: sample columns do not match schema" % path)
        d = schema.d
        samples = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 3 + 2 * d:
                raise MalformedRowError(
                    "%s line %d: expected %d fields, got %d"
                    % (path, lineno, 3 + 2 * d, len(rec))
                )
            try:
                samples.append(
                    Sample(
                        patient_id=rec[0],
                        hour=int(rec[1]),
                        label=int(rec[2]),
                        values=[float(v) for v in rec[3 : 3 + d]],
                        mask=[bool(int(b)) for b in rec[3 + d :]],
                    )
                )
            except ValueError:
                raise MalformedRowError(
                    "%s line %d: unparsable field" % (path, lineno)
                ) from None
    return samples
