"""Per-patient time-series ingestion.

Reads pipe-separated hourly records (one file per patient, "NaN" marking a
missing measurement, last column the binary label), builds a sorted dataset
catalog, and splits it into train/test partitions at patient granularity so
no patient contributes to both sides.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    BadDomainError,
    BadLabelError,
    EmptyInputError,
    HeaderMismatchError,
    MalformedRowError,
    SepsisError,
)
from .rng import make_rng

LABEL_COLUMN = "SepsisLabel"
MISSING_TOKEN = "NaN"

# Feature columns of the PhysioNet 2019 challenge files: eight vital signs,
# twenty-six laboratory values, six demographics. The label column is not
# part of the schema.
PHYSIONET2019_FEATURES = (
    "HR", "O2Sat", "Temp", "SBP", "MAP", "DBP", "Resp", "EtCO2",
    "BaseExcess", "HCO3", "FiO2", "pH", "PaCO2", "SaO2", "AST", "BUN",
    "Alkalinephos", "Calcium", "Chloride", "Creatinine", "Bilirubin_direct",
    "Glucose", "Lactate", "Magnesium", "Phosphate", "Potassium",
    "Bilirubin_total", "TroponinI", "Hct", "Hgb", "PTT", "WBC",
    "Fibrinogen", "Platelets",
    "Age", "Gender", "Unit1", "Unit2", "HospAdmTime", "ICULOS",
)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature names; the label column is carried separately."""

    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise BadDomainError("schema needs at least one feature")
        if len(set(names)) != len(names) or any(not n for n in names):
            raise BadDomainError("feature names must be unique and non-empty")

    @property
    def d(self):
        return len(self.names)


def default_schema():
    return FeatureSchema(PHYSIONET2019_FEATURES)


def load_schema(path):
    """Read a schema file: one feature name per line.

    Blank lines and lines starting with # are skipped. Name validity is
    enforced by FeatureSchema.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    names = [ln.strip() for ln in lines if ln.strip() and not ln.strip().startswith("#")]
    return FeatureSchema(names=names)


def schema_hash(schema):
    """16-hex-char digest of the ordered feature names.

    Written into stats files and model containers so artifacts fitted
    under one schema are rejected under another.
    """
    joined = "|".join(schema.names).encode("utf-8")
    return hashlib.sha256(joined).digest()[:8].hex()


@dataclass
class HourlyRow:
    """One hour of measurements; None marks a missing cell."""

    hour: int
    values: list
    label: int


@dataclass
class PatientRecord:
    """Ordered hourly rows for one patient; hours strictly increase."""

    patient_id: str
    rows: list


def parse_psv(text, schema, patient_id=""):
    """Parse one pipe-separated patient file.

    Args:
        text: the file content as a string, or a file-like with read().
        schema: FeatureSchema the header must match (plus the label column).
        patient_id: id stamped on the returned record.

    Returns:
        PatientRecord with one HourlyRow per data line, hour = line index
        starting at 0. A cell is missing exactly when its token is "NaN".

    Raises:
        HeaderMismatchError: column names or order differ.
        MalformedRowError: wrong column count or unparsable numeric.
        BadLabelError: label cell not 0 or 1.
    """
    if hasattr(text, "read"):
        text = text.read()
    lines = text.splitlines()
    if not lines:
        raise HeaderMismatchError("empty input: missing header line")

    expected = list(schema.names) + [LABEL_COLUMN]
    header = lines[0].split("|")
    if header != expected:
        raise HeaderMismatchError(
            "header %r does not match schema columns %r" % (header, expected)
        )

    rows = []
    width = len(expected)
    for hour, line in enumerate(lines[1:]):
        cells = line.split("|")
        if len(cells) != width:
            raise MalformedRowError(
                "line %d: expected %d columns, got %d" % (hour + 2, width, len(cells))
            )
        values = []
        for name, cell in zip(schema.names, cells):
            if cell == MISSING_TOKEN:
                values.append(None)
                continue
            try:
                values.append(float(cell))
            except ValueError:
                raise MalformedRowError(
                    "line %d, column %s: unparsable value %r" % (hour + 2, name, cell)
                ) from None
        try:
            raw_label = float(cells[-1])
        except ValueError:
            raise MalformedRowError(
                "line %d: unparsable label %r" % (hour + 2, cells[-1])
            ) from None
        if raw_label not in (0.0, 1.0):
            raise BadLabelError("line %d: label must be 0 or 1, got %r" % (hour + 2, cells[-1]))
        rows.append(HourlyRow(hour=hour, values=values, label=int(raw_label)))
    return PatientRecord(patient_id=patient_id, rows=rows)


def _format_cell(value):
    return MISSING_TOKEN if value is None else repr(float(value))


def record_to_psv(record, schema):
    """Serialize a record back to PSV text; inverse of parse_psv."""
    lines = ["|".join(list(schema.names) + [LABEL_COLUMN])]
    for row in record.rows:
        if len(row.values) != schema.d:
            raise MalformedRowError(
                "row at hour %d has %d values for a %d-feature schema"
                % (row.hour, len(row.values), schema.d)
            )
        cells = [_format_cell(v) for v in row.values] + [str(int(row.label))]
        lines.append("|".join(cells))
    return "\n".join(lines) + "\n"


def load_dataset(directory, schema):
    """Parse every .psv file in a directory, sorted by patient id.

    The patient id is the file stem. Parse failures are re-raised with the
    file name prepended; unreadable files raise OSError.
    """
    directory = Path(directory)
    records = []
    for path in sorted(directory.glob("*.psv"), key=lambda p: p.stem):
        try:
            records.append(parse_psv(path.read_text(encoding="utf-8"), schema, patient_id=path.stem))
        except SepsisError as exc:
            raise type(exc)("%s: %s" % (path.name, exc)) from exc
    return records


def split_patients(records, test_fraction, seed):
    """Split records into disjoint train/test lists at patient level.

    The test side gets round(test_fraction * n) patients, drawn by a
    seeded permutation; both lists come back sorted by patient id.

    Raises:
        EmptyInputError: no records.
        BadDomainError: test_fraction outside (0, 1).
    """
    records = list(records)
    if not records:
        raise EmptyInputError("cannot split an empty record list")
    test_fraction = float(test_fraction)
    if not 0.0 < test_fraction < 1.0:
        raise BadDomainError("test_fraction must be in (0,1), got %r" % test_fraction)

    ordered = sorted(records, key=lambda r: r.patient_id)
    n_test = int(round(test_fraction * len(ordered)))
    perm = make_rng(seed).permutation(len(ordered))
    test_idx = set(perm[:n_test].tolist())
    train = [r for i, r in enumerate(ordered) if i not in test_idx]
    test = [r for i, r in enumerate(ordered) if i in test_idx]
    return train, test
