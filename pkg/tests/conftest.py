import numpy as np
import pytest

from sepsis_e2e.ingest import FeatureSchema, HourlyRow, PatientRecord
from sepsis_e2e.pipeline import PipelineConfig, Sample
from sepsis_e2e.rng import derive_seed, make_rng


def make_row(d, hour, obs, label=0):
    """Row with observations given as {feature_index: value}."""
    values = [obs.get(j) for j in range(d)]
    return HourlyRow(hour=hour, values=values, label=label)


def worked_example_rows():
    """The 6-row, 5-feature record whose emissions are known by hand."""
    return [
        make_row(5, 1, {0: 1.0, 1: 2.0}, 0),
        make_row(5, 2, {2: 3.0}, 0),
        make_row(5, 3, {3: 4.0, 1: 2.5}, 0),
        make_row(5, 4, {4: 5.0}, 0),
        make_row(5, 5, {0: 1.5, 1: 2.6, 2: 3.1}, 1),
        make_row(5, 6, {0: 1.6}, 1),
    ]


def random_record(rng, patient_id, max_d=6, max_rows=12):
    """Record with random dimensionality, gaps, and missingness."""
    d = int(rng.integers(1, max_d + 1))
    n_rows = int(rng.integers(0, max_rows + 1))
    rows = []
    hour = 0
    for _ in range(n_rows):
        hour += int(rng.integers(1, 3))
        values = [
            float(np.round(rng.normal(), 3)) if rng.random() < 0.45 else None
            for _ in range(d)
        ]
        rows.append(HourlyRow(hour=hour, values=values, label=int(rng.integers(0, 2))))
    return d, PatientRecord(patient_id=patient_id, rows=rows)


def two_blob_samples(seed, n=1000, d=40, offset=0.5):
    """Balanced pair of Gaussian blobs at -offset and +offset per coordinate."""
    rng = make_rng(derive_seed(seed, "blobs"))
    samples = []
    for i in range(n):
        label = i % 2
        center = offset if label == 1 else -offset
        vec = center + rng.standard_normal(d)
        samples.append(
            Sample(
                patient_id="blob-%04d" % i,
                hour=i,
                label=label,
                values=[float(v) for v in vec],
                mask=[True] * d,
            )
        )
    return samples


@pytest.fixture
def schema5():
    return FeatureSchema(names=["f1", "f2", "f3", "f4", "f5"])


@pytest.fixture
def cfg5(schema5):
    return PipelineConfig(schema=schema5)


@pytest.fixture
def worked_rows():
    return worked_example_rows()
