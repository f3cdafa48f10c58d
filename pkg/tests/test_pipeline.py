import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_row, random_record, worked_example_rows
from sepsis_e2e.errors import (
    BadDomainError,
    DimensionMismatchError,
    EmptyInputError,
    HeaderMismatchError,
    MalformedRowError,
    OutOfOrderRowError,
)
from sepsis_e2e.ingest import FeatureSchema, PatientRecord
from sepsis_e2e.pipeline import (
    NormStats,
    PipelineConfig,
    Sample,
    downsample_training,
    fit_norm_stats,
    load_norm_stats,
    load_samples,
    new_state,
    normalize,
    sample_matrix,
    save_norm_stats,
    save_samples,
    stream_window_step,
)
from sepsis_e2e.rng import derive_seed, make_rng


def run_stream(record, d, cfg):
    state = new_state(record.patient_id, d)
    out = []
    for row in record.rows:
        sample = stream_window_step(state, row, cfg)
        if sample is not None:
            out.append(sample)
    return out


def as_tuples(samples):
    return [(s.hour, s.values, s.label, s.mask) for s in samples]


class TestSegmentation:
    def test_worked_example_batch_route(self, cfg5):
        rec = PatientRecord(patient_id="demo", rows=worked_example_rows())
        out = downsample_training(rec, cfg5)
        assert len(out) == 2
        assert out[0].hour == 3
        assert out[0].values == [1.0, 2.5, 3.0, 4.0, 0.0]
        assert out[0].label == 0
        assert out[0].mask == [True, True, True, True, False]
        assert out[1].hour == 5
        assert out[1].values == [1.5, 2.6, 3.1, 4.0, 5.0]
        assert out[1].label == 1
        assert out[1].mask == [True] * 5

    def test_worked_example_stream_route_matches(self, cfg5):
        rec = PatientRecord(patient_id="demo", rows=worked_example_rows())
        assert as_tuples(run_stream(rec, 5, cfg5)) == as_tuples(
            downsample_training(rec, cfg5)
        )

    def test_fully_observed_rows_emit_every_row(self, cfg5):
        rows = [
            make_row(5, h, {j: float(h * 10 + j) for j in range(5)}, h % 2)
            for h in range(4)
        ]
        rec = PatientRecord(patient_id="full", rows=rows)
        out = downsample_training(rec, cfg5)
        assert [s.hour for s in out] == [0, 1, 2, 3]
        assert out[2].values == [20.0, 21.0, 22.0, 23.0, 24.0]
        assert [s.label for s in out] == [0, 1, 0, 1]

    def test_never_reaching_threshold_emits_nothing(self, cfg5):
        rows = [make_row(5, h, {0: 1.0}, 0) for h in range(6)]
        rec = PatientRecord(patient_id="sparse", rows=rows)
        assert downsample_training(rec, cfg5) == []
        assert run_stream(rec, 5, cfg5) == []

    def test_empty_record_emits_nothing(self, cfg5):
        assert downsample_training(PatientRecord(patient_id="e", rows=[]), cfg5) == []

    def test_first_row_at_threshold_emits_immediately(self, cfg5):
        rows = [make_row(5, 0, {j: 1.0 for j in range(4)}, 1)]
        out = downsample_training(PatientRecord(patient_id="x", rows=rows), cfg5)
        assert len(out) == 1 and out[0].hour == 0

    def test_no_new_observations_after_emission_is_quiet(self, cfg5):
        rows = [make_row(5, 0, {j: 1.0 for j in range(5)}, 0)] + [
            make_row(5, h, {}, 0) for h in range(1, 5)
        ]
        out = downsample_training(PatientRecord(patient_id="x", rows=rows), cfg5)
        assert [s.hour for s in out] == [0]

    def test_carried_values_do_not_count_toward_completeness(self, cfg5):
        # all five observed at t0 (emit), then one new observation per row:
        # carried forward-fill values must not satisfy the 0.8 threshold.
        rows = [make_row(5, 0, {j: 1.0 for j in range(5)}, 0)]
        rows += [make_row(5, h, {h % 5: 2.0}, 0) for h in range(1, 4)]
        out = downsample_training(PatientRecord(patient_id="x", rows=rows), cfg5)
        assert [s.hour for s in out] == [0]

    def test_forward_fill_is_record_global_with_carry_on(self, cfg5):
        rows = [
            make_row(5, 0, {j: float(j + 1) for j in range(5)}, 0),
            make_row(5, 1, {0: 9.0, 1: 9.0, 2: 9.0, 3: 9.0}, 1),
        ]
        out = downsample_training(PatientRecord(patient_id="x", rows=rows), cfg5)
        assert len(out) == 2
        # f5 was never re-observed in the second window but carries over
        assert out[1].values == [9.0, 9.0, 9.0, 9.0, 5.0]
        assert out[1].mask == [True] * 5

    def test_carry_off_drops_values_between_windows(self, schema5):
        cfg = PipelineConfig(schema=schema5, carry_fill_across_windows=False)
        rows = [
            make_row(5, 0, {j: float(j + 1) for j in range(5)}, 0),
            make_row(5, 1, {0: 9.0, 1: 9.0, 2: 9.0, 3: 9.0}, 1),
        ]
        out = downsample_training(PatientRecord(patient_id="x", rows=rows), cfg)
        assert len(out) == 2
        assert out[1].values == [9.0, 9.0, 9.0, 9.0, 0.0]
        assert out[1].mask == [True, True, True, True, False]

    def test_stream_rejects_out_of_order_rows(self, cfg5):
        state = new_state("x", 5)
        stream_window_step(state, make_row(5, 3, {0: 1.0}, 0), cfg5)
        with pytest.raises(OutOfOrderRowError):
            stream_window_step(state, make_row(5, 3, {1: 1.0}, 0), cfg5)
        with pytest.raises(OutOfOrderRowError):
            stream_window_step(state, make_row(5, 2, {1: 1.0}, 0), cfg5)

    def test_row_width_must_match_state(self, cfg5):
        state = new_state("x", 5)
        with pytest.raises(DimensionMismatchError):
            stream_window_step(state, make_row(4, 0, {0: 1.0}, 0), cfg5)

    def test_threshold_validation(self, schema5):
        with pytest.raises(BadDomainError):
            PipelineConfig(schema=schema5, completeness_threshold=0.0)
        with pytest.raises(BadDomainError):
            PipelineConfig(schema=schema5, completeness_threshold=1.5)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=100_000))
    def test_batch_equals_stream_on_random_records(self, seed):
        rng = make_rng(derive_seed(seed, "equiv-prop"))
        d, rec = random_record(rng, "prop")
        threshold = float(rng.choice([0.3, 0.5, 0.8, 1.0]))
        carry = bool(rng.integers(0, 2))
        cfg = PipelineConfig(
            schema=FeatureSchema(names=["c%d" % j for j in range(d)]),
            completeness_threshold=threshold,
            carry_fill_across_windows=carry,
        )
        assert as_tuples(downsample_training(rec, cfg)) == as_tuples(
            run_stream(rec, d, cfg)
        )


class TestNormStats:
    def test_two_point_column(self):
        samples = [
            Sample("a", 0, 0, [2.0, 7.0], [True, False]),
            Sample("a", 1, 0, [4.0, 7.0], [True, False]),
        ]
        stats = fit_norm_stats(samples)
        assert stats.mean == [3.0, 0.0]
        assert stats.std == [1.0, 1.0]
        assert stats.count == [2, 0]

    def test_zero_variance_keeps_mean_unit_std(self):
        samples = [
            Sample("a", 0, 0, [5.0], [True]),
            Sample("a", 1, 0, [5.0], [True]),
        ]
        stats = fit_norm_stats(samples)
        assert stats.mean == [5.0] and stats.std == [1.0] and stats.count == [2]

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            fit_norm_stats([])

    def test_matches_two_pass_oracle(self):
        rng = make_rng(derive_seed(17, "norm-oracle"))
        d = 7
        samples = []
        for i in range(200):
            mask = [bool(rng.random() < 0.6) for _ in range(d)]
            values = [
                float(rng.normal(loc=j, scale=j + 1)) if mask[j] else 0.0
                for j in range(d)
            ]
            samples.append(Sample("p", i, 0, values, mask))
        stats = fit_norm_stats(samples)
        for j in range(d):
            observed = [s.values[j] for s in samples if s.mask[j]]
            assert stats.count[j] == len(observed)
            mean = sum(observed) / len(observed)
            var = sum((v - mean) ** 2 for v in observed) / len(observed)
            assert stats.mean[j] == pytest.approx(mean, rel=1e-12)
            assert stats.std[j] == pytest.approx(var ** 0.5, rel=1e-12)

    def test_normalize_scores_observed_and_pins_masked(self):
        stats = NormStats(mean=[10.0, 0.0], std=[2.0, 1.0], count=[5, 0])
        sample = Sample("p", 3, 1, [14.0, 123.0], [True, False])
        out = normalize(sample, stats)
        assert out.values == [2.0, 0.0]
        assert out.mask == [True, False]
        assert (out.patient_id, out.hour, out.label) == ("p", 3, 1)

    def test_normalize_checks_width(self):
        stats = NormStats(mean=[0.0], std=[1.0], count=[1])
        with pytest.raises(DimensionMismatchError):
            normalize(Sample("p", 0, 0, [1.0, 2.0], [True, True]), stats)


class TestSampleMatrix:
    def test_shapes_and_dtypes(self):
        samples = [
            Sample("a", 0, 0, [1.0, 2.0], [True, False]),
            Sample("a", 1, 1, [3.0, 4.0], [False, True]),
        ]
        x, y = sample_matrix(samples)
        assert x.shape == (2, 2) and x.dtype == np.float64
        assert y.tolist() == [0, 1]

    def test_mask_channels_append_as_01_columns(self):
        samples = [Sample("a", 0, 1, [1.5, -2.0], [True, False])]
        x, _ = sample_matrix(samples, append_mask_channels=True)
        assert x.shape == (1, 4)
        assert x[0].tolist() == [1.5, -2.0, 1.0, 0.0]

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            sample_matrix([])


class TestStatsFiles:
    def test_round_trip(self, tmp_path, schema5):
        stats = NormStats(
            mean=[1.0, -2.5, 0.0, 3.25, 0.125],
            std=[1.0, 2.0, 1.0, 0.5, 4.0],
            count=[3, 9, 0, 2, 7],
        )
        path = tmp_path / "norm.txt"
        save_norm_stats(stats, schema5, 0.8, path)
        back, threshold = load_norm_stats(path, schema5)
        assert back == stats and threshold == 0.8

    def test_schema_mismatch_rejected(self, tmp_path, schema5):
        stats = NormStats(mean=[0.0] * 5, std=[1.0] * 5, count=[1] * 5)
        path = tmp_path / "norm.txt"
        save_norm_stats(stats, schema5, 0.8, path)
        other = FeatureSchema(names=["g1", "g2", "g3", "g4", "g5"])
        with pytest.raises(HeaderMismatchError):
            load_norm_stats(path, other)

    def test_tampered_line_rejected(self, tmp_path, schema5):
        stats = NormStats(mean=[0.0] * 5, std=[1.0] * 5, count=[1] * 5)
        path = tmp_path / "norm.txt"
        save_norm_stats(stats, schema5, 0.8, path)
        lines = path.read_text(encoding="utf-8").splitlines()
        lines[2] = "f2 not-a-number 1.0 1"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        with pytest.raises(MalformedRowError):
            load_norm_stats(path, schema5)

    def test_rewrite_is_byte_stable(self, tmp_path, schema5):
        stats = NormStats(
            mean=[0.1, 0.2, 0.3, 0.4, 0.5],
            std=[1.0, 1.1, 1.2, 1.3, 1.4],
            count=[1, 2, 3, 4, 5],
        )
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_norm_stats(stats, schema5, 0.8, p1)
        back, threshold = load_norm_stats(p1, schema5)
        save_norm_stats(back, schema5, threshold, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestSampleFiles:
    def samples(self):
        return [
            Sample("p01", 3, 0, [1.0, 2.5, 3.0, 4.0, 0.0], [True, True, True, True, False]),
            Sample("p01", 5, 1, [1.5, 2.6, 3.1, 4.0, 5.0], [True] * 5),
            Sample("p02", 0, 0, [0.0, -1.25, 0.0, 0.0, 0.0], [False, True, False, False, False]),
        ]

    def test_round_trip(self, tmp_path, schema5):
        path = tmp_path / "samples.csv"
        save_samples(self.samples(), schema5, path)
        back = load_samples(path, schema5)
        assert [(s.patient_id, s.hour, s.label, s.values, s.mask) for s in back] == [
            (s.patient_id, s.hour, s.label, s.values, s.mask) for s in self.samples()
        ]

    def test_rewrite_is_byte_stable(self, tmp_path, schema5):
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_samples(self.samples(), schema5, p1)
        save_samples(load_samples(p1, schema5), schema5, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_mismatch_rejected(self, tmp_path, schema5):
        path = tmp_path / "samples.csv"
        save_samples(self.samples(), schema5, path)
        other = FeatureSchema(names=["g1", "g2", "g3", "g4", "g5"])
        with pytest.raises(HeaderMismatchError):
            load_samples(path, other)
