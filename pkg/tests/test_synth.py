import numpy as np
import pytest

from canet.synth import AnomalySegment, place_segments, synth_generate


class TestGenerate:
    def test_no_anomalies_all_labels_zero(self):
        result = synth_generate(4, 300, seed=1)
        assert result.test.labels.sum() == 0
        assert result.train.labels is None

    def test_spike_segment_labels_by_construction(self):
        seg = AnomalySegment(start=100, duration=10, sensors=[0], kind="spike")
        result = synth_generate(3, 400, seed=2, anomalies=[seg])
        assert result.test.labels.sum() == 10
        assert result.test.labels[100:110].all()

    def test_same_seed_bit_identical(self):
        seg = AnomalySegment(start=50, duration=5, sensors=[1], kind="drift")
        a = synth_generate(5, 200, seed=7, anomalies=[seg])
        b = synth_generate(5, 200, seed=7, anomalies=[seg])
        assert a.train.values.tobytes() == b.train.values.tobytes()
        assert a.test.values.tobytes() == b.test.values.tobytes()

    def test_overlapping_segments_rejected(self):
        segs = [AnomalySegment(10, 10, [0]), AnomalySegment(15, 10, [1])]
        with pytest.raises(ValueError):
            synth_generate(3, 100, seed=0, anomalies=segs)

    def test_out_of_range_segment_rejected(self):
        with pytest.raises(ValueError):
            synth_generate(3, 100, seed=0, anomalies=[AnomalySegment(95, 10, [0])])
        with pytest.raises(ValueError):
            synth_generate(3, 100, seed=0, anomalies=[AnomalySegment(5, 5, [7])])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            AnomalySegment(0, 5, [0], kind="explosion")

    def test_spike_magnitude_in_training_std_units(self):
        seg = AnomalySegment(start=100, duration=10, sensors=[0], magnitude=5.0)
        clean = synth_generate(3, 500, seed=3)
        spiked = synth_generate(3, 500, seed=3, anomalies=[seg])
        std = clean.train.values[0].std()
        delta = spiked.test.values[0, 100:110] - clean.test.values[0, 100:110]
        np.testing.assert_allclose(delta, 5.0 * std, rtol=1e-10)

    def test_stuck_freezes_segment(self):
        seg = AnomalySegment(start=60, duration=8, sensors=[2], kind="stuck")
        result = synth_generate(4, 300, seed=4, anomalies=[seg])
        segment = result.test.values[2, 60:68]
        assert np.ptp(segment) == 0.0

    def test_cluster_mates_are_correlated(self):
        result = synth_generate(6, 2000, seed=5)
        corr = np.corrcoef(result.train.values)
        same, different = [], []
        for cluster in result.clusters:
            for a in cluster:
                for b in cluster:
                    if a < b:
                        same.append(abs(corr[a, b]))
        for ca in result.clusters:
            for cb in result.clusters:
                if ca is not cb:
                    different.extend(abs(corr[a, b]) for a in ca for b in cb)
        assert min(same) > 0.8
        assert np.mean(different) < np.mean(same)

    def test_truth_graph_marks_clusters(self):
        result = synth_generate(6, 200, seed=6)
        for cluster in result.clusters:
            for a in cluster:
                for b in cluster:
                    assert result.adjacency[a, b] == 1

    def test_train_and_test_are_one_continuum(self):
        result = synth_generate(2, 400, seed=8)
        # equal lengths, same generative parameters: similar marginal spread
        assert result.train.length == result.test.length == 400
        assert abs(result.train.values.std() - result.test.values.std()) < 0.15


class TestPlacement:
    def test_requested_counts_and_no_overlap(self):
        rng = np.random.default_rng(0)
        segments = place_segments(5, 2000, 5, rng, duration=10)
        assert len(segments) == 5
        spans = sorted((s.start, s.end) for s in segments)
        for (s1, e1), (s2, e2) in zip(spans, spans[1:]):
            assert s2 >= e1

    def test_zero_count(self):
        assert place_segments(0, 100, 3, np.random.default_rng(0)) == []

    def test_deterministic_for_seeded_rng(self):
        a = place_segments(3, 1000, 4, np.random.default_rng(5))
        b = place_segments(3, 1000, 4, np.random.default_rng(5))
        assert [(s.start, tuple(s.sensors)) for s in a] == \
               [(s.start, tuple(s.sensors)) for s in b]

    def test_too_short_series_rejected(self):
        with pytest.raises(ValueError):
            place_segments(2, 30, 3, np.random.default_rng(0), duration=25)
