import numpy as np
import pytest

from epigrowth.blocks import block_transform, build_training_set
from epigrowth.errors import InsufficientHistoryError
from epigrowth.panel import build_incident_panel

from conftest import frame_for, panel_from_logs, random_series


def two_point_ols_oracle(y0, y1):
    """Normal equations for the regression of {y0, y1} on {0, 1}."""
    A = np.array([[1.0, 0.0], [1.0, 1.0]])
    coef, *_ = np.linalg.lstsq(A, np.array([y0, y1]), rcond=None)
    return coef[1], coef[0]


def enumeration_oracle(blocks, t_star):
    """Row multiset via explicit congruence classes over days 0..t_star."""
    treated_days = [z for z in range(t_star + 1) if z % 2 == t_star % 2]
    control_days = [z for z in range(t_star + 1) if z % 2 == (t_star - 1) % 2]
    by_key = {(b.county.fips, b.day): b for b in blocks}
    rows = []
    for county in sorted({b.county.fips for b in blocks}):
        for t in treated_days:
            b = by_key.get((county, t))
            if b is not None:
                rows.append((county, tuple(b.features.values), b.y1, 1))
        for t in control_days:
            b = by_key.get((county, t + 1))
            if b is not None and t + 1 <= t_star:
                rows.append((county, tuple(b.features.values), 0.0, 0))
    return sorted(rows)


def training_rows(ts):
    return sorted(
        (prov[1].fips, tuple(ts.features[i]), float(ts.outcomes[i]), int(ts.treatment[i]))
        for i, prov in enumerate(ts.provenance)
    )


def make_blocks(rng, n_counties=3, n_days=12, lag=6, invalidate=0.0):
    series = [random_series(rng, n_days, fips=f"{i + 1:05d}") for i in range(n_counties)]
    panel = build_incident_panel(series, lag=lag)
    if invalidate > 0:
        mask = rng.random(panel.valid.shape) < invalidate
        valid = panel.valid & ~mask
        logs = np.where(valid, panel.log_incident, np.nan)
        panel = panel_from_logs(logs, counties=panel.counties)
    feats = rng.normal(size=(panel.num_days, len(panel.counties), 2))
    frame = frame_for(panel, feats)
    return panel, frame


class TestBlockTransform:
    def test_log_ratio_outcome(self):
        panel = panel_from_logs(np.log(np.array([[100.0], [110.0]])))
        blocks, _ = block_transform(panel, frame_for(panel))
        (b,) = blocks
        assert b.y1 == pytest.approx(np.log(1.1), abs=1e-12)
        assert b.r_ols == b.y1
        assert b.alpha_ols == 0.0
        assert b.y0 == 0.0
        assert b.prev_incident == 100

    def test_flat_counts_give_zero_slope(self):
        panel = panel_from_logs(np.log(np.array([[50.0], [50.0]])))
        blocks, _ = block_transform(panel, frame_for(panel))
        assert blocks[0].y1 == 0.0
        assert blocks[0].r_ols == 0.0

    def test_matches_generic_ols_solver(self, rng):
        panel, frame = make_blocks(rng)
        blocks, _ = block_transform(panel, frame)
        assert blocks
        for b in blocks:
            slope, intercept = two_point_ols_oracle(0.0, b.y1)
            assert abs(b.r_ols - slope) < 1e-12
            assert abs(b.alpha_ols - intercept) < 1e-12

    def test_augmented_features(self, rng):
        panel, frame = make_blocks(rng)
        blocks, _ = block_transform(panel, frame)
        b = blocks[0]
        assert b.features.names[-3:] == ("ols_slope", "ols_intercept", "prev_incident")
        j = panel.county_index(b.county.fips)
        np.testing.assert_array_equal(b.features.values[:-3], frame.values[b.day, j])
        assert b.features.values[-3] == b.r_ols
        assert b.features.values[-2] == 0.0
        assert b.features.values[-1] == float(b.prev_incident)

    def test_invalid_pairs_skipped_and_counted(self):
        logs = np.log(np.array([[10.0], [12.0], [np.e], [14.0], [16.0]]))
        logs[2, 0] = np.nan
        panel = panel_from_logs(logs)
        blocks, skipped = block_transform(panel, frame_for(panel))
        assert sorted(b.day for b in blocks) == [1, 4]
        assert skipped == 2


class TestBuildTrainingSet:
    def test_even_target_parity(self, rng):
        panel = panel_from_logs(np.log(np.arange(10.0, 16.0).reshape(-1, 1)))
        blocks, _ = block_transform(panel, frame_for(panel))
        ts = build_training_set(blocks, 4)
        treated = [(d, c.fips) for i, (d, c) in enumerate(ts.provenance) if ts.treatment[i] == 1]
        control = [(d, c.fips) for i, (d, c) in enumerate(ts.provenance) if ts.treatment[i] == 0]
        assert [d for d, _ in treated] == [2, 4]
        assert [d for d, _ in control] == [1, 3]
        by_day = {b.day: b for b in blocks}
        for i, (d, _) in enumerate(ts.provenance):
            if ts.treatment[i] == 0:
                np.testing.assert_array_equal(ts.features[i], by_day[d + 1].features.values)

    def test_smallest_target(self, rng):
        panel = panel_from_logs(np.log(np.array([[10.0], [12.0]])))
        blocks, _ = block_transform(panel, frame_for(panel))
        ts = build_training_set(blocks, 1)
        assert len(ts) == 2
        assert sorted(ts.treatment.tolist()) == [0, 1]
        np.testing.assert_array_equal(ts.features[0], ts.features[1])

    def test_matches_enumeration_oracle(self, rng):
        panel, frame = make_blocks(rng, n_counties=3, n_days=10, lag=5)
        blocks, _ = block_transform(panel, frame)
        for t_star in range(1, 10):
            ts = build_training_set(blocks, t_star)
            assert training_rows(ts) == enumeration_oracle(blocks, t_star)

    def test_randomized_sparse_panels_match_oracle(self, rng):
        for _ in range(60):
            panel, frame = make_blocks(
                rng,
                n_counties=int(rng.integers(1, 4)),
                n_days=int(rng.integers(4, 14)),
                lag=int(rng.integers(2, 8)),
                invalidate=float(rng.choice([0.0, 0.15, 0.3])),
            )
            blocks, _ = block_transform(panel, frame)
            if not blocks:
                continue
            t_star = int(rng.integers(1, panel.num_days))
            expected = enumeration_oracle(blocks, t_star)
            if not expected:
                with pytest.raises(InsufficientHistoryError):
                    build_training_set(blocks, t_star)
                continue
            ts = build_training_set(blocks, t_star)
            assert training_rows(ts) == expected

    def test_pairing_identity(self, rng):
        panel, frame = make_blocks(rng, n_counties=2, n_days=12, lag=6)
        blocks, _ = block_transform(panel, frame)
        ts = build_training_set(blocks, 9)
        treated_feats = {
            (prov[1].fips, tuple(ts.features[i]))
            for i, prov in enumerate(ts.provenance)
            if ts.treatment[i] == 1
        }
        for i, prov in enumerate(ts.provenance):
            if ts.treatment[i] == 0:
                assert (prov[1].fips, tuple(ts.features[i])) in treated_feats

    def test_treated_count_matches_oracle(self, rng):
        panel, frame = make_blocks(rng, n_counties=1, n_days=14, lag=7)
        blocks, _ = block_transform(panel, frame)
        for t_star in range(1, 14):
            ts = build_training_set(blocks, t_star)
            oracle_treated = sum(1 for r in enumeration_oracle(blocks, t_star) if r[3] == 1)
            assert int((ts.treatment == 1).sum()) == oracle_treated

    def test_difference_of_means_recovers_mean_slope(self, rng):
        panel, frame = make_blocks(rng, n_counties=3, n_days=12, lag=6)
        blocks, _ = block_transform(panel, frame)
        ts = build_training_set(blocks, 11)
        treated = ts.outcomes[ts.treatment == 1]
        controls = ts.outcomes[ts.treatment == 0]
        assert treated.mean() - controls.mean() == pytest.approx(treated.mean(), abs=1e-15)
        assert (controls == 0.0).all()

    def test_no_history_raises(self, rng):
        panel, frame = make_blocks(rng)
        blocks, _ = block_transform(panel, frame)
        with pytest.raises(ValueError):
            build_training_set(blocks, 0)
        with pytest.raises(InsufficientHistoryError):
            build_training_set([], 5)

    def test_rows_sorted_by_county_then_day(self, rng):
        panel, frame = make_blocks(rng, n_counties=3, n_days=10, lag=5)
        blocks, _ = block_transform(panel, frame)
        ts = build_training_set(blocks, 9)
        keys = [(c.fips, d) for d, c in ts.provenance]
        assert keys == sorted(keys)
