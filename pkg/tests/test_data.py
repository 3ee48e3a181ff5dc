import math

import numpy as np
import pytest

from dualgrain.data import (
    ChannelScaler,
    GeneratorSpec,
    SignalSample,
    build_schedule,
    export_csv,
    generate_synthetic,
    ingest_csv,
    make_views,
    segment_shuffle_augment,
)
from dualgrain.data.schedule import SessionSchedule, SessionSpec
from dualgrain.errors import DomainError, ParseError


def sample_lists_equal(a, b):
    return len(a) == len(b) and all(
        x.label == y.label and np.array_equal(x.values, y.values) for x, y in zip(a, b)
    )


# ---------------------------------------------------------------------------
# generator


def test_zero_noise_single_component_samples_identical():
    spec = GeneratorSpec(n_channels=3, length=32, n_classes=2, noise_level=0.0, shared_drift_amp=0.0)
    samples = generate_synthetic(spec, 0, 10, seed=4)
    for s in samples[1:]:
        assert np.array_equal(s.values, samples[0].values)


def test_generator_deterministic_given_spec_and_seed():
    spec = GeneratorSpec(n_channels=4, length=64, n_classes=3, noise_level=0.2)
    first = generate_synthetic(spec, 1, 7, seed=99)
    second = generate_synthetic(spec, 1, 7, seed=99)
    assert sample_lists_equal(first, second)
    third = generate_synthetic(spec, 1, 7, seed=100)
    assert not sample_lists_equal(first, third)


def test_generator_rejects_bad_class():
    spec = GeneratorSpec(n_classes=2)
    with pytest.raises(DomainError):
        generate_synthetic(spec, 2, 1, seed=0)
    with pytest.raises(DomainError):
        generate_synthetic(spec, 0, 0, seed=0)


def test_classes_separable_by_spectral_energy_probe():
    # independent oracle: logistic probe on banded per-channel spectral energy
    sklearn = pytest.importorskip("sklearn")
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split

    spec = GeneratorSpec(n_channels=52, length=128, n_classes=10, noise_level=0.1, shared_drift_amp=1.0)
    feats, labels = [], []
    for c in range(10):
        for s in generate_synthetic(spec, c, 40, seed=123):
            power = np.abs(np.fft.rfft(s.values, axis=1)) ** 2
            bands = [b.mean(axis=1) for b in np.array_split(power, 8, axis=1)]
            feats.append(np.log(np.concatenate(bands) + 1e-9))
            labels.append(c)
    x_tr, x_te, y_tr, y_te = train_test_split(
        np.array(feats), np.array(labels), test_size=0.5, random_state=0, stratify=labels
    )
    probe = LogisticRegression(max_iter=2000).fit(x_tr, y_tr)
    assert probe.score(x_te, y_te) > 0.95


# ---------------------------------------------------------------------------
# CSV round trip


def test_csv_round_trip(tmp_path):
    spec = GeneratorSpec(n_channels=3, length=16, n_classes=2)
    samples = generate_synthetic(spec, 0, 4, seed=1) + generate_synthetic(spec, 1, 4, seed=1, start_id=4)
    path = tmp_path / "samples.csv"
    export_csv(samples, path)
    back = ingest_csv(path)
    assert sample_lists_equal(samples, back)


def test_csv_header_only_gives_empty_list(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("label,c0_t0,c0_t1,c1_t0,c1_t1\n")
    assert ingest_csv(path) == []


def test_csv_handcrafted_fixture(tmp_path):
    path = tmp_path / "fix.csv"
    path.write_text(
        "label,c0_t0,c0_t1,c0_t2,c0_t3,c1_t0,c1_t1,c1_t2,c1_t3\n"
        "0,1,2,3,4,5,6,7,8\n"
        "1,0,0,0,0,1,1,1,1\n"
        "5,-1,-2,-3,-4,0.5,0.25,0.125,0.0625\n"
    )
    samples = ingest_csv(path)
    assert [s.label for s in samples] == [0, 1, 5]
    assert samples[0].values.shape == (2, 4)
    assert np.array_equal(samples[0].values, [[1, 2, 3, 4], [5, 6, 7, 8]])
    assert np.array_equal(samples[2].values[1], [0.5, 0.25, 0.125, 0.0625])


@pytest.mark.parametrize(
    "body,line",
    [
        ("0,1,2,3\n", 2),  # ragged row
        ("0,1,2,3,4,5,6,7,nan\n", 2),  # non-finite
        ("x,1,2,3,4,5,6,7,8\n", 2),  # bad label
    ],
)
def test_csv_parse_errors_name_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text("label,c0_t0,c0_t1,c0_t2,c0_t3,c1_t0,c1_t1,c1_t2,c1_t3\n" + body)
    with pytest.raises(ParseError) as err:
        ingest_csv(path)
    assert err.value.line == line


def test_csv_missing_label_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("c0_t0,c0_t1\n1,2\n")
    with pytest.raises(ParseError) as err:
        ingest_csv(path)
    assert err.value.line == 1


# ---------------------------------------------------------------------------
# schedule


def test_schedule_five_sessions_of_two():
    sched = build_schedule(list(range(10)), [2, 2, 2, 2, 2], mode="imbalanced", dataset_family="tep")
    assert sched.n_sessions == 5
    assert len(sched.cumulative_classes(4)) == 10
    assert sched.cumulative_classes(1) == [0, 1, 2, 3]
    # Table-style budgets: normal class rich, fault classes few
    assert sched.sessions[0].train_counts[0] == 500
    assert sched.sessions[0].train_counts[1] == 48
    assert sched.sessions[3].train_counts[7] == 48
    assert sched.test_per_class == 800


def test_schedule_modes_and_families():
    lt = build_schedule(list(range(6)), [2, 1, 1, 1, 1], mode="long-tailed", dataset_family="mff")
    assert lt.sessions[0].train_counts[0] == 200
    assert lt.sessions[0].train_counts[1] == 5
    imb = build_schedule(list(range(6)), [2, 1, 1, 1, 1], mode="imbalanced", dataset_family="mff")
    assert imb.sessions[1].train_counts[2] == 10


def test_schedule_single_session():
    sched = build_schedule(list(range(10)), [10])
    assert sched.n_sessions == 1
    assert sched.cumulative_classes(0) == list(range(10))


def test_schedule_rejects_overlap():
    with pytest.raises(DomainError):
        SessionSchedule(
            sessions=[SessionSpec((0, 1), {0: 5, 1: 5}), SessionSpec((1, 2), {1: 5, 2: 5})],
            test_per_class=10,
            mode="imbalanced",
        )
    with pytest.raises(DomainError):
        build_schedule([0, 1, 1, 2], [2, 2])


def test_schedule_disjointness_exhaustive():
    sched = build_schedule(list(range(12)), [4, 2, 2, 2, 2])
    for t1 in range(sched.n_sessions):
        for t2 in range(sched.n_sessions):
            if t1 != t2:
                assert not set(sched.sessions[t1].classes) & set(sched.sessions[t2].classes)


def test_schedule_count_overrides():
    sched = build_schedule(list(range(4)), [2, 2], normal_count=30, fault_count=7, test_per_class=11)
    assert sched.sessions[0].train_counts == {0: 30, 1: 7}
    assert sched.test_per_class == 11


# ---------------------------------------------------------------------------
# augmentation


def _make_sample(length=8, channels=2):
    values = np.arange(channels * length, dtype=float).reshape(channels, length)
    return SignalSample(values=values, label=3, sample_id=0)


def test_segment_length_one_is_identity():
    sample = _make_sample(length=8)
    out = segment_shuffle_augment(sample, frac=1e-9, seed=5)  # ceil -> 1 step
    assert np.array_equal(out.values, sample.values)
    assert out.label == sample.label


def test_segment_shuffle_preserves_channel_multisets():
    rng = np.random.default_rng(0)
    for seed in range(30):
        sample = SignalSample(values=rng.normal(size=(3, 17)), label=1, sample_id=seed)
        frac = float(rng.uniform(0.05, 1.0))
        out = segment_shuffle_augment(sample, frac=frac, seed=seed)
        for ch in range(3):
            assert sorted(out.values[ch]) == pytest.approx(sorted(sample.values[ch]))


def test_segment_shuffle_replay_oracle():
    # replay the documented draw: offset ~ integers(0, L-w+1), then permutation(w)
    sample = _make_sample(length=8)
    frac, seed = 0.5, 42
    w = math.ceil(frac * 8)
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, 8 - w + 1))
    perm = rng.permutation(w)
    expected = sample.values.copy()
    expected[:, offset : offset + w] = expected[:, offset + perm]
    out = segment_shuffle_augment(sample, frac=frac, seed=seed)
    assert np.array_equal(out.values, expected)
    assert not np.array_equal(out.values, sample.values)  # seed 42 actually permutes


def test_segment_shuffle_rejects_bad_frac():
    with pytest.raises(DomainError):
        segment_shuffle_augment(_make_sample(), frac=0.0, seed=0)
    with pytest.raises(DomainError):
        segment_shuffle_augment(_make_sample(), frac=1.5, seed=0)


def test_make_views_size_pairing_and_labels():
    batch = [_make_sample() for _ in range(5)]
    views, origin = make_views(batch, seed=7)
    assert len(views) == 10
    assert origin == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
    assert all(v.label == 3 for v in views)
    for i, v in enumerate(views):
        assert v.sample_id == batch[origin[i]].sample_id


def test_make_views_tiny_frac_reproduces_originals():
    batch = [_make_sample()]
    views, _ = make_views(batch, seed=3, frac=1e-9)
    assert np.array_equal(views[0].values, batch[0].values)
    assert np.array_equal(views[1].values, batch[0].values)


def test_make_views_deterministic_replay():
    batch = [_make_sample(length=12) for _ in range(3)]
    first, _ = make_views(batch, seed=11)
    second, _ = make_views(batch, seed=11)
    assert sample_lists_equal(first, second)
    # independent replay of the seed stream
    rng = np.random.default_rng(11)
    seeds = [int(rng.integers(0, 2**63 - 1)) for _ in range(6)]
    expected = [segment_shuffle_augment(batch[i // 2], frac=0.2, seed=seeds[i]) for i in range(6)]
    assert sample_lists_equal(first, expected)


# ---------------------------------------------------------------------------
# scaler


def test_scaler_standardizes_and_freezes():
    spec = GeneratorSpec(n_channels=3, length=64, n_classes=2, noise_level=0.3)
    base = generate_synthetic(spec, 0, 50, seed=0)
    scaler = ChannelScaler().fit(base)
    scaled = scaler.transform(base)
    stacked = np.stack([s.values for s in scaled])
    assert np.allclose(stacked.mean(axis=(0, 2)), 0.0, atol=1e-9)
    assert np.allclose(stacked.std(axis=(0, 2)), 1.0, atol=1e-9)
    # frozen: later data does not change the statistics
    later = generate_synthetic(spec, 1, 5, seed=1)
    before = scaler.mean.copy()
    scaler.transform(later)
    assert np.array_equal(scaler.mean, before)
    round_trip = ChannelScaler.from_dict(scaler.to_dict())
    assert np.array_equal(round_trip.mean, scaler.mean)
