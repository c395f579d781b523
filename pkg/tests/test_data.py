import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smldist import core
from smldist.core import Tensor
from smldist.data import (
    CsvSchema,
    DataError,
    ScalerParams,
    Stream,
    SynthSpec,
    fit_scaler,
    load_csv_dataset,
    minmax_fit,
    minmax_scale,
    n_validation_subjects,
    robust_scale_apply,
    robust_scale_fit,
    split_by_subject,
    split_subjects,
    synth_generate,
    synth_windows,
    window_signal,
    window_streams,
    write_csv,
)


def stream(n, c=1, labels=None, subject=0):
    values = np.arange(c * n, dtype=np.float64).reshape(c, n)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    return Stream(subject, values, labels, np.arange(n) / 10.0)


# robust scaling --------------------------------------------------------------


def nine():
    return np.arange(9, dtype=np.float64)[None, :]


def test_robust_fixture_quartiles():
    p = robust_scale_fit(nine())
    assert p.stats["q1"] == [2.0] and p.stats["q3"] == [6.0] and p.stats["iqr"] == [4.0]
    assert (p.stats["lower"], p.stats["upper"]) == ([-4.0], [12.0])


def test_robust_fixture_is_x_over_16():
    x = nine()
    assert np.array_equal(robust_scale_apply(x, robust_scale_fit(x)), x / 16)


def test_robust_outlier_clipped():
    p = robust_scale_fit(nine())
    assert robust_scale_apply(np.array([[100.0, -100.0]]), p).tolist() == [[0.75, -0.25]]


def test_robust_constant_channel():
    x = np.ones((2, 10))
    x[1] = np.arange(10)
    with pytest.raises(DataError):
        robust_scale_fit(x)
    p = robust_scale_fit(x, allow_degenerate=True)
    out = robust_scale_apply(x, p)
    assert np.array_equal(out[0], np.zeros(10)) and p.degenerate == [True, False]


def test_robust_needs_four_samples():
    with pytest.raises(DataError):
        robust_scale_fit(np.arange(3.0)[None, :])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_robust_bounded_under_random_outliers(seed):
    r = np.random.default_rng(seed)
    train = r.standard_normal((3, 200)) * r.uniform(0.1, 5, (3, 1))
    p = robust_scale_fit(train)
    probe = r.standard_cauchy((3, 10_000)) * 1e3
    out = robust_scale_apply(probe, p)
    iqr = np.array(p.stats["iqr"])[:, None]
    lo, hi = np.array(p.stats["lower"])[:, None] / (4 * iqr), np.array(p.stats["upper"])[:, None] / (4 * iqr)
    assert np.all(out >= lo) and np.all(out <= hi)


def test_scaler_window_layout_matches_samples():
    r = np.random.default_rng(0)
    X = r.standard_normal((6, 2, 20))
    a = robust_scale_fit(X)
    b = robust_scale_fit(X.transpose(1, 0, 2).reshape(2, -1))
    assert a.stats == b.stats


def test_scaler_params_round_trip():
    p = robust_scale_fit(np.random.default_rng(1).standard_normal((3, 50)))
    q = ScalerParams.from_dict(p.to_dict())
    x = np.random.default_rng(2).standard_normal((4, 3, 7))
    assert np.array_equal(p.apply(x), q.apply(x))


def test_scaler_channel_mismatch():
    p = robust_scale_fit(np.random.default_rng(1).standard_normal((3, 50)))
    with pytest.raises(DataError):
        p.apply(np.zeros((2, 4, 5)))


# min-max ------------------------------------------------------------------------


def test_minmax_zero_based():
    x = np.arange(5.0)[None, :]
    assert np.array_equal(minmax_scale(x, minmax_fit(x)), x / 4)


def test_minmax_verbatim_does_not_rezero():
    x = np.arange(2.0, 7.0)[None, :]
    out = minmax_scale(x, minmax_fit(x))
    assert np.array_equal(out, x / 4) and out.min() == 0.5 and out.max() == 1.5


def test_minmax_centered_flag():
    x = np.arange(2.0, 7.0)[None, :]
    out = minmax_scale(x, minmax_fit(x, centered=True))
    np.testing.assert_allclose(out, (x - 2) / 4)


def test_minmax_constant_channel():
    with pytest.raises(DataError):
        minmax_fit(np.full((1, 5), 3.0))


def test_fit_scaler_unknown():
    with pytest.raises(ValueError):
        fit_scaler("zscore", nine())


# windowing --------------------------------------------------------------------


def test_window_count_formula():
    ws = window_signal(stream(10), 4, 2)
    assert len(ws) == 4
    assert [w.values[0, 0] for w in ws] == [0, 2, 4, 6]


def test_window_equal_to_stream():
    s = stream(6, c=2)
    for hop in (1, 3, 100):
        ws = window_signal(s, 6, hop)
        assert len(ws) == 1 and np.array_equal(ws[0].values, s.values)


def test_short_stream_gives_no_windows():
    assert window_signal(stream(3), 4, 1) == []


def test_default_hop_is_half_window():
    assert len(window_signal(stream(12), 4)) == 5


def test_majority_label_with_tie_to_earlier():
    s = stream(4, labels=[2, 2, 1, 1])
    assert window_signal(s, 4, 4)[0].label == 2
    s = stream(5, labels=[0, 1, 1, 0, 1])
    assert window_signal(s, 5, 5)[0].label == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 60), st.integers(1, 20), st.integers(1, 10))
def test_window_count_property(n, win, hop):
    expected = 0 if win > n else (n - win) // hop + 1
    assert len(window_signal(stream(n), win, hop)) == expected


# splitting ------------------------------------------------------------------------


def test_ten_subjects_split_seven_three():
    tr, va = split_subjects(range(10), 0.3, seed=5)
    assert len(tr) == 7 and len(va) == 3 and not set(tr) & set(va) and set(tr) | set(va) == set(range(10))


def test_split_deterministic():
    assert split_subjects(range(10), 0.3, 1) == split_subjects(range(10), 0.3, 1)


def test_small_fraction_rounds_up_to_one():
    assert n_validation_subjects(3, 0.3) == 1
    assert n_validation_subjects(5, 0.01) == 1
    assert n_validation_subjects(2, 0.99) == 1


def test_single_subject_split_error():
    with pytest.raises(DataError):
        split_subjects([4, 4, 4], 0.3, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(0.01, 0.99), st.integers(0, 1000))
def test_split_partition_property(n, frac, seed):
    tr, va = split_subjects(range(n), frac, seed)
    assert tr and va and not set(tr) & set(va) and set(tr) | set(va) == set(range(n))


def test_split_by_subject_keeps_windows_together():
    ws = synth_windows(SynthSpec(windows_per_class=2, n_subjects=4, seed=3))
    train, val = split_by_subject(ws, 0.3, 0)
    assert len(train) + len(val) == len(ws)
    assert not set(train.subjects) & set(val.subjects)


# synthetic generator ----------------------------------------------------------------


def test_synth_same_seed_identical():
    a, b = synth_windows(SynthSpec(seed=11)), synth_windows(SynthSpec(seed=11))
    assert a.X.tobytes() == b.X.tobytes() and np.array_equal(a.y, b.y)


def test_synth_shapes_and_ids():
    spec = SynthSpec()
    ws = synth_windows(spec)
    assert ws.X.shape == (6 * 12 * 5, 3, 250)
    assert set(ws.y.tolist()) == set(range(6)) and set(ws.subjects.tolist()) == set(range(5))


def test_noise_free_dominant_bin_is_class_frequency():
    spec = SynthSpec(noise_sigma=0.0, slope=0.0, windows_per_class=2, n_subjects=2, seed=4)
    ws = synth_windows(spec)
    L = spec.window_length
    mags = np.abs(core.rfft(Tensor(ws.X[:, 0, :])).complex())
    bins = np.argmax(mags[:, 1:], axis=1) + 1
    expected = np.round(np.array(spec.frequencies)[ws.y] * L / spec.sample_rate)
    assert np.array_equal(bins, expected)
    assert len(set(expected.tolist())) == spec.n_classes


def test_synth_validation():
    with pytest.raises(ValueError):
        SynthSpec(frequencies=[1.0, 1.0], n_classes=2).validate()
    with pytest.raises(ValueError):
        SynthSpec(frequencies=[1.0], n_classes=2).validate()


# CSV ----------------------------------------------------------------------------------


def write(tmp_path, text):
    p = tmp_path / "d.csv"
    p.write_text(text, encoding="utf-8")
    return p


def test_csv_two_rows(tmp_path):
    p = write(tmp_path, "subject,label,t,ch_0\n0,1,0.0,0.5\n0,1,0.02,0.7\n")
    streams = load_csv_dataset(p, CsvSchema(1, 2))
    assert list(streams) == [0] and len(streams[0]) == 2
    assert streams[0].values.tolist() == [[0.5, 0.7]]


def test_csv_out_of_order_time_names_line(tmp_path):
    p = write(tmp_path, "subject,label,t,ch_0\n0,1,0.0,0.5\n0,1,0.1,0.7\n0,1,0.05,0.7\n")
    with pytest.raises(DataError, match=r":4:"):
        load_csv_dataset(p, CsvSchema(1, 2))


def test_csv_missing_channel_column(tmp_path):
    p = write(tmp_path, "subject,label,t,ch_0\n0,1,0.0,0.5\n")
    with pytest.raises(DataError, match="ch_1"):
        load_csv_dataset(p, CsvSchema(2, 2))


@pytest.mark.parametrize(
    "body,pattern",
    [
        ("0,1,0.0\n", ":2:"),
        ("0,x,0.0,1\n", ":2:"),
        ("0,5,0.0,1\n", "unknown label"),
        ("0,1,0.0,1\n1,1,0.0,1\n0,1,1.0,1\n", "not contiguous"),
    ],
)
def test_csv_errors(tmp_path, body, pattern):
    p = write(tmp_path, "subject,label,t,ch_0\n" + body)
    with pytest.raises(DataError, match=pattern):
        load_csv_dataset(p, CsvSchema(1, 2))


def test_csv_round_trip_exact(tmp_path):
    spec = SynthSpec(windows_per_class=2, n_subjects=3, seed=2)
    streams = synth_generate(spec)
    path = write_csv(streams, tmp_path / "s.csv")
    back = load_csv_dataset(path, CsvSchema(spec.n_channels, spec.n_classes))
    assert sorted(back) == sorted(streams)
    for k in streams:
        assert np.array_equal(back[k].values, streams[k].values)
        assert np.array_equal(back[k].labels, streams[k].labels)
    a = window_streams(back, spec.window_length, spec.window_length)
    b = synth_windows(spec)
    assert np.array_equal(a.X, b.X)


def test_csv_write_is_byte_stable(tmp_path):
    spec = SynthSpec(windows_per_class=1, n_subjects=2, seed=8)
    a = write_csv(synth_generate(spec), tmp_path / "a.csv").read_bytes()
    b = write_csv(synth_generate(spec), tmp_path / "b.csv").read_bytes()
    assert a == b
