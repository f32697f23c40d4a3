import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bayesfc.errors import (
    BandOutOfRange,
    CyclicCouplingSpec,
    DuplicateChannelName,
    MalformedCsv,
    NonFiniteSample,
    SignalTooShort,
    WindowLongerThanSignal,
)
from bayesfc.signal import (
    ALPHA,
    BETA,
    THETA,
    WM_LOADS,
    BandSpec,
    Recording,
    WindowPlan,
    WmLoad,
    analytic_envelope,
    average_reference,
    band_preset,
    bandpass,
    butter_sos,
    load_csv,
    save_csv,
    slice_windows,
    synth_coupled,
    window_starts,
)
from oracles import biquad_gain

FS = 500.0


def rec(x, fs=FS):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return Recording(tuple(f"c{i}" for i in range(len(x))), fs, x)


def tone(freq, seconds=4.0, fs=FS, amp=1.0):
    t = np.arange(int(seconds * fs)) / fs
    return amp * np.sin(2 * np.pi * freq * t)


# -- types -------------------------------------------------------------------


def test_wm_loads_six_distinct():
    assert len(set(WM_LOADS)) == 6
    assert [w.label for w in WM_LOADS] == ["5M", "6M", "7M", "5R", "6R", "7R"]
    assert WmLoad.from_label("7R").index == 5
    assert WmLoad.from_index(1) == WmLoad(6, "M")


def test_band_presets():
    assert (THETA.low_hz, THETA.high_hz) == (4, 8)
    assert (ALPHA.low_hz, ALPHA.high_hz) == (8, 13)
    assert (BETA.low_hz, BETA.high_hz) == (15, 20)
    with pytest.raises(BandOutOfRange):
        BandSpec("bad", 8, 4)
    with pytest.raises(BandOutOfRange):
        band_preset("custom", 4, 300).check(500)


def test_recording_invariants():
    with pytest.raises(DuplicateChannelName):
        Recording(("a", "a"), FS, np.zeros((2, 4)))
    with pytest.raises(NonFiniteSample):
        Recording(("a", "b"), FS, [[0, np.nan], [1, 2]])


def test_recording_json_roundtrip():
    r = rec(np.random.default_rng(0).normal(size=(3, 10)))
    back = Recording.from_json(r.to_json())
    assert back.channel_names == r.channel_names
    np.testing.assert_array_equal(back.samples, r.samples)


# -- load_csv ----------------------------------------------------------------


def test_load_csv_transposes(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n3,4\n")
    r = load_csv(p, 100)
    assert r.channel_names == ("a", "b")
    np.testing.assert_array_equal(r.samples, [[1, 3], [2, 4]])


@pytest.mark.parametrize(
    "text, exc",
    [("a,a\n1,2\n3,4\n", DuplicateChannelName), ("a,b\n1,x\n3,4\n", MalformedCsv),
     ("a,b\n1,2\n3\n", MalformedCsv), ("a,b\n1,nan\n3,4\n", NonFiniteSample)],
)
def test_load_csv_errors(tmp_path, text, exc):
    p = tmp_path / "x.csv"
    p.write_text(text)
    with pytest.raises(exc):
        load_csv(p, 100)


def test_save_csv_roundtrip(tmp_path):
    r = rec(np.random.default_rng(1).normal(size=(3, 20)))
    save_csv(r, tmp_path / "r.csv")
    np.testing.assert_array_equal(load_csv(tmp_path / "r.csv", FS).samples, r.samples)


# -- average_reference -------------------------------------------------------


@pytest.mark.parametrize(
    "x, expected",
    [([[1], [3]], [[-1], [1]]), ([[1], [2], [3]], [[-1], [0], [1]]), ([[-1, 2], [1, -2]], [[-1, 2], [1, -2]])],
)
def test_average_reference_examples(x, expected):
    x = np.asarray(x, float)
    out = average_reference(Recording(tuple(f"c{i}" for i in range(len(x))), FS, np.hstack([x, x])))
    np.testing.assert_allclose(out.samples[:, : x.shape[1]], expected)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 6), st.integers(2, 30)), elements=st.floats(-1e3, 1e3)))
def test_average_reference_zero_sum_and_idempotent(x):
    once = average_reference(rec(x))
    scale = max(np.abs(x).max(), 1.0)
    assert np.all(np.abs(once.samples.sum(axis=0)) <= 1e-12 * scale * x.shape[0])
    twice = average_reference(once)
    np.testing.assert_allclose(twice.samples, once.samples, atol=1e-12 * scale)


# -- bandpass ----------------------------------------------------------------


def test_bandpass_passes_in_band_tone():
    out = bandpass(rec([tone(10), tone(10, amp=2)]), ALPHA).samples
    edge = int(0.5 * FS)
    core = out[:, edge:-edge]
    amp = np.sqrt(2) * core.std(axis=1)
    expected = biquad_gain(butter_sos(ALPHA, FS), 10.0, FS)
    assert 0.95 <= amp[0] <= 1.05
    np.testing.assert_allclose(amp, [expected, 2 * expected], rtol=0.01)


def test_bandpass_blocks_dc():
    out = bandpass(rec(np.full((2, 2000), 3.0)), THETA).samples
    edge = int(0.5 * FS)
    assert np.abs(out[:, edge:-edge]).max() <= 1e-6 * 3.0


def test_bandpass_rejects_50hz():
    out = bandpass(rec([tone(50), tone(50)]), ALPHA).samples
    edge = int(0.5 * FS)
    assert np.abs(out[:, edge:-edge]).max() <= 0.01
    assert biquad_gain(butter_sos(ALPHA, FS), 50.0, FS) < 1e-4


def test_bandpass_preserves_length_and_phase():
    x = tone(10, 4)
    out = bandpass(rec([x, x]), ALPHA).samples[0]
    assert out.shape == x.shape
    core = slice(500, -500)
    lag = np.argmax(np.correlate(out[core], x[core], "full")) - (len(x[core]) - 1)
    assert lag == 0


def test_bandpass_errors():
    with pytest.raises(SignalTooShort):
        bandpass(rec(np.zeros((2, 40))), ALPHA)
    with pytest.raises(BandOutOfRange):
        bandpass(rec(np.zeros((2, 200)), fs=20.0), ALPHA)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**31))
def test_bandpass_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 2, 600))
    fx, fy = bandpass(rec(x), BETA).samples, bandpass(rec(y), BETA).samples
    fxy = bandpass(rec(a * x + b * y), BETA).samples
    ref = a * fx + b * fy
    assert np.abs(fxy - ref).max() <= 1e-9 * max(np.abs(ref).max(), np.abs(fxy).max(), 1e-300) + 1e-15


# -- analytic_envelope -------------------------------------------------------


def test_envelope_unit_tone():
    t = np.arange(1000) / FS
    env = analytic_envelope(np.cos(2 * np.pi * 8 * t))
    assert np.abs(env[100:-100] - 1).max() <= 0.02


@pytest.mark.parametrize("a", [0.1, 2.5, 40.0])
def test_envelope_linear_in_amplitude(a):
    t = np.arange(1000) / FS
    env = analytic_envelope(a * np.cos(2 * np.pi * 10 * t))
    np.testing.assert_allclose(env[100:-100], a, rtol=0.02)


def test_envelope_am_signal():
    t = np.arange(2000) / FS
    mod = 1 + 0.5 * np.cos(2 * np.pi * 1 * t)
    env = analytic_envelope(mod * np.cos(2 * np.pi * 10 * t))
    core = slice(200, -200)
    assert np.sqrt(np.mean((env[core] - mod[core]) ** 2)) <= 0.03


@pytest.mark.parametrize("n", [4, 5, 64, 101])
def test_envelope_agrees_with_scipy_hilbert(n):
    from scipy.signal import hilbert

    x = np.random.default_rng(n).normal(size=n)
    np.testing.assert_allclose(analytic_envelope(x), np.abs(hilbert(x)), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(4, 200), elements=st.floats(-1e6, 1e6)))
def test_envelope_non_negative(x):
    assert np.all(analytic_envelope(x) >= 0)


def test_envelope_too_short():
    with pytest.raises(SignalTooShort):
        analytic_envelope([1.0, 2.0, 3.0])


# -- slice_windows -----------------------------------------------------------


def test_slice_windows_count():
    r = rec(np.zeros((2, 5000)))
    wins = slice_windows(r, WindowPlan(1.0, 0.5))
    assert len(wins) == 19
    assert all(w.n_samples == 500 for w in wins)


def test_slice_windows_exact_fit_and_too_long():
    assert len(slice_windows(rec(np.zeros((2, 500))), WindowPlan(1.0, 0.5))) == 1
    with pytest.raises(WindowLongerThanSignal):
        slice_windows(rec(np.zeros((2, 450))), WindowPlan(1.0, 0.5))


@settings(max_examples=50, deadline=None)
@given(st.integers(100, 3000), st.integers(10, 100), st.integers(1, 100))
def test_slice_windows_progression(n, length, stride):
    fs = 100.0
    r = rec(np.arange(2 * n, dtype=float).reshape(2, n), fs=fs)
    plan = WindowPlan(length / fs, stride / fs)
    if length > n:
        with pytest.raises(WindowLongerThanSignal):
            window_starts(r, plan)
        return
    starts = window_starts(r, plan)
    assert starts == [k * stride for k in range(len(starts))]
    assert len(starts) == (n - length) // stride + 1
    for s, w in zip(starts, slice_windows(r, plan)):
        assert w.n_samples == length
        assert w.samples[0, 0] == s


# -- synth_coupled -----------------------------------------------------------


def test_synth_independent_channels():
    r = synth_coupled(6, 10.0, FS, [], 1.0, seed=3)
    c = np.corrcoef(r.samples)
    assert np.abs(c[np.triu_indices(6, 1)]).max() <= 0.15


def test_synth_lagged_copy():
    r = synth_coupled(2, 10.0, FS, [(0, 1, 1.0, 1)], 0.01, seed=4)
    x, y = r.samples
    assert np.corrcoef(x[:-1], y[1:])[0, 1] >= 0.99


def test_synth_deterministic():
    edges = [(0, 1, 0.8, 2), (1, 2, 1.0, 1)]
    a = synth_coupled(3, 2.0, FS, edges, 0.1, seed=9).samples
    b = synth_coupled(3, 2.0, FS, edges, 0.1, seed=9).samples
    assert a.tobytes() == b.tobytes()


def test_synth_rejects_cycles_and_bad_lags():
    with pytest.raises(CyclicCouplingSpec):
        synth_coupled(3, 1.0, FS, [(0, 1, 1, 1), (1, 2, 1, 1), (2, 0, 1, 1)], 0.1, 0)
    with pytest.raises(CyclicCouplingSpec):
        synth_coupled(2, 1.0, FS, [(0, 1, 1, 0)], 0.1, 0)
