import numpy as np
import pytest

from tclcap.signals import (IngestError, ingest_signal, load_signal_csv,
                            resample_linear, synthetic_signal)


def test_synthetic_deterministic():
    a = synthetic_signal(200, 2.0, seed=5, amplitude_kw=1000.0)
    b = synthetic_signal(200, 2.0, seed=5, amplitude_kw=1000.0)
    assert np.array_equal(a, b)
    c = synthetic_signal(200, 2.0, seed=6, amplitude_kw=1000.0)
    assert not np.array_equal(a, c)


def test_synthetic_shape_and_scale():
    sig = synthetic_signal(500, 2.0, seed=1, amplitude_kw=2500.0)
    assert sig.shape == (500,)
    assert np.abs(sig).max() == pytest.approx(2500.0)
    assert sig[0] == 0.0  # deviation requests start from baseline
    assert abs(sig.mean()) < 0.1 * 2500.0


def test_file_ingest_and_mean_removal(tmp_path):
    path = tmp_path / "sig.csv"
    rows = ["timestamp,mw"] + [f"{t},{5.0}" for t in range(0, 20, 2)]
    path.write_text("\n".join(rows) + "\n")
    spec = {"source": "file", "path": str(path)}
    series = ingest_signal(spec, 10, 2.0, p_agg_kw=1e5)
    assert np.allclose(series, 5000.0)  # constant 5 MW in kW
    spec["force_zero_mean"] = True
    series0 = ingest_signal(spec, 10, 2.0, p_agg_kw=1e5)
    assert np.allclose(series0, 0.0)


def test_resampling_preserves_endpoints_and_interpolates():
    t = np.arange(0.0, 11.0)  # one-minute data
    vals = np.sin(t)
    out = resample_linear(t, vals, 2.0)
    assert out.size == 6
    assert out[0] == vals[0]
    assert out[-1] == vals[10]
    assert np.allclose(out, vals[::2])
    # a grid point between samples takes the linear blend
    t2 = np.array([0.0, 4.0])
    v2 = np.array([0.0, 8.0])
    mid = resample_linear(t2, v2, 2.0)
    assert np.allclose(mid, [0.0, 4.0, 8.0])


def test_iso_timestamps(tmp_path):
    path = tmp_path / "iso.csv"
    path.write_text("timestamp,mw\n"
                    "2023-06-01T00:00:00,1.0\n"
                    "2023-06-01T00:02:00,2.0\n"
                    "2023-06-01T00:04:00,3.0\n")
    times, values = load_signal_csv(path)
    assert np.allclose(np.diff(times), 2.0)
    assert np.allclose(values, [1000.0, 2000.0, 3000.0])


def test_ingest_errors(tmp_path):
    with pytest.raises(IngestError):
        ingest_signal({"source": "file", "path": str(tmp_path / "nope.csv")},
                      10, 2.0, 1e5)
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n0,1\n")
    with pytest.raises(IngestError):
        load_signal_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("timestamp,mw\n")
    with pytest.raises(IngestError):
        load_signal_csv(empty)
    short = tmp_path / "short.csv"
    short.write_text("timestamp,mw\n0,1\n2,1\n")
    with pytest.raises(IngestError):
        ingest_signal({"source": "file", "path": str(short)}, 100, 2.0, 1e5)
    with pytest.raises(IngestError):
        ingest_signal({"source": "martian"}, 10, 2.0, 1e5)
