import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from heterorobust import _accel


@given(st.integers(0, 2 ** 31), st.integers(0, 3), st.integers(0, 10 ** 6))
def test_counter_uniform_routes_agree(seed, stream, i):
    keys = np.arange(50, dtype=np.int64) * 7919
    a = np.array([_accel.counter_uniform(seed, stream, i, int(k)) for k in keys])
    b = _accel.counter_uniform_np(seed, stream, i, keys)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < 1))


def test_counter_uniform_is_uniform():
    u = _accel.counter_uniform_np(3, 1, 0, np.arange(200000))
    counts = np.histogram(u, bins=10, range=(0, 1))[0]
    assert np.all(np.abs(counts / 20000 - 1) < 0.03)


def test_set_backend():
    prev = _accel.backend()
    try:
        _accel.set_backend("numpy")
        assert _accel.backend() == "numpy"
    finally:
        _accel.set_backend(prev)


def test_env_flag_disables_numba():
    code = "from heterorobust import _accel; print(_accel.backend())"
    env = dict(os.environ, HETEROROBUST_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.stdout.strip() == "numpy"


def test_benchmark_script_agrees(monkeypatch, capsys):
    import runpy
    from pathlib import Path
    script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    monkeypatch.setattr(sys, "argv", ["bench", "--n", "100", "--repeats", "1", "--samples", "50"])
    with pytest.raises(SystemExit) as e:
        runpy.run_path(str(script), run_name="__main__")
    assert e.value.code == 0
    assert "agreement OK" in capsys.readouterr().out
