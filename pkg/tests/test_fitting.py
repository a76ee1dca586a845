import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dimerlab.fitting import FitError, compare_models, fit_exponent, jackknife, latter_half
from dimerlab.rng import stream


def test_exact_power_law():
    t = np.geomspace(1, 1000, 20)
    est = fit_exponent(t, t**0.24, "power")
    assert est.value == pytest.approx(0.24, abs=1e-10)
    assert est.stderr < 1e-10
    assert est.r2 == pytest.approx(1.0)


def test_exact_log_law_prefers_log():
    t = np.geomspace(1, 1000, 20)
    y = 3 * np.log(t) + 1
    fits = compare_models(t, y, (t[1], t[-1]))
    assert fits["log"].r2 == pytest.approx(1.0, abs=1e-12)
    assert fits["log"].value == pytest.approx(3.0)
    assert fits["power"].r2 < fits["log"].r2
    assert fits["preferred"] == "log"


def test_noisy_power_law_coverage():
    # 5% multiplicative noise; the jackknife error should cover the truth about 95% of the time
    rng = stream(20, "fit-coverage")
    t = np.geomspace(1, 1000, 25)
    hits = 0
    for _ in range(100):
        y = t**0.24 * np.exp(0.05 * rng.standard_normal(t.size))
        est = fit_exponent(t, y, "power")
        hits += abs(est.value - 0.24) <= 2 * est.stderr
    assert hits >= 85


def test_degenerate_windows_raise():
    t = np.geomspace(1, 100, 10)
    with pytest.raises(FitError):
        fit_exponent(t, t, "power", (1, 2))
    with pytest.raises(FitError):
        fit_exponent(np.ones(6), np.arange(1, 7.0), "log")
    with pytest.raises(FitError):
        fit_exponent(t, -t, "power")


def test_latter_half_window():
    t = np.geomspace(1, 100, 20)
    lo, hi = latter_half(t)
    assert lo == t[10] and hi == t[-1]


def test_jackknife_of_mean_matches_standard_error():
    x = stream(1, "jk").normal(size=50)
    est, se = jackknife(x)
    assert est == pytest.approx(x.mean())
    assert se == pytest.approx(x.std(ddof=1) / np.sqrt(50))


@given(st.floats(0.05, 1.5), st.floats(0.1, 10.0))
def test_power_fit_recovers_any_exponent(b, a):
    t = np.geomspace(1, 500, 12)
    est = fit_exponent(t, a * t**b, "power")
    assert est.value == pytest.approx(b, abs=1e-9)
    assert 0.0 <= est.r2 <= 1.0
