import io
import random
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from helpers import path
from pumpgrad.breakeven import (
    backtest_buy_and_hold,
    breakeven_curve,
    breakeven_probability,
    expected_return,
    write_backtest_csv,
    write_breakeven_csv,
)
from pumpgrad.ingest import make_trajectory


def sign(x):
    return (x > 0) - (x < 0)


def test_breakeven_probability_values():
    assert breakeven_probability(115) == 1
    assert breakeven_probability(57.5) == 0.25
    assert breakeven_probability(30) == pytest.approx(900 / 13225)
    assert breakeven_probability(30) == pytest.approx(0.06805, abs=1e-5)


def test_expected_return_examples():
    assert expected_return(0.5, 57.5) == 1.0
    for p in (0.0, 0.3, 1.0):
        assert expected_return(p, 115) == pytest.approx(p - 1)
    assert expected_return(Fraction(1), 115) == 0
    v = Fraction(173, 2)
    assert expected_return(breakeven_probability(v), v) == 0


def test_range_errors():
    for p, v in [(-0.1, 50), (1.1, 50), (0.5, 0), (0.5, 116)]:
        with pytest.raises(ValueError):
            expected_return(p, v)
    with pytest.raises(ValueError):
        breakeven_probability(-1)


@given(st.fractions(0, 1), st.fractions(Fraction(1, 100), 115))
def test_sign_identity_exact(p, v):
    assert sign(expected_return(p, v)) == sign(p - breakeven_probability(v))


def test_sign_identity_float_boundary():
    rng = random.Random(1)
    for _ in range(2000):
        v = rng.uniform(30.0, 115.0)
        assert abs(expected_return(breakeven_probability(v), v)) <= 1e-12


def test_breakeven_csv():
    buf = io.StringIO()
    write_breakeven_csv(breakeven_curve([57.5, 115]), buf)
    assert buf.getvalue() == "level,p_breakeven\n57.5,0.25\n115,1\n"


def _cohort(n_grad, n_fail):
    trajs = [make_trajectory(path(f"G{i}", [60, 115])) for i in range(n_grad)]
    trajs += [make_trajectory(path(f"F{i}", [60, 40])) for i in range(n_fail)]
    return trajs


def test_backtest_all_graduate():
    r = backtest_buy_and_hold(_cohort(5, 0), 57.5)
    assert [t.ret for t in r.returns] == [3.0] * 5 and r.mean_return == 3.0


def test_backtest_none_graduate():
    r = backtest_buy_and_hold(_cohort(0, 4), 50)
    assert r.mean_return == -1.0 and r.p_hat == 0


def test_backtest_at_breakeven_cohort():
    # entry 57.5 -> breakeven p = 1/4
    r = backtest_buy_and_hold(_cohort(25, 75), 57.5)
    assert r.p_hat == 0.25 and r.mean_return == pytest.approx(0.0, abs=1e-12)


def test_backtest_mean_identity(small_market):
    _, _, trajs = small_market
    for level in (35.0, 50.0, 80.0, 110.0):
        r = backtest_buy_and_hold(trajs, level)
        assert abs(r.mean_return - expected_return(r.p_hat, level)) <= 1e-12


def test_backtest_crossing_price_mode(small_market):
    _, _, trajs = small_market
    lvl = backtest_buy_and_hold(trajs, 60.0)
    crs = backtest_buy_and_hold(trajs, 60.0, price_mode="crossing")
    for a, b in zip(lvl.returns, crs.returns):
        assert b.entry_price > a.entry_price
        assert (b.ret <= a.ret) if a.graduated else (b.ret == a.ret == -1)


def test_backtest_errors_and_csv():
    with pytest.raises(ValueError):
        backtest_buy_and_hold([], 115)
    with pytest.raises(ValueError):
        backtest_buy_and_hold([], 50, price_mode="mid")
    assert backtest_buy_and_hold([], 50).mean_return is None
    buf = io.StringIO()
    write_backtest_csv(backtest_buy_and_hold(_cohort(1, 1), 57.5), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "mint,entry_index,entry_price,graduated,return"
    assert lines[1].endswith(",1,3") and lines[2].endswith(",0,-1")
