"""Expected return of naive buy-and-hold entries and the breakeven parabola.

Prices on the curve scale with the square of the SOL reserve (``P = x**2/k``),
so buying at reserve ``v`` and selling at graduation multiplies the stake by
``(115/v)**2``. Fees and gas are ignored.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import IO, Iterable, Optional

import numpy as np

from .curve import DEFAULT_PARAMS, CurveParams
from .estimate import Trajectories, as_trajectory_list, first_crossing
from .units import LAMPORTS_PER_SOL

GRAD_LEVEL = 115


def _check_level(level, threshold) -> None:
    if not 0 < level <= threshold:
        raise ValueError(f"level must lie in (0, {threshold}], got {level}")


def breakeven_probability(level, threshold=GRAD_LEVEL):
    """Graduation probability at which entering at ``level`` has zero expected return."""
    _check_level(level, threshold)
    return level * level / (threshold * threshold)


def expected_return(p, level, threshold=GRAD_LEVEL):
    """``(threshold**2/level**2 - 1)*p - (1 - p)``.

    Works with floats, ``Fraction`` or ``Decimal`` alike.
    """
    if not 0 <= p <= 1:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    _check_level(level, threshold)
    return (threshold * threshold / (level * level) - 1) * p - (1 - p)


@dataclass(frozen=True)
class BreakevenPoint:
    level: float
    p_breakeven: float


def breakeven_curve(levels: Iterable[float], threshold=GRAD_LEVEL) -> list[BreakevenPoint]:
    return [BreakevenPoint(float(v), breakeven_probability(float(v), threshold)) for v in levels]


@dataclass(frozen=True)
class TokenReturn:
    mint: str
    entry_index: int
    entry_price: float  # SOL per token
    graduated: bool
    ret: float


@dataclass(frozen=True)
class BacktestResult:
    entry_level: float
    returns: tuple[TokenReturn, ...]

    @property
    def n(self) -> int:
        return len(self.returns)

    @property
    def n_graduated(self) -> int:
        return sum(r.graduated for r in self.returns)

    @property
    def p_hat(self) -> Optional[float]:
        return self.n_graduated / self.n if self.n else None

    @property
    def mean_return(self) -> Optional[float]:
        if not self.n:
            return None
        return float(np.mean([r.ret for r in self.returns]))


def backtest_buy_and_hold(trajs: Trajectories, entry_level: float,
                          params: CurveParams = DEFAULT_PARAMS,
                          price_mode: str = "level") -> BacktestResult:
    """Enter every token the first time its reserve exceeds ``entry_level``;
    exit at the graduation price or lose the stake.

    ``price_mode="level"`` prices the entry at ``entry_level**2/k`` so every
    entrant pays the same price. ``"crossing"`` uses the marginal price after
    the crossing trade, which sits slightly above the level.
    """
    x0, xg = float(params.x_synt0), float(params.x_grad_total)
    if not x0 < entry_level < xg:
        raise ValueError(f"entry level must lie in ({x0:g}, {xg:g})")
    if price_mode not in ("level", "crossing"):
        raise ValueError(f"unknown price_mode {price_mode!r}")
    k_sol_tokens = params.k / (LAMPORTS_PER_SOL * params.token_unit)
    exit_price = xg * xg / k_sol_tokens
    out = []
    for traj in as_trajectory_list(trajs):
        idx = first_crossing(traj, entry_level)
        if idx is None:
            continue
        if price_mode == "level":
            entry = entry_level * entry_level / k_sol_tokens
            win = xg * xg / (entry_level * entry_level) - 1
        else:
            x = traj.v_sol[idx] / LAMPORTS_PER_SOL
            entry = x * x / k_sol_tokens
            win = exit_price / entry - 1
        ret = win if traj.graduated else -1.0
        out.append(TokenReturn(traj.mint, idx, entry, traj.graduated, ret))
    return BacktestResult(entry_level, tuple(out))


def _fmt(x: float) -> str:
    return format(x, ".12g")


def write_breakeven_csv(points: Iterable[BreakevenPoint], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["level", "p_breakeven"])
    for pt in points:
        w.writerow([_fmt(pt.level), _fmt(pt.p_breakeven)])


def write_backtest_csv(result: BacktestResult, fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["mint", "entry_index", "entry_price", "graduated", "return"])
    for r in result.returns:
        w.writerow([r.mint, r.entry_index, _fmt(r.entry_price), int(r.graduated), _fmt(r.ret)])
