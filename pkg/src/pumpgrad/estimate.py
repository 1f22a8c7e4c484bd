"""Graduation-probability curves and descriptive statistics.

A token is *eligible* at level ``v`` if its SOL reserve strictly exceeds ``v``
at some point and the conditioning predicate holds when evaluated on the
events up to and including that first crossing. Nothing after the crossing is
consulted, except for the ``min_time`` outcome filter, which restricts both
numerator and denominator to tokens that did not graduate within ``t_min``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .curve import DEFAULT_PARAMS, CurveParams
from .ingest import TokenTrajectory, TradeEvent, TxType
from .units import LAMPORTS_PER_SOL, sol_to_lamports

Trajectories = Union[Mapping[str, TokenTrajectory], Iterable[TokenTrajectory]]


class EstimationError(ValueError):
    pass


def as_trajectory_list(trajs: Trajectories) -> list[TokenTrajectory]:
    if isinstance(trajs, Mapping):
        return list(trajs.values())
    return list(trajs)


# -- time windows -----------------------------------------------------------

def _parse_instant(text: str) -> float:
    text = text.strip()
    try:
        return float(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def _format_instant(ts: float) -> str:
    if math.isinf(ts):
        return "inf" if ts > 0 else "-inf"
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Window:
    """Half-open UTC interval ``[start, end)`` in unix seconds."""

    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("window start must precede its end")

    @classmethod
    def parse(cls, spec: str) -> "Window":
        """Parse ``<iso>/<iso>``; either side may be a unix timestamp."""
        try:
            lo, hi = spec.split("/")
        except ValueError:
            raise ValueError(f"window must look like START/END, got {spec!r}")
        return cls(_parse_instant(lo), _parse_instant(hi))

    def contains(self, ts: float) -> bool:
        return self.start <= ts < self.end

    def overlaps(self, other: "Window") -> bool:
        return self.start < other.end and other.start < self.end

    def __str__(self) -> str:
        return f"{_format_instant(self.start)}/{_format_instant(self.end)}"


def two_week_split(start: float) -> tuple[Window, Window]:
    """Consecutive two-week windows starting at ``start``: (identification, evaluation)."""
    fortnight = 14 * 86400.0
    return Window(start, start + fortnight), Window(start + fortnight, start + 2 * fortnight)


def tokens_in_window(trajs: Trajectories, window: Optional[Window]) -> list[TokenTrajectory]:
    items = as_trajectory_list(trajs)
    if window is None:
        return items
    return [t for t in items if window.contains(t.t_create)]


# -- grid and conditions ----------------------------------------------------

@dataclass(frozen=True)
class Grid:
    levels: tuple[float, ...]

    def __post_init__(self):
        if not self.levels:
            raise EstimationError("empty grid")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise EstimationError("grid levels must be strictly increasing")

    @classmethod
    def default(cls, params: CurveParams = DEFAULT_PARAMS) -> "Grid":
        lo, hi = int(params.x_synt0), int(params.x_grad_total)
        return cls(tuple(float(v) for v in range(lo + 1, hi + 1)))

    @classmethod
    def from_spec(cls, spec: str) -> "Grid":
        """``start:stop:step`` with ``stop`` included when it lands on the grid."""
        try:
            start, stop, step = (Decimal(p) for p in spec.split(":"))
        except (ValueError, ArithmeticError):
            raise EstimationError(f"grid must look like start:stop:step, got {spec!r}")
        if step <= 0:
            raise EstimationError("grid step must be positive")
        levels = []
        v = start
        while v <= stop:
            levels.append(float(v))
            v += step
        return cls(tuple(levels))

    def validate(self, params: CurveParams = DEFAULT_PARAMS) -> None:
        lo, hi = float(params.x_synt0), float(params.x_grad_total)
        if not (self.levels[0] > lo and self.levels[-1] <= hi):
            raise EstimationError(f"grid levels must lie in ({lo:g}, {hi:g}]")

    def lamports(self) -> np.ndarray:
        return np.array([sol_to_lamports(Decimal(repr(v)), exact=False) for v in self.levels],
                        dtype=np.int64)


class ConditionKind(str, Enum):
    NONE = "none"
    MIN_TIME = "min_time"
    NONBOT_SHARE = "nonbot_share"
    MAX_TRADES = "max_trades"
    WALLET_SET = "wallet_set"
    CREATOR_SET = "creator_set"


@dataclass(frozen=True)
class Condition:
    kind: ConditionKind = ConditionKind.NONE
    t_min: float = 0.0
    theta: float = 0.0
    n_max: Optional[int] = None
    n_min: Optional[int] = None
    members: frozenset = field(default_factory=frozenset)
    label: str = ""

    def __post_init__(self):
        k = self.kind
        if k is ConditionKind.MIN_TIME and self.t_min < 0:
            raise EstimationError("t_min must be non-negative")
        if k is ConditionKind.NONBOT_SHARE and not 0.0 <= self.theta <= 1.0:
            raise EstimationError("theta must lie in [0, 1]")
        if k is ConditionKind.MAX_TRADES:
            if self.n_max is None and self.n_min is None:
                raise EstimationError("max_trades needs N_max and/or N_min")
            if self.n_max is not None and self.n_min is not None and self.n_min > self.n_max:
                raise EstimationError("N_min must not exceed N_max")
        if k in (ConditionKind.WALLET_SET, ConditionKind.CREATOR_SET) and not self.members:
            raise EstimationError(f"{k.value} conditioning needs a non-empty set")

    @classmethod
    def none(cls) -> "Condition":
        return cls()

    @classmethod
    def min_time(cls, t_min: float) -> "Condition":
        return cls(ConditionKind.MIN_TIME, t_min=t_min)

    @classmethod
    def nonbot_share(cls, theta: float) -> "Condition":
        return cls(ConditionKind.NONBOT_SHARE, theta=theta)

    @classmethod
    def max_trades(cls, n_max: Optional[int] = None, n_min: Optional[int] = None) -> "Condition":
        return cls(ConditionKind.MAX_TRADES, n_max=n_max, n_min=n_min)

    @classmethod
    def wallet_set(cls, wallets: Iterable[str], label: str = "") -> "Condition":
        return cls(ConditionKind.WALLET_SET, members=frozenset(wallets), label=label)

    @classmethod
    def creator_set(cls, creators: Iterable[str], label: str = "") -> "Condition":
        return cls(ConditionKind.CREATOR_SET, members=frozenset(creators), label=label)

    def describe(self) -> str:
        k = self.kind
        if self.label:
            return self.label
        if k is ConditionKind.NONE:
            return "none"
        if k is ConditionKind.MIN_TIME:
            return f"mintime={self.t_min:g}"
        if k is ConditionKind.NONBOT_SHARE:
            return f"nonbot={self.theta:g}"
        if k is ConditionKind.MAX_TRADES:
            parts = [] if self.n_max is None else [f"maxtrades={self.n_max}"]
            if self.n_min is not None:
                parts.append(f"min={self.n_min}")
            return ",".join(parts) if self.n_max is not None else f"mintrades={self.n_min}"
        prefix = "wallets" if k is ConditionKind.WALLET_SET else "creators"
        return f"{prefix}[{len(self.members)}]"


# -- crossings and eligibility ----------------------------------------------

def first_crossing(traj: TokenTrajectory, level: float) -> Optional[int]:
    """Index of the first event whose post-trade SOL reserve strictly exceeds ``level``."""
    target = sol_to_lamports(Decimal(repr(level)), exact=False)
    idx = int(np.searchsorted(traj.running_max, target, side="right"))
    return idx if idx < len(traj.events) else None


def _crossings(traj: TokenTrajectory, levels: np.ndarray) -> np.ndarray:
    """First-crossing index per level, -1 where the level is never exceeded."""
    idx = np.searchsorted(traj.running_max, levels, side="right")
    idx[idx >= len(traj.events)] = -1
    return idx


def _first_member_trade(traj: TokenTrajectory, members: frozenset) -> int:
    for i, ev in enumerate(traj.events):
        if ev.tx_type is not TxType.CREATE and ev.trader in members:
            return i
    return len(traj.events)


def _condition_mask(traj: TokenTrajectory, idx: np.ndarray, cond: Condition) -> np.ndarray:
    crossed = idx >= 0
    k = cond.kind
    if k is ConditionKind.NONE:
        return crossed
    if k is ConditionKind.MIN_TIME:
        fast = traj.graduated and traj.t_grad <= cond.t_min
        return crossed & (not fast)
    if k is ConditionKind.CREATOR_SET:
        return crossed & (traj.creator in cond.members)
    safe = np.where(crossed, idx, 0)
    if k is ConditionKind.WALLET_SET:
        return crossed & (_first_member_trade(traj, cond.members) <= safe)
    trades = np.cumsum(traj.is_trade)[safe]
    if k is ConditionKind.MAX_TRADES:
        ok = crossed.copy()
        if cond.n_max is not None:
            ok &= trades <= cond.n_max
        if cond.n_min is not None:
            ok &= trades >= cond.n_min
        return ok
    if k is ConditionKind.NONBOT_SHARE:
        nonbot = np.cumsum(traj.is_trade & (traj.is_bot == 0))[safe]
        share = np.divide(nonbot, trades, out=np.zeros(len(safe)), where=trades > 0)
        return crossed & (trades > 0) & (share > cond.theta)
    raise EstimationError(f"unsupported condition {k}")


def eligibility(traj: TokenTrajectory, grid: Grid, condition: Condition) -> np.ndarray:
    """Boolean eligibility of one token at every grid level."""
    return _condition_mask(traj, _crossings(traj, grid.lamports()), condition)


def conditioning_value(traj: TokenTrajectory, level: float, condition: Condition):
    """The conditioning variable at the first crossing of ``level``.

    Non-bot share, trade count, or set-membership flag, computed from
    ``events[:crossing + 1]`` only. ``None`` when the level is never crossed.
    """
    idx = first_crossing(traj, level)
    if idx is None:
        return None
    seen = [ev for ev in traj.events[: idx + 1] if ev.tx_type is not TxType.CREATE]
    k = condition.kind
    if k is ConditionKind.NONBOT_SHARE:
        return sum(1 for ev in seen if not ev.is_bot) / len(seen) if seen else None
    if k is ConditionKind.MAX_TRADES:
        return len(seen)
    if k is ConditionKind.WALLET_SET:
        return any(ev.trader in condition.members for ev in seen)
    if k is ConditionKind.CREATOR_SET:
        return traj.creator in condition.members
    return True


@dataclass(frozen=True)
class GraduationCurveEstimate:
    levels: tuple[float, ...]
    n_eligible: np.ndarray
    n_graduated: np.ndarray
    condition: Condition
    dataset_id: str = ""

    @property
    def p(self) -> np.ndarray:
        """Graduation frequency per level; NaN where nothing is eligible."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n_eligible > 0, self.n_graduated / np.maximum(self.n_eligible, 1),
                            np.nan)

    @property
    def stderr(self) -> np.ndarray:
        p = self.p
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(p * (1 - p) / self.n_eligible)

    def p_at(self, level: float) -> Optional[float]:
        i = self.levels.index(level)
        return None if self.n_eligible[i] == 0 else float(self.p[i])


def estimate_curve(trajs: Trajectories, grid: Grid, condition: Condition = Condition(),
                   *, dataset_id: str = "") -> GraduationCurveEstimate:
    levels = grid.lamports()
    n_elig = np.zeros(len(levels), dtype=np.int64)
    n_grad = np.zeros(len(levels), dtype=np.int64)
    for traj in as_trajectory_list(trajs):
        mask = _condition_mask(traj, _crossings(traj, levels), condition)
        n_elig += mask
        if traj.graduated:
            n_grad += mask
    return GraduationCurveEstimate(grid.levels, n_elig, n_grad, condition, dataset_id)


@dataclass(frozen=True)
class BinnedEstimate:
    lower: np.ndarray  # SOL
    upper: np.ndarray
    n_entered: np.ndarray
    n_graduated: np.ndarray

    @property
    def p(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.n_entered > 0, self.n_graduated / np.maximum(self.n_entered, 1),
                            np.nan)


def estimate_binned(trajs: Trajectories, bin_width: float = 5.0,
                    params: CurveParams = DEFAULT_PARAMS) -> BinnedEstimate:
    """Graduation frequency among tokens whose trajectory enters each bin
    ``[lo, lo + bin_width)`` between the initial reserve and graduation.

    Reserves move continuously along the curve, so a token enters every bin
    whose lower edge it reaches.
    """
    if not bin_width > 0:
        raise EstimationError("bin_width must be positive")
    lo, hi = float(params.x_synt0), float(params.x_grad_total)
    n_bins = int(math.ceil((hi - lo) / bin_width - 1e-12))
    lower = lo + bin_width * np.arange(n_bins)
    upper = np.minimum(lower + bin_width, hi)
    edges = np.array([sol_to_lamports(Decimal(repr(float(v))), exact=False) for v in lower])
    items = as_trajectory_list(trajs)
    max_v = np.array([t.max_v_sol for t in items], dtype=np.int64)
    grad = np.array([t.graduated for t in items], dtype=bool)
    entered = max_v[:, None] >= edges[None, :] if items else np.zeros((0, n_bins), dtype=bool)
    return BinnedEstimate(lower, upper, entered.sum(axis=0),
                          (entered & grad[:, None]).sum(axis=0))


# -- predictive sets --------------------------------------------------------

@dataclass(frozen=True)
class LedgerEntry:
    wallet: str
    pnl_lamports: int
    n_buy: int
    n_sell: int

    @property
    def n_trades(self) -> int:
        return self.n_buy + self.n_sell

    @property
    def pnl_sol(self) -> float:
        return self.pnl_lamports / LAMPORTS_PER_SOL


def trader_ledger(events: Iterable[TradeEvent],
                  window: Optional[Window] = None) -> dict[str, LedgerEntry]:
    """Cash-flow PnL per wallet: SOL received from sells minus SOL spent on buys,
    using the reported ``sol_amount`` and ignoring unsold inventory."""
    acc: dict[str, list[int]] = {}
    for ev in events:
        if ev.tx_type is TxType.CREATE:
            continue
        if window is not None and not window.contains(ev.timestamp):
            continue
        row = acc.setdefault(ev.trader, [0, 0, 0])
        if ev.tx_type is TxType.BUY:
            row[0] -= ev.sol_amount
            row[1] += 1
        else:
            row[0] += ev.sol_amount
            row[2] += 1
    return {w: LedgerEntry(w, r[0], r[1], r[2]) for w, r in acc.items()}


@dataclass(frozen=True)
class TopTraders:
    wallets: tuple[str, ...]  # ranked, best first
    ledger: dict
    requested: int
    insufficient: bool  # fewer wallets than requested were available


def identify_top_traders(events: Iterable[TradeEvent], k: int,
                         window: Optional[Window] = None) -> TopTraders:
    if k < 1:
        raise EstimationError("k must be positive")
    ledger = trader_ledger(events, window)
    ranked = sorted(ledger.values(), key=lambda e: (-e.pnl_lamports, e.wallet))
    return TopTraders(tuple(e.wallet for e in ranked[:k]), ledger, k, len(ranked) < k)


@dataclass(frozen=True)
class CreatorStats:
    creator: str
    n_tot: int
    n_grad: int

    @property
    def ratio(self) -> float:
        return self.n_grad / self.n_tot if self.n_tot else 0.0


def creator_stats(trajs: Trajectories, window: Optional[Window] = None,
                  min_trades_per_token: int = 10) -> dict[str, CreatorStats]:
    """Tokens created and graduated per creator inside ``window``.

    A graduation counts only if it took at least ``min_trades_per_token``
    swaps and happened before the window closed.
    """
    acc: dict[str, list[int]] = {}
    for t in tokens_in_window(trajs, window):
        row = acc.setdefault(t.creator, [0, 0])
        row[0] += 1
        if (t.graduated and t.grad_steps >= min_trades_per_token
                and (window is None or t.t_create + t.t_grad < window.end)):
            row[1] += 1
    return {c: CreatorStats(c, r[0], r[1]) for c, r in acc.items()}


@dataclass(frozen=True)
class TopCreators:
    creators: tuple[str, ...]
    stats: dict


def identify_top_creators(trajs: Trajectories, k: int, window: Optional[Window] = None,
                          min_tokens: int = 50, min_trades_per_token: int = 10,
                          min_ratio: float = 0.001) -> TopCreators:
    stats = creator_stats(trajs, window, min_trades_per_token)
    passing = [s for s in stats.values() if s.n_tot >= min_tokens and s.ratio > min_ratio]
    passing.sort(key=lambda s: (-s.ratio, -s.n_grad, s.creator))
    return TopCreators(tuple(s.creator for s in passing[:k]), stats)


# -- descriptive statistics -------------------------------------------------

def survival_counts(trajs: Trajectories, levels: Sequence[float]) -> np.ndarray:
    """Number of tokens whose maximum SOL reserve reaches each level."""
    items = as_trajectory_list(trajs)
    max_v = np.sort(np.array([t.max_v_sol for t in items], dtype=np.int64))
    lam = np.array([sol_to_lamports(Decimal(repr(float(v))), exact=False) for v in levels],
                   dtype=np.int64)
    return len(max_v) - np.searchsorted(max_v, lam, side="left")


@dataclass(frozen=True)
class GraduationStats:
    n_graduated: int
    median_steps: Optional[float]
    median_minutes: Optional[float]
    steps: np.ndarray
    minutes: np.ndarray
    step_edges: np.ndarray
    step_counts: np.ndarray
    time_edges: np.ndarray  # minutes
    time_counts: np.ndarray
    joint_counts: np.ndarray  # rows: time bins, columns: step bins

    @property
    def empty(self) -> bool:
        return self.n_graduated == 0


def graduation_step_time_stats(trajs: Trajectories, time_bin_minutes: float = 1.0,
                               step_bin_width: int = 50) -> GraduationStats:
    grads = [t for t in as_trajectory_list(trajs) if t.graduated]
    steps = np.array([t.grad_steps for t in grads], dtype=np.int64)
    minutes = np.array([t.t_grad / 60.0 for t in grads], dtype=float)
    if not grads:
        empty = np.zeros(0)
        return GraduationStats(0, None, None, steps, minutes, empty, empty.astype(np.int64),
                               empty, empty.astype(np.int64), np.zeros((0, 0), dtype=np.int64))
    step_edges = np.arange(0, steps.max() + step_bin_width + 1, step_bin_width)
    n_t = int(math.floor(minutes.max() / time_bin_minutes)) + 1
    time_edges = time_bin_minutes * np.arange(n_t + 1)
    step_counts, _ = np.histogram(steps, bins=step_edges)
    time_counts, _ = np.histogram(minutes, bins=time_edges)
    joint, _, _ = np.histogram2d(minutes, steps, bins=[time_edges, step_edges])
    return GraduationStats(
        n_graduated=len(grads),
        median_steps=float(np.median(steps)),
        median_minutes=float(np.median(minutes)),
        steps=steps,
        minutes=minutes,
        step_edges=step_edges,
        step_counts=step_counts,
        time_edges=time_edges,
        time_counts=time_counts,
        joint_counts=joint.astype(np.int64),
    )


@dataclass(frozen=True)
class NetFlowSeries:
    period_start: np.ndarray  # unix seconds
    cumulative_sol: np.ndarray


def net_flow_series(events: Iterable[TradeEvent], period: float = 86400.0) -> NetFlowSeries:
    """Cumulative signed SOL (buys in, sells out) sampled at the end of each period."""
    per_bucket: dict[int, int] = {}
    for ev in events:
        if ev.tx_type is TxType.CREATE:
            continue
        b = int(ev.timestamp // period)
        signed = ev.sol_amount if ev.tx_type is TxType.BUY else -ev.sol_amount
        per_bucket[b] = per_bucket.get(b, 0) + signed
    if not per_bucket:
        return NetFlowSeries(np.zeros(0), np.zeros(0))
    first, last = min(per_bucket), max(per_bucket)
    starts, cum, total = [], [], 0
    for b in range(first, last + 1):
        total += per_bucket.get(b, 0)
        starts.append(b * period)
        cum.append(total / LAMPORTS_PER_SOL)
    return NetFlowSeries(np.array(starts), np.array(cum))


def mean_nonbot_share_by_level(trajs: Trajectories, grid: Grid) -> np.ndarray:
    """Mean over crossing tokens of the non-bot trade share at first crossing."""
    levels = grid.lamports()
    total = np.zeros(len(levels))
    count = np.zeros(len(levels), dtype=np.int64)
    for traj in as_trajectory_list(trajs):
        idx = _crossings(traj, levels)
        crossed = idx >= 0
        if not crossed.any():
            continue
        safe = np.where(crossed, idx, 0)
        trades = np.cumsum(traj.is_trade)[safe]
        nonbot = np.cumsum(traj.is_trade & (traj.is_bot == 0))[safe]
        ok = crossed & (trades > 0)
        total[ok] += nonbot[ok] / trades[ok]
        count += ok
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(count > 0, total / np.maximum(count, 1), np.nan)
