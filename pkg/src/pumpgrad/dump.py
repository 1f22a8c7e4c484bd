"""Robust Shewhart-style dump detection on bonding-curve price paths.

Each token gets a baseline dispersion from its early log-returns (median and
Gaussian-consistent MAD). A return below ``-sigma_multiplier * sigma_mad``
is a violation, and each run of consecutive violations is one episode.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Optional, Sequence

import numpy as np

from .estimate import Trajectories, as_trajectory_list
from .ingest import TokenTrajectory, TxType
from .units import LAMPORTS_PER_SOL

MAD_TO_SIGMA = 1 / 0.67449


@dataclass(frozen=True)
class DumpConfig:
    sigma_multiplier: float = 4.0
    baseline_min: int = 30
    baseline_max: int = 200
    mad_consistency: float = MAD_TO_SIGMA
    guard_multiplier: float = 8.0  # provisional bound used to clean the baseline window
    merge_runs: bool = True  # consecutive violations form one episode
    centered: bool = False  # compare r - median rather than r with the limit

    def __post_init__(self):
        if not self.sigma_multiplier > 0:
            raise ValueError("sigma_multiplier must be positive")
        if not 0 < self.baseline_min <= self.baseline_max:
            raise ValueError("need 0 < baseline_min <= baseline_max")
        if not self.mad_consistency > 0 or not self.guard_multiplier > 0:
            raise ValueError("mad_consistency and guard_multiplier must be positive")


class BaselineError(ValueError):
    def __init__(self, status: "DetectionStatus", message: str):
        super().__init__(message)
        self.status = status


class DetectionStatus(str, Enum):
    OK = "ok"
    TOO_SHORT = "too_short"
    DEGENERATE = "degenerate"


class EpisodeClass(str, Enum):
    ONE_WALLET = "one_wallet"
    MULTI_WALLET = "multi_wallet"


def log_returns(prices: Sequence[float]) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("need at least two prices")
    if not np.all(p > 0):
        raise ValueError("prices must be positive")
    return np.log(p[1:] / p[:-1])


@dataclass(frozen=True)
class Baseline:
    median: float
    sigma_mad: float
    n_used: int  # returns kept after the guard
    n_window: int


def robust_baseline(window: Sequence[float], config: DumpConfig = DumpConfig()) -> Baseline:
    """Median and ``mad_consistency * MAD`` of ``window``."""
    r = np.asarray(window, dtype=float)
    if r.size < config.baseline_min:
        raise BaselineError(DetectionStatus.TOO_SHORT,
                            f"baseline needs {config.baseline_min} returns, got {r.size}")
    m = float(np.median(r))
    mad = float(np.median(np.abs(r - m)))
    return Baseline(m, config.mad_consistency * mad, r.size, r.size)


def estimate_baseline(returns: Sequence[float], config: DumpConfig = DumpConfig()) -> Baseline:
    """Baseline on the first ``min(baseline_max, N)`` returns.

    Returns further than ``guard_multiplier`` provisional sigmas from the
    provisional median (both taken over the first ``baseline_min`` returns)
    are left out so that an early crash does not inflate the scale.
    """
    r = np.asarray(returns, dtype=float)
    first = robust_baseline(r[: config.baseline_min], config)
    window = r[: config.baseline_max]
    if first.sigma_mad > 0:
        keep = np.abs(window - first.median) <= config.guard_multiplier * first.sigma_mad
        window_kept = window[keep]
    else:
        window_kept = window
    m = float(np.median(window_kept))
    sigma = config.mad_consistency * float(np.median(np.abs(window_kept - m)))
    if sigma == 0:
        raise BaselineError(DetectionStatus.DEGENERATE, "baseline MAD is zero")
    return Baseline(m, sigma, int(window_kept.size), int(window.size))


def violations(returns: Sequence[float], baseline: Baseline,
               config: DumpConfig = DumpConfig()) -> np.ndarray:
    r = np.asarray(returns, dtype=float)
    if config.centered:
        r = r - baseline.median
    return r < -config.sigma_multiplier * baseline.sigma_mad


def violation_runs(flags: np.ndarray, merge: bool = True) -> list[tuple[int, int]]:
    """Half-open index ranges of violating returns."""
    idx = np.flatnonzero(flags)
    if not merge:
        return [(int(i), int(i) + 1) for i in idx]
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[breaks + 1]))
    ends = np.concatenate((idx[breaks], [idx[-1]])) + 1
    return [(int(a), int(b)) for a, b in zip(starts, ends)]


def scan_returns(returns: Sequence[float],
                 config: DumpConfig = DumpConfig()) -> tuple[Baseline, list[tuple[int, int]]]:
    """Baseline plus the violating runs over the whole return series.

    The baseline is frozen once estimated; the series is scanned from its
    first return so crashes inside the baseline window are still reported.
    """
    baseline = estimate_baseline(returns, config)
    return baseline, violation_runs(violations(returns, baseline, config), config.merge_runs)


@dataclass(frozen=True)
class DumpEpisode:
    mint: str
    trigger_index: int  # event index of the first violating trade
    trigger_return: float
    drop_pct: float
    v_sol_at_trigger: float  # SOL reserve just before the trigger trade
    seller_wallets: frozenset
    cls: EpisodeClass
    n_events: int
    sol_volume: float  # SOL paid out to sellers during the run

    @property
    def n_sellers(self) -> int:
        return len(self.seller_wallets)


@dataclass(frozen=True)
class DumpDetection:
    mint: str
    status: DetectionStatus
    graduated: bool
    n_returns: int
    baseline: Optional[Baseline] = None
    episodes: tuple[DumpEpisode, ...] = ()

    @property
    def first_trigger(self) -> Optional[int]:
        return self.episodes[0].trigger_index if self.episodes else None


def price_path(traj: TokenTrajectory) -> tuple[np.ndarray, np.ndarray]:
    """Marginal prices of the on-curve events and their event indices."""
    pos = np.array([i for i, ev in enumerate(traj.events) if ev.in_bonding_curve and ev.v_tok > 0],
                   dtype=np.int64)
    x = np.array([traj.events[i].v_sol for i in pos], dtype=float)
    y = np.array([traj.events[i].v_tok for i in pos], dtype=float)
    return x / y, pos


def detect_dumps(traj: TokenTrajectory, config: DumpConfig = DumpConfig()) -> DumpDetection:
    prices, pos = price_path(traj)
    n_ret = max(prices.size - 1, 0)
    if n_ret < config.baseline_min + 1:
        return DumpDetection(traj.mint, DetectionStatus.TOO_SHORT, traj.graduated, n_ret)
    r = log_returns(prices)
    try:
        baseline, runs = scan_returns(r, config)
    except BaselineError as exc:
        return DumpDetection(traj.mint, exc.status, traj.graduated, n_ret)
    episodes = []
    for a, b in runs:
        p_before = prices[a]
        p_min = float(prices[a + 1: b + 1].min())
        sellers = set()
        volume = 0
        for j in range(a, b):
            ev = traj.events[pos[j + 1]]
            if ev.tx_type is TxType.SELL:
                sellers.add(ev.trader)
                volume += ev.sol_amount
        episodes.append(DumpEpisode(
            mint=traj.mint,
            trigger_index=int(pos[a + 1]),
            trigger_return=float(r[a]),
            drop_pct=(p_before - p_min) / p_before * 100.0,
            v_sol_at_trigger=traj.events[pos[a]].v_sol / LAMPORTS_PER_SOL,
            seller_wallets=frozenset(sellers),
            cls=EpisodeClass.ONE_WALLET if len(sellers) == 1 else EpisodeClass.MULTI_WALLET,
            n_events=b - a,
            sol_volume=volume / LAMPORTS_PER_SOL,
        ))
    return DumpDetection(traj.mint, DetectionStatus.OK, traj.graduated, n_ret, baseline,
                         tuple(episodes))


def scan_dataset(trajs: Trajectories, config: DumpConfig = DumpConfig()) -> list[DumpDetection]:
    return [detect_dumps(t, config) for t in as_trajectory_list(trajs)]


def _describe(values: Sequence[float]) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0}
    q = np.quantile(v, [0.1, 0.25, 0.5, 0.75, 0.9])
    return {"n": int(v.size), "mean": float(v.mean()), "p10": float(q[0]), "p25": float(q[1]),
            "median": float(q[2]), "p75": float(q[3]), "p90": float(q[4])}


@dataclass(frozen=True)
class DumpSummary:
    n_tokens: int  # tokens with enough swaps for a baseline (ok or degenerate)
    n_scanned: int  # tokens with a usable baseline
    n_too_short: int
    n_degenerate: int
    n_with_dump: int
    n_with_dump_graduated: int
    coverage: np.ndarray  # coverage[k-1] = share of tokens with >= k episodes
    by_class: dict  # class -> {"v_sol_at_trigger", "drop_pct", "sol_volume"} arrays
    episodes_per_wallet: dict  # class -> Counter over seller wallets

    @property
    def fraction_with_dump(self) -> Optional[float]:
        return self.n_with_dump / self.n_tokens if self.n_tokens else None

    @property
    def graduated_fraction(self) -> Optional[float]:
        return self.n_with_dump_graduated / self.n_with_dump if self.n_with_dump else None

    def to_json(self) -> dict:
        classes = {}
        for cls, arrays in self.by_class.items():
            per_wallet = list(self.episodes_per_wallet[cls].values())
            classes[cls.value] = {
                "n_episodes": int(len(arrays["drop_pct"])),
                **{name: _describe(vals) for name, vals in arrays.items()},
                "episodes_per_wallet": _describe(per_wallet),
            }
        return {
            "n_tokens": self.n_tokens,
            "n_scanned": self.n_scanned,
            "n_too_short": self.n_too_short,
            "n_degenerate": self.n_degenerate,
            "n_with_dump": self.n_with_dump,
            "fraction_with_dump": self.fraction_with_dump,
            "graduated_fraction_with_dump": self.graduated_fraction,
            "coverage": [float(c) for c in self.coverage],
            "classes": classes,
        }


def dump_summary(detections: Iterable[DumpDetection]) -> DumpSummary:
    dets = list(detections)
    too_short = sum(d.status is DetectionStatus.TOO_SHORT for d in dets)
    degenerate = sum(d.status is DetectionStatus.DEGENERATE for d in dets)
    counted = [d for d in dets if d.status is not DetectionStatus.TOO_SHORT]
    n_tokens = len(counted)
    n_eps = np.array([len(d.episodes) for d in counted], dtype=np.int64)
    max_k = int(n_eps.max()) if n_eps.size else 0
    coverage = (np.array([(n_eps >= k).mean() for k in range(1, max_k + 1)])
                if n_tokens else np.zeros(0))
    by_class = {c: {"v_sol_at_trigger": [], "drop_pct": [], "sol_volume": []} for c in EpisodeClass}
    per_wallet = {c: Counter() for c in EpisodeClass}
    for d in counted:
        for e in d.episodes:
            bucket = by_class[e.cls]
            bucket["v_sol_at_trigger"].append(e.v_sol_at_trigger)
            bucket["drop_pct"].append(e.drop_pct)
            bucket["sol_volume"].append(e.sol_volume)
            per_wallet[e.cls].update(e.seller_wallets)
    with_dump = [d for d in counted if d.episodes]
    return DumpSummary(
        n_tokens=n_tokens,
        n_scanned=n_tokens - degenerate,
        n_too_short=too_short,
        n_degenerate=degenerate,
        n_with_dump=len(with_dump),
        n_with_dump_graduated=sum(d.graduated for d in with_dump),
        coverage=coverage,
        by_class={c: {k: np.array(v) for k, v in arrays.items()} for c, arrays in by_class.items()},
        episodes_per_wallet=per_wallet,
    )


EPISODE_COLUMNS = ("mint", "trigger_index", "trigger_return", "drop_pct", "v_sol_at_trigger",
                   "class", "n_sellers")


def write_episodes_csv(detections: Iterable[DumpDetection], fh: IO[str]) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(EPISODE_COLUMNS)
    n = 0
    for d in detections:
        for e in d.episodes:
            w.writerow([e.mint, e.trigger_index, format(e.trigger_return, ".12g"),
                        format(e.drop_pct, ".12g"), format(e.v_sol_at_trigger, ".12g"),
                        e.cls.value, e.n_sellers])
            n += 1
    return n
