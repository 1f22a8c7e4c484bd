"""Seedable synthetic launchpad market.

Every token is driven through :mod:`pumpgrad.curve`, so reserves in the
emitted events satisfy the constant-product invariant by construction. Agent
behaviour is intentionally simple: it is test scaffolding, not a model of the
real market.

Randomness comes from numpy's PCG64 generator, seeded per token from
``(seed, token_index)`` so tokens can be generated independently.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .curve import DEFAULT_PARAMS, CurveParams, gross_for_net, init_curve, quote_buy, quote_sell
from .ingest import TradeEvent, TxType
from .units import LAMPORTS_PER_SOL, sol_to_lamports

PRNG_NAME = "numpy.random.PCG64"


@dataclass(frozen=True)
class SynthConfig:
    n_tokens: int = 1000
    seed: int = 0
    target_grad_rate: float = 0.006
    bot_share_alpha: float = 2.0  # per-token bot share ~ Beta(alpha, beta)
    bot_share_beta: float = 2.0
    trade_size_mu: float = -0.6  # log of gross SOL per buy
    trade_size_sigma: float = 1.0
    sell_probability: float = 0.3
    n_wallets: int = 20_000
    wallet_zipf: float = 1.4
    n_creators: int = 5_000
    creator_zipf: float = 1.6
    peak_alpha: float = 0.6  # non-graduating peak fraction ~ Beta(alpha, beta)
    peak_beta: float = 6.0
    dev_buy_probability: float = 0.5
    tail_sells_mean: float = 2.0
    dump_probability: float = 0.03
    dump_inventory_fraction: float = 0.9
    dump_max_wallets: int = 3
    dump_level_low: float = 50.0
    dump_level_high: float = 100.0
    dump_accumulate_sol: float = 3.0
    arrival_rate: float = 0.5  # trades per second
    start_time: float = 1_756_684_800.0  # 2025-09-01T00:00:00Z
    duration_days: float = 30.0
    max_trades_per_token: int = 20_000

    def __post_init__(self):
        for name in ("target_grad_rate", "sell_probability", "dev_buy_probability",
                     "dump_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.dump_inventory_fraction <= 1.0:
            raise ValueError("dump_inventory_fraction must lie in (0, 1]")
        for name in ("bot_share_alpha", "bot_share_beta", "peak_alpha", "peak_beta",
                     "arrival_rate", "trade_size_sigma", "duration_days", "wallet_zipf",
                     "creator_zipf"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.wallet_zipf <= 1 or self.creator_zipf <= 1:
            raise ValueError("zipf exponents must exceed 1")
        if self.n_tokens < 0 or self.n_wallets < 1 or self.n_creators < 1:
            raise ValueError("population sizes must be positive")
        if self.dump_max_wallets < 1:
            raise ValueError("dump_max_wallets must be at least 1")
        if not 30.0 < self.dump_level_low <= self.dump_level_high < 115.0:
            raise ValueError("dump levels must lie inside the curve range")


@dataclass(frozen=True)
class DumpInjection:
    level: float  # SOL reserve at which the inventory is sold
    inventory_fraction: float = 0.9
    n_wallets: int = 1
    accumulate_sol: float = 3.0  # gross SOL bought by each dumping wallet at launch

    def __post_init__(self):
        if not 0.0 < self.inventory_fraction <= 1.0:
            raise ValueError("inventory fraction exceeds creator holdings")
        if self.n_wallets < 1:
            raise ValueError("n_wallets must be at least 1")
        if self.accumulate_sol <= 0:
            raise ValueError("accumulate_sol must be positive")


def _signature(mint: str, i: int) -> str:
    return hashlib.blake2b(f"{mint}/{i}".encode(), digest_size=16).hexdigest()


class _Token:
    """Mutable per-token generator state."""

    def __init__(self, mint: str, creator: str, t0_ms: int, rate: float, bot_share: float,
                 rng: np.random.Generator, params: CurveParams):
        self.mint = mint
        self.creator = creator
        self.rng = rng
        self.rate = rate
        self.bot_share = bot_share
        self.t_ms = t0_ms
        self.state = init_curve(params)
        self.holdings: dict[str, int] = {}
        self.events: list[TradeEvent] = []
        self._emit(TxType.CREATE, creator, 0, 0, is_bot=0)

    def _tick(self) -> None:
        dt = self.rng.exponential(1.0 / self.rate)
        self.t_ms += max(1, int(round(dt * 1000)))

    def _emit(self, tx: TxType, trader: str, sol: int, tok: int, is_bot: int) -> None:
        self.events.append(TradeEvent(
            timestamp=self.t_ms / 1000.0,
            signature=_signature(self.mint, len(self.events)),
            mint=self.mint,
            coin_creator=self.creator,
            trader=trader,
            tx_type=tx,
            in_bonding_curve=True,
            v_sol=self.state.x_tot,
            v_tok=self.state.y_tot,
            sol_amount=sol,
            token_amount=tok,
            is_bot=is_bot,
        ))

    def bot_flag(self) -> int:
        return int(self.rng.random() < self.bot_share)

    def buy(self, trader: str, gross: int, is_bot: Optional[int] = None) -> bool:
        if self.state.graduated or gross <= 0:
            return False
        q = quote_buy(self.state, gross)
        if q.delta_x_net == 0 or q.delta_y == 0:
            return False
        self._tick()
        self.state = q.new_state
        self.holdings[trader] = self.holdings.get(trader, 0) + q.delta_y
        self._emit(TxType.BUY, trader, q.delta_x_net, q.delta_y,
                   self.bot_flag() if is_bot is None else is_bot)
        return True

    def sell(self, trader: str, amount: int, is_bot: Optional[int] = None) -> bool:
        amount = min(amount, self.holdings.get(trader, 0))
        if self.state.graduated or amount <= 0:
            return False
        q = quote_sell(self.state, amount)
        self._tick()
        self.state = q.new_state
        self.holdings[trader] -= amount
        if not self.holdings[trader]:
            del self.holdings[trader]
        self._emit(TxType.SELL, trader, q.delta_x_gross, amount,
                   self.bot_flag() if is_bot is None else is_bot)
        return True


class _Market:
    def __init__(self, config: SynthConfig, params: CurveParams):
        self.config = config
        self.params = params
        self.hard_cap = params.x_grad - LAMPORTS_PER_SOL // 100

    def wallet(self, rng) -> str:
        c = self.config
        return f"W{(int(rng.zipf(c.wallet_zipf)) - 1) % c.n_wallets:06d}"

    def trade_size(self, rng) -> int:
        c = self.config
        return max(1, int(LAMPORTS_PER_SOL * rng.lognormal(c.trade_size_mu, c.trade_size_sigma)))

    def random_sell(self, tok: _Token, exclude=()) -> bool:
        sellers = [w for w in tok.holdings if w not in exclude]
        if not sellers:
            return False
        w = sellers[int(tok.rng.integers(len(sellers)))]
        frac = tok.rng.uniform(0.2, 1.0)
        return tok.sell(w, max(1, int(tok.holdings[w] * frac)))

    def run_to(self, tok: _Token, target: int, graduate: bool, exclude=()) -> None:
        """Trade until the SOL reserve reaches ``target`` (or graduation)."""
        c = self.config
        limit = c.max_trades_per_token
        for _ in range(4 * limit):
            if len(tok.events) >= limit:
                return
            if graduate:
                if tok.state.graduated:
                    return
            elif tok.state.x_tot >= target:
                return
            if tok.rng.random() < c.sell_probability and self.random_sell(tok, exclude):
                continue
            gross = self.trade_size(tok.rng)
            if not graduate:
                room = self.hard_cap - tok.state.x_tot
                if room <= 0:
                    return
                gross = min(gross, gross_for_net(room, self.params))
            tok.buy(self.wallet(tok.rng), gross)

    def tail(self, tok: _Token, exclude=()) -> None:
        for _ in range(int(tok.rng.poisson(self.config.tail_sells_mean))):
            self.random_sell(tok, exclude)

    def token(self, idx: int) -> list[TradeEvent]:
        c = self.config
        rng = np.random.default_rng([c.seed, idx])
        mint = f"M{c.seed:x}x{idx:07d}"
        creator = f"C{(int(rng.zipf(c.creator_zipf)) - 1) % c.n_creators:05d}"
        t0_ms = int(round((c.start_time + rng.uniform(0.0, c.duration_days * 86400.0)) * 1000))
        rate = c.arrival_rate * rng.lognormal(0.0, 1.0)
        bot_share = rng.beta(c.bot_share_alpha, c.bot_share_beta)
        graduate = rng.random() < c.target_grad_rate
        dump = None
        if not graduate and rng.random() < c.dump_probability:
            dump = DumpInjection(
                level=float(rng.uniform(c.dump_level_low, c.dump_level_high)),
                inventory_fraction=c.dump_inventory_fraction,
                n_wallets=int(rng.integers(1, c.dump_max_wallets + 1)),
                accumulate_sol=c.dump_accumulate_sol,
            )
        tok = _Token(mint, creator, t0_ms, rate, bot_share, rng, self.params)
        if dump is not None:
            self._dump_path(tok, dump)
            return tok.events
        if rng.random() < c.dev_buy_probability:
            tok.buy(creator, self.trade_size(rng))
        if graduate:
            self.run_to(tok, self.params.x_grad, graduate=True)
            return tok.events
        x0, xg = self.params.x0, self.params.x_grad
        frac = rng.beta(c.peak_alpha, c.peak_beta)
        peak = min(x0 + int((xg - x0) * frac), self.hard_cap)
        self.run_to(tok, peak, graduate=False)
        self.tail(tok)
        return tok.events

    def _dump_path(self, tok: _Token, dump: DumpInjection) -> None:
        wallets = [tok.creator] + [f"{tok.creator}-alt{j}" for j in range(1, dump.n_wallets)]
        per_wallet = sol_to_lamports(round(dump.accumulate_sol, 9))
        for w in wallets:
            tok.buy(w, per_wallet, is_bot=1)
        level = min(sol_to_lamports(round(dump.level, 9)), self.hard_cap)
        self.run_to(tok, level, graduate=False, exclude=wallets)
        for w in wallets:
            held = tok.holdings.get(w, 0)
            tok.sell(w, int(held * dump.inventory_fraction), is_bot=1)


def inject_dump(injection: DumpInjection, *, seed: int = 0, mint: str = "DUMP0",
                creator: str = "CDUMP0", config: Optional[SynthConfig] = None,
                params: CurveParams = DEFAULT_PARAMS) -> list[TradeEvent]:
    """Generate one token whose creator accumulates at launch and then sells
    ``inventory_fraction`` of it from ``n_wallets`` wallets once the SOL
    reserve reaches ``injection.level``.
    """
    config = config or SynthConfig()
    rng = np.random.default_rng([seed, 0xD0])
    market = _Market(config, params)
    tok = _Token(mint, creator, int(config.start_time * 1000), config.arrival_rate,
                 float(rng.beta(config.bot_share_alpha, config.bot_share_beta)), rng, params)
    market._dump_path(tok, injection)
    return tok.events


def generate_token(idx: int, config: SynthConfig,
                   params: CurveParams = DEFAULT_PARAMS) -> list[TradeEvent]:
    return _Market(config, params).token(idx)


def generate_market(config: SynthConfig, params: CurveParams = DEFAULT_PARAMS) -> list[TradeEvent]:
    """Generate the full event log, ordered by (timestamp, signature)."""
    market = _Market(config, params)
    events: list[TradeEvent] = []
    for idx in range(config.n_tokens):
        events.extend(market.token(idx))
    events.sort(key=lambda ev: (ev.timestamp, ev.signature))
    return events


def market_metadata(config: SynthConfig) -> dict:
    return {
        "generator": "pumpgrad.synth",
        "prng": PRNG_NAME,
        "numpy_version": np.__version__,
        "seed": config.seed,
        "config": asdict(config),
    }


def binomial_interval(p: float, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Normal-approximation binomial interval for a proportion ``p`` over ``n`` trials."""
    half = z * math.sqrt(p * (1.0 - p) / n)
    return p - half, p + half
