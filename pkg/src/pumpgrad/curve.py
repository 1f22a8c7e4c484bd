"""Virtual bonding curve of the launchpad and its migration to the real pool.

All curve arithmetic is integer: SOL in lamports, tokens in base units. Token
outputs and SOL outputs are rounded down so that rounding always favours the
pool; the reserve that is recomputed from the invariant is rounded up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from decimal import Decimal
from fractions import Fraction
from functools import cached_property
from typing import NamedTuple, Optional

from .units import LAMPORTS_PER_SOL, DEFAULT_TOKEN_DECIMALS, sol_to_lamports, to_base_units

# bound on |x*y - k| expressed in units of the rounded reserve
INVARIANT_TOLERANCE_UNITS = 10


class CurveError(ValueError):
    pass


class GraduatedError(CurveError):
    pass


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class CurveParams:
    """Launch parameters. Reserves in SOL / whole tokens, fees as fractions."""

    x_synt0: Decimal = Decimal("30")
    y_virt_mint0: Decimal = Decimal("793100000")
    y_synt0: Decimal = Decimal("279900000")
    y_pswap_mint0: Decimal = Decimal("206900000")
    y_mint0: Decimal = Decimal("1000000000")
    x_grad_total: Decimal = Decimal("115")
    x_grad_real: Decimal = Decimal("85")
    fee_total: Decimal = Decimal("0.0125")
    fee_creator: Decimal = Decimal("0.003")
    fee_platform: Decimal = Decimal("0.0095")
    token_decimals: int = DEFAULT_TOKEN_DECIMALS
    migration_gas_fee: Decimal = Decimal("0")
    # post-graduation creator fee, linear in pool SOL between the endpoints
    dynamic_pool_fee: bool = False
    pool_fee_start: Decimal = Decimal("0.0095")
    pool_fee_end: Decimal = Decimal("0.0005")
    pool_fee_x_start: Decimal = Decimal("85")
    pool_fee_x_end: Decimal = Decimal("1000")

    def __post_init__(self) -> None:
        for name in ("x_synt0", "y_virt_mint0", "y_synt0", "y_pswap_mint0", "y_mint0",
                     "x_grad_total", "x_grad_real"):
            if Decimal(getattr(self, name)) <= 0:
                raise CurveError(f"{name} must be strictly positive")
        for name in ("fee_total", "fee_creator", "fee_platform", "migration_gas_fee"):
            if Decimal(getattr(self, name)) < 0:
                raise CurveError(f"{name} must be non-negative")
        if not Decimal(self.fee_total) < 1:
            raise CurveError("fee_total must be below 1")
        if Decimal(self.y_virt_mint0) + Decimal(self.y_pswap_mint0) != Decimal(self.y_mint0):
            raise CurveError("y_virt_mint0 + y_pswap_mint0 must equal the total mint")
        if Decimal(self.fee_creator) + Decimal(self.fee_platform) != Decimal(self.fee_total):
            raise CurveError("fee_creator + fee_platform must equal fee_total")
        if Decimal(self.x_grad_total) - Decimal(self.x_grad_real) != Decimal(self.x_synt0):
            raise CurveError("x_grad_total - x_grad_real must equal x_synt0")
        if self.token_decimals < 0:
            raise CurveError("token_decimals must be non-negative")
        if Decimal(self.migration_gas_fee) >= Decimal(self.x_grad_real):
            raise CurveError("migration_gas_fee exceeds the real SOL reserve")

    @property
    def retention(self) -> Decimal:
        return 1 - Decimal(self.fee_total)

    def tokens(self, amount) -> int:
        return to_base_units(amount, self.token_decimals)

    @cached_property
    def token_unit(self) -> int:
        return 10**self.token_decimals

    @cached_property
    def x0(self) -> int:
        return sol_to_lamports(self.x_synt0)

    @cached_property
    def y0(self) -> int:
        return self.tokens(Decimal(self.y_virt_mint0) + Decimal(self.y_synt0))

    @cached_property
    def k(self) -> int:
        return self.x0 * self.y0

    @cached_property
    def x_grad(self) -> int:
        return sol_to_lamports(self.x_grad_total)

    @cached_property
    def fee_total_frac(self) -> Fraction:
        return Fraction(Decimal(self.fee_total))

    @cached_property
    def fee_creator_frac(self) -> Fraction:
        return Fraction(Decimal(self.fee_creator))

    def split_fee(self, gross: int) -> tuple[int, int]:
        """Return ``(creator, platform)`` fees on ``gross`` lamports.

        The total is rounded down once and the platform share is the
        remainder, so the two parts always sum to the total fee exactly.
        """
        ft = self.fee_total_frac
        fc = self.fee_creator_frac
        total = gross * ft.numerator // ft.denominator
        creator = min(gross * fc.numerator // fc.denominator, total)
        return creator, total - creator

    def total_fee(self, gross: int) -> int:
        ft = self.fee_total_frac
        return gross * ft.numerator // ft.denominator


DEFAULT_PARAMS = CurveParams()


@dataclass(frozen=True)
class CurveState:
    x_tot: int  # lamports
    y_tot: int  # token base units
    k: int
    params: CurveParams = field(default=DEFAULT_PARAMS, repr=False)
    fees_accrued_creator: int = 0
    fees_accrued_platform: int = 0
    graduated: bool = False

    @property
    def x_sol(self) -> float:
        return self.x_tot / LAMPORTS_PER_SOL

    @property
    def y_tokens(self) -> float:
        return self.y_tot / self.params.token_unit

    @property
    def tokens_sold(self) -> int:
        return self.params.y0 - self.y_tot


@dataclass(frozen=True)
class PoolState:
    x_pool: int  # lamports of wrapped SOL
    y_pool: int  # token base units
    p_grad: float  # SOL per token
    creator_fee: Optional[float] = None


@dataclass(frozen=True)
class SwapQuote:
    side: str
    delta_x_gross: int
    delta_x_net: int
    delta_y: int
    fee_creator: int
    fee_platform: int
    new_state: CurveState
    refund: int = 0  # unspent gross SOL when a buy is truncated at graduation


def init_curve(params: CurveParams = DEFAULT_PARAMS) -> CurveState:
    return CurveState(x_tot=params.x0, y_tot=params.y0, k=params.k, params=params)


def invariant_residual(state: CurveState) -> float:
    """|x*y - k| in units of the rounded reserve (at most 1 for exact quotes)."""
    return abs(state.x_tot * state.y_tot - state.k) / max(state.x_tot, state.y_tot)


def net_of_gross(gross: int, params: CurveParams = DEFAULT_PARAMS) -> int:
    return gross - params.total_fee(gross)


def gross_for_net(net: int, params: CurveParams = DEFAULT_PARAMS) -> int:
    """Smallest gross lamport amount whose post-fee part is exactly ``net``.

    ``net_of_gross`` steps by 0 or 1 per lamport, so every net value is hit.
    """
    if net < 0:
        raise CurveError("net amount must be non-negative")
    ft = params.fee_total_frac
    g = net * ft.denominator // (ft.denominator - ft.numerator)
    while net_of_gross(g, params) < net:
        g += 1
    while g > 0 and net_of_gross(g - 1, params) >= net:
        g -= 1
    return g


def quote_buy(state: CurveState, delta_x_gross: int) -> SwapQuote:
    """Quote a buy of ``delta_x_gross`` lamports (fees included).

    A buy that would push the SOL reserve past graduation is truncated at the
    threshold; the unspent gross SOL is returned in ``refund``.
    """
    params = state.params
    if delta_x_gross < 0:
        raise CurveError("buy amount must be non-negative")
    if state.graduated:
        raise GraduatedError("curve already graduated")
    if delta_x_gross == 0:
        return SwapQuote("buy", 0, 0, 0, 0, 0, state)

    gross = delta_x_gross
    net = net_of_gross(gross, params)
    room = params.x_grad - state.x_tot
    if net > room:
        net = room
        gross = gross_for_net(net, params)
    fee_c, fee_p = params.split_fee(gross)
    x_new = state.x_tot + net
    y_new = _ceil_div(state.k, x_new)
    dy = state.y_tot - y_new
    if dy < 0:
        dy, y_new = 0, state.y_tot
    new_state = replace(
        state,
        x_tot=x_new,
        y_tot=y_new,
        fees_accrued_creator=state.fees_accrued_creator + fee_c,
        fees_accrued_platform=state.fees_accrued_platform + fee_p,
        graduated=x_new >= params.x_grad,
    )
    return SwapQuote("buy", gross, net, dy, fee_c, fee_p, new_state, refund=delta_x_gross - gross)


def quote_sell(state: CurveState, delta_y: int) -> SwapQuote:
    """Quote selling ``delta_y`` token base units back to the curve.

    ``delta_x_gross`` is the SOL leaving the curve; the trader receives
    ``delta_x_net`` after the fee is taken from the output.
    """
    params = state.params
    if delta_y < 0:
        raise CurveError("sell amount must be non-negative")
    if state.graduated:
        raise GraduatedError("curve already graduated")
    if delta_y == 0:
        return SwapQuote("sell", 0, 0, 0, 0, 0, state)
    y_new = state.y_tot + delta_y
    if y_new > params.y0:
        raise CurveError(
            f"oversell: {delta_y} exceeds circulating supply {state.tokens_sold}")
    x_new = max(_ceil_div(state.k, y_new), params.x0)
    gross = state.x_tot - x_new
    if gross < 0:
        gross, x_new = 0, state.x_tot
    fee_c, fee_p = params.split_fee(gross)
    new_state = replace(
        state,
        x_tot=x_new,
        y_tot=y_new,
        fees_accrued_creator=state.fees_accrued_creator + fee_c,
        fees_accrued_platform=state.fees_accrued_platform + fee_p,
    )
    return SwapQuote("sell", gross, gross - fee_c - fee_p, delta_y, fee_c, fee_p, new_state)


def marginal_price(state: CurveState) -> float:
    """Spot price x/y in SOL per whole token."""
    if state.y_tot <= 0:
        raise CurveError("token reserve must be positive")
    return (state.x_tot / LAMPORTS_PER_SOL) / (state.y_tot / state.params.token_unit)


def pool_creator_fee(x_pool: int, params: CurveParams = DEFAULT_PARAMS) -> float:
    """Post-graduation creator fee, linear in pool SOL and clamped at the endpoints."""
    x = x_pool / LAMPORTS_PER_SOL
    x_lo, x_hi = float(params.pool_fee_x_start), float(params.pool_fee_x_end)
    f_lo, f_hi = float(params.pool_fee_start), float(params.pool_fee_end)
    if x <= x_lo:
        return f_lo
    if x >= x_hi:
        return f_hi
    return f_lo + (f_hi - f_lo) * (x - x_lo) / (x_hi - x_lo)


def migrate(state: CurveState) -> PoolState:
    """Seed the post-graduation pool from a graduated curve.

    The virtual SOL advance is reclaimed and the reserved token supply is
    paired with the real SOL, less the (configurable) migration gas fee.
    """
    params = state.params
    if not state.graduated or state.x_tot < params.x_grad:
        raise CurveError("cannot migrate a curve that has not graduated")
    x_pool = state.x_tot - params.x0 - sol_to_lamports(params.migration_gas_fee)
    y_pool = params.tokens(params.y_pswap_mint0)
    p_grad = (x_pool / LAMPORTS_PER_SOL) / (y_pool / params.token_unit)
    fee = pool_creator_fee(x_pool, params) if params.dynamic_pool_fee else None
    return PoolState(x_pool=x_pool, y_pool=y_pool, p_grad=p_grad, creator_fee=fee)


def migration_price_gap(state: CurveState, pool: PoolState) -> float:
    """Relative price jump |P_curve - p_grad| / p_grad at migration."""
    return abs(marginal_price(state) - pool.p_grad) / pool.p_grad


def migration_liquidity_ratio(state: CurveState, pool: PoolState) -> float:
    """sqrt(x*y) of the new pool over that of the graduated curve (human units)."""
    unit = state.params.token_unit
    before = math.sqrt(state.x_tot / LAMPORTS_PER_SOL * state.y_tot / unit)
    after = math.sqrt(pool.x_pool / LAMPORTS_PER_SOL * pool.y_pool / unit)
    return after / before


class LiquidationComparison(NamedTuple):
    dx_before: float
    dx_after: float
    ratio: float


def sell_proceeds_before_after(delta_y: float,
                               params: CurveParams = DEFAULT_PARAMS) -> LiquidationComparison:
    """Fee-free SOL proceeds of selling ``delta_y`` tokens just before and just
    after graduation, and their ratio.

    Before: the curve sits at (x_grad_total, y_synt0). After: the fresh pool
    holds (x_grad_real, y_pswap_mint0).
    """
    if not delta_y > 0:
        raise CurveError("delta_y must be positive")
    x, y = float(params.x_grad_total), float(params.y_synt0)
    x2, y2 = float(params.x_grad_real), float(params.y_pswap_mint0)
    before = x * delta_y / (y + delta_y)
    after = x2 * delta_y / (y2 + delta_y)
    return LiquidationComparison(before, after, before / after)
