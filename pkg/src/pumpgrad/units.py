"""Fixed-point conversions between human units and on-chain base units.

SOL is held as integer lamports (1 SOL = 10**9 lamports); token amounts are
integers in base units with a configurable number of decimals (6 by default).
"""

from __future__ import annotations

from decimal import Decimal, InvalidOperation
from typing import Union

LAMPORTS_PER_SOL = 10**9
SOL_DECIMALS = 9
DEFAULT_TOKEN_DECIMALS = 6

Number = Union[int, float, str, Decimal]


class PrecisionError(ValueError):
    """Raised when a value is not representable at the requested precision."""


def _as_decimal(value: Number) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        # repr() gives the shortest string that round-trips
        return Decimal(repr(value))
    try:
        return Decimal(value)
    except (InvalidOperation, TypeError) as exc:
        raise PrecisionError(f"not a number: {value!r}") from exc


def to_base_units(value: Number, decimals: int, *, exact: bool = True) -> int:
    """Convert a decimal amount to integer base units.

    With ``exact=True`` any digits below the base unit raise
    :class:`PrecisionError`; otherwise they are truncated toward zero.
    """
    d = _as_decimal(value)
    if not d.is_finite():
        raise PrecisionError(f"non-finite amount: {value!r}")
    scaled = d.scaleb(decimals)
    as_int = int(scaled)
    if exact and scaled != as_int:
        raise PrecisionError(f"{value!r} has more than {decimals} decimals")
    return as_int


def sol_to_lamports(value: Number, *, exact: bool = True) -> int:
    return to_base_units(value, SOL_DECIMALS, exact=exact)


def lamports_to_sol(lamports: int) -> float:
    return lamports / LAMPORTS_PER_SOL


def format_base_units(amount: int, decimals: int) -> str:
    """Render integer base units as a plain decimal string (no exponent)."""
    if decimals == 0:
        return str(amount)
    sign = "-" if amount < 0 else ""
    q, r = divmod(abs(amount), 10**decimals)
    return f"{sign}{q}.{r:0{decimals}d}"
