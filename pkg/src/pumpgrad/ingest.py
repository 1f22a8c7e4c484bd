"""Trade-event log parsing and per-token trajectory reconstruction.

Wire format: JSONL (one object per line) or CSV with a header row, both using
the snake_case field names in :data:`FIELDS`. SOL quantities are decimal
strings with lamport precision, token quantities decimal strings with the
token's decimals. In memory every amount is an integer in base units.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from functools import cached_property
from typing import IO, Callable, Iterable, Iterator, Mapping, Optional

import numpy as np

from .curve import DEFAULT_PARAMS, CurveParams
from .units import (
    DEFAULT_TOKEN_DECIMALS,
    SOL_DECIMALS,
    PrecisionError,
    format_base_units,
    to_base_units,
)

log = logging.getLogger(__name__)

FIELDS = (
    "timestamp", "local_time", "signature", "mint", "coin_creator", "trader", "tx_type",
    "in_bonding_curve", "v_sol", "v_tok", "sol_amount", "token_amount", "is_bot",
)
SOL_FIELDS = ("v_sol", "sol_amount")
TOKEN_FIELDS = ("v_tok", "token_amount")


class TxType(str, Enum):
    CREATE = "create"
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True, slots=True)
class TradeEvent:
    """One swap or creation record.

    ``v_sol``/``sol_amount`` are lamports and ``v_tok``/``token_amount`` token
    base units. ``sol_amount`` is the SOL that entered (buy) or left (sell)
    the curve reserve, i.e. exclusive of the fee.
    """

    timestamp: float
    signature: str
    mint: str
    coin_creator: str
    trader: str
    tx_type: TxType
    in_bonding_curve: bool
    v_sol: int
    v_tok: int
    sol_amount: int
    token_amount: int
    is_bot: int
    local_time: Optional[str] = None

    @property
    def is_trade(self) -> bool:
        return self.tx_type is not TxType.CREATE


class EventParseError(ValueError):
    def __init__(self, line: int, field_name: Optional[str], message: str):
        self.line = line
        self.field = field_name
        self.message = message
        where = f"line {line}" + (f", field {field_name!r}" if field_name else "")
        super().__init__(f"{where}: {message}")


# -- parsing ----------------------------------------------------------------

_TRUE = {"1", "true", "True", "TRUE"}
_FALSE = {"0", "false", "False", "FALSE"}


def _parse_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, (int, Decimal)) and raw in (0, 1):
        return bool(raw)
    if isinstance(raw, str):
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _record_to_event(rec: Mapping, line: int, token_decimals: int) -> TradeEvent:
    def get(name: str, required: bool = True):
        val = rec.get(name)
        if val is None or val == "":
            if required:
                raise EventParseError(line, name, "missing value")
            return None
        return val

    try:
        tx_type = TxType(get("tx_type"))
    except ValueError:
        raise EventParseError(line, "tx_type", f"unknown transaction type {rec.get('tx_type')!r}")

    try:
        timestamp = float(get("timestamp"))
    except (TypeError, ValueError):
        raise EventParseError(line, "timestamp", f"not a number: {rec.get('timestamp')!r}")

    amounts = {}
    for name in SOL_FIELDS + TOKEN_FIELDS:
        decimals = SOL_DECIMALS if name in SOL_FIELDS else token_decimals
        try:
            amounts[name] = to_base_units(get(name), decimals)
        except PrecisionError as exc:
            raise EventParseError(line, name, str(exc))
        if amounts[name] < 0:
            raise EventParseError(line, name, "negative amount")

    try:
        in_curve = _parse_bool(get("in_bonding_curve"))
    except ValueError as exc:
        raise EventParseError(line, "in_bonding_curve", str(exc))
    try:
        is_bot = int(_parse_bool(get("is_bot")))
    except ValueError as exc:
        raise EventParseError(line, "is_bot", str(exc))

    if tx_type is TxType.CREATE and (amounts["sol_amount"] or amounts["token_amount"]):
        raise EventParseError(line, "sol_amount", "create record must carry zero amounts")

    local_time = get("local_time", required=False)
    return TradeEvent(
        timestamp=timestamp,
        signature=str(get("signature")),
        mint=str(get("mint")),
        coin_creator=str(get("coin_creator")),
        trader=str(get("trader")),
        tx_type=tx_type,
        in_bonding_curve=in_curve,
        is_bot=is_bot,
        local_time=None if local_time is None else str(local_time),
        **amounts,
    )


def _open_text(source) -> tuple[IO[str], bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def iter_events(
    source,
    format: str = "jsonl",
    *,
    strict: bool = True,
    errors: Optional[list] = None,
    token_decimals: int = DEFAULT_TOKEN_DECIMALS,
) -> Iterator[TradeEvent]:
    """Stream events from ``source`` (path, bytes, or binary/text file object).

    Malformed records raise :class:`EventParseError` in strict mode; otherwise
    they are appended to ``errors`` (if given) and skipped.
    """
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unsupported format {format!r}")
    fh, owned = _open_text(source)
    try:
        if format == "jsonl":
            records = _jsonl_records(fh)
        else:
            records = _csv_records(fh)
        for line, rec in records:
            try:
                if isinstance(rec, EventParseError):
                    raise rec
                yield _record_to_event(rec, line, token_decimals)
            except EventParseError as exc:
                if strict:
                    raise
                log.warning("skipping malformed record: %s", exc)
                if errors is not None:
                    errors.append(exc)
    finally:
        if owned:
            fh.close()


def _jsonl_records(fh):
    for line_no, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line, parse_float=Decimal)
        except json.JSONDecodeError as exc:
            yield line_no, EventParseError(line_no, None, f"invalid JSON: {exc.msg}")
            continue
        if not isinstance(rec, dict):
            yield line_no, EventParseError(line_no, None, "record is not an object")
            continue
        yield line_no, rec


def _csv_records(fh):
    reader = csv.DictReader(fh)
    missing = [f for f in FIELDS if f != "local_time" and f not in (reader.fieldnames or ())]
    if missing:
        raise EventParseError(1, missing[0], "column missing from CSV header")
    for rec in reader:
        yield reader.line_num, rec


def parse_events(source, format: str = "jsonl", *, strict: bool = True,
                 errors: Optional[list] = None,
                 token_decimals: int = DEFAULT_TOKEN_DECIMALS) -> list[TradeEvent]:
    return list(iter_events(source, format, strict=strict, errors=errors,
                            token_decimals=token_decimals))


# -- serialisation ----------------------------------------------------------

def event_to_record(ev: TradeEvent, token_decimals: int = DEFAULT_TOKEN_DECIMALS) -> dict:
    return {
        "timestamp": ev.timestamp,
        "local_time": ev.local_time,
        "signature": ev.signature,
        "mint": ev.mint,
        "coin_creator": ev.coin_creator,
        "trader": ev.trader,
        "tx_type": ev.tx_type.value,
        "in_bonding_curve": ev.in_bonding_curve,
        "v_sol": format_base_units(ev.v_sol, SOL_DECIMALS),
        "v_tok": format_base_units(ev.v_tok, token_decimals),
        "sol_amount": format_base_units(ev.sol_amount, SOL_DECIMALS),
        "token_amount": format_base_units(ev.token_amount, token_decimals),
        "is_bot": ev.is_bot,
    }


def write_events(events: Iterable[TradeEvent], fh: IO[str], format: str = "jsonl",
                 token_decimals: int = DEFAULT_TOKEN_DECIMALS) -> int:
    """Write events to a text stream; returns the number of records written."""
    n = 0
    if format == "jsonl":
        for ev in events:
            fh.write(json.dumps(event_to_record(ev, token_decimals), separators=(",", ":")))
            fh.write("\n")
            n += 1
    elif format == "csv":
        writer = csv.DictWriter(fh, fieldnames=FIELDS, lineterminator="\n")
        writer.writeheader()
        for ev in events:
            rec = event_to_record(ev, token_decimals)
            rec["in_bonding_curve"] = int(rec["in_bonding_curve"])
            rec["timestamp"] = repr(rec["timestamp"])
            if rec["local_time"] is None:
                rec["local_time"] = ""
            writer.writerow(rec)
            n += 1
    else:
        raise ValueError(f"unsupported format {format!r}")
    return n


# -- trajectories -----------------------------------------------------------

@dataclass(frozen=True)
class Quarantined:
    mint: str
    reason: str
    signatures: tuple[str, ...] = ()


@dataclass(frozen=True)
class TokenTrajectory:
    mint: str
    creator: str
    events: tuple[TradeEvent, ...]
    graduated: bool
    t_create: float
    max_v_sol: int  # lamports
    grad_index: Optional[int] = None  # index of the event that reached graduation
    t_grad: Optional[float] = None  # seconds from creation to graduation
    grad_steps: Optional[int] = None  # swaps up to and including graduation

    def __len__(self) -> int:
        return len(self.events)

    @cached_property
    def v_sol(self) -> np.ndarray:
        """Post-trade SOL reserve of each bonding-curve event (lamports).

        Events outside the bonding curve carry the last on-curve value so the
        array stays aligned with ``events``.
        """
        out = np.empty(len(self.events), dtype=np.int64)
        last = self.events[0].v_sol
        for i, ev in enumerate(self.events):
            if ev.in_bonding_curve:
                last = ev.v_sol
            out[i] = last
        return out

    @cached_property
    def running_max(self) -> np.ndarray:
        return np.maximum.accumulate(self.v_sol)

    @cached_property
    def is_trade(self) -> np.ndarray:
        return np.fromiter((ev.tx_type is not TxType.CREATE for ev in self.events),
                           dtype=bool, count=len(self.events))

    @cached_property
    def is_bot(self) -> np.ndarray:
        return np.fromiter((ev.is_bot for ev in self.events), dtype=np.int8,
                           count=len(self.events))

    @property
    def n_trades(self) -> int:
        return int(self.is_trade.sum())


def _sort_key(item):
    order, ev = item
    # the create record opens the token even if a trade shares its timestamp
    return (ev.timestamp, ev.tx_type is not TxType.CREATE, ev.signature, order)


def make_trajectory(events: Iterable[TradeEvent], params: CurveParams = DEFAULT_PARAMS,
                    grad_tolerance: int = 1000) -> TokenTrajectory:
    """Build a trajectory from one token's already ordered events.

    ``grad_tolerance`` (lamports) absorbs rounding in reported reserves when
    testing the graduation threshold.
    """
    events = tuple(events)
    if not events or events[0].tx_type is not TxType.CREATE:
        raise ValueError("trajectory must start with a create event")
    create = events[0]
    threshold = params.x_grad - grad_tolerance
    max_v = create.v_sol
    grad_index = None
    steps = 0
    grad_steps = None
    for i, ev in enumerate(events):
        if not ev.in_bonding_curve:
            continue
        if ev.tx_type is not TxType.CREATE:
            steps += 1
        if ev.v_sol > max_v:
            max_v = ev.v_sol
        if grad_index is None and ev.v_sol >= threshold:
            grad_index = i
            grad_steps = steps
    graduated = grad_index is not None
    return TokenTrajectory(
        mint=create.mint,
        creator=create.coin_creator,
        events=events,
        graduated=graduated,
        t_create=create.timestamp,
        max_v_sol=max_v,
        grad_index=grad_index,
        t_grad=events[grad_index].timestamp - create.timestamp if graduated else None,
        grad_steps=grad_steps,
    )


def build_trajectories(
    events: Iterable[TradeEvent],
    params: CurveParams = DEFAULT_PARAMS,
    *,
    quarantine: Optional[list] = None,
    bot_classifier: Optional[Callable[[TradeEvent], int]] = None,
    grad_tolerance: int = 1000,
) -> dict[str, TokenTrajectory]:
    """Group events per mint and order them by (timestamp, signature, file order).

    Records that cannot be placed (no create for the mint, a duplicate
    signature, trades stamped before the create) are dropped and described in
    ``quarantine``. ``bot_classifier`` may overwrite ``is_bot``; by default the
    logged flag is kept.
    """
    by_mint: dict[str, list] = {}
    for order, ev in enumerate(events):
        if bot_classifier is not None:
            flag = int(bot_classifier(ev))
            if flag != ev.is_bot:
                ev = replace(ev, is_bot=flag)
        by_mint.setdefault(ev.mint, []).append((order, ev))

    def report(mint, reason, evs):
        if quarantine is not None:
            quarantine.append(Quarantined(mint, reason, tuple(e.signature for e in evs)))
        log.info("quarantined %d event(s) of %s: %s", len(evs), mint, reason)

    out: dict[str, TokenTrajectory] = {}
    for mint in sorted(by_mint):
        items = sorted(by_mint[mint], key=_sort_key)
        seen: set[str] = set()
        unique = []
        dups = []
        for _, ev in items:
            if ev.signature in seen:
                dups.append(ev)
            else:
                seen.add(ev.signature)
                unique.append(ev)
        if dups:
            report(mint, "duplicate signature", dups)
        creates = [i for i, ev in enumerate(unique) if ev.tx_type is TxType.CREATE]
        if not creates:
            report(mint, "no create event for mint", unique)
            continue
        first = creates[0]
        if first > 0:
            report(mint, "event precedes the create event", unique[:first])
        extra = [unique[i] for i in creates[1:]]
        if extra:
            report(mint, "repeated create event", extra)
        kept = [ev for i, ev in enumerate(unique) if i >= first and i not in creates[1:]]
        out[mint] = make_trajectory(kept, params, grad_tolerance)
    return out


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    index: int
    kind: str  # invariant | direction | sol_step | token_step
    value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    mint: str
    n_checked: int
    violations: tuple[Violation, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.violations

    def count(self, kind: str) -> int:
        return sum(1 for v in self.violations if v.kind == kind)


def validate_trajectory(traj: TokenTrajectory, params: CurveParams = DEFAULT_PARAMS,
                        tol: float = 1e-6) -> ValidationReport:
    """Check bonding-curve events against the constant-product invariant.

    Flags relative invariant error above ``tol``, buys that lower (sells that
    raise) the SOL reserve, and reported amounts that disagree with the change
    in reserves by more than ``tol`` relative to the prior reserve.
    """
    k = params.k
    violations = []
    prev = None
    n = 0
    for i, ev in enumerate(traj.events):
        if not ev.in_bonding_curve:
            continue
        n += 1
        rel = abs(ev.v_sol * ev.v_tok - k) / k
        if rel > tol:
            violations.append(Violation(i, "invariant", rel, "|x*y - k| / k"))
        if prev is not None and ev.tx_type is not TxType.CREATE:
            dx = ev.v_sol - prev.v_sol
            dy = ev.v_tok - prev.v_tok
            sign = 1 if ev.tx_type is TxType.BUY else -1
            if sign * dx < 0:
                violations.append(Violation(i, "direction", dx / prev.v_sol,
                                            f"{ev.tx_type.value} moved v_sol the wrong way"))
            sol_err = abs(dx - sign * ev.sol_amount) / prev.v_sol
            if sol_err > tol:
                violations.append(Violation(i, "sol_step", sol_err, "sol_amount vs v_sol change"))
            tok_err = abs(dy + sign * ev.token_amount) / prev.v_tok
            if tok_err > tol:
                violations.append(Violation(i, "token_step", tok_err,
                                            "token_amount vs v_tok change"))
        prev = ev
    return ValidationReport(traj.mint, n, tuple(violations))
