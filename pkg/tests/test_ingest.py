import io
import json
import random
from dataclasses import replace

import pytest

from helpers import SOL, TOK, ev, path
from pumpgrad.curve import DEFAULT_PARAMS
from pumpgrad.ingest import (
    EventParseError,
    TxType,
    build_trajectories,
    iter_events,
    make_trajectory,
    parse_events,
    validate_trajectory,
    write_events,
)
from pumpgrad.synth import SynthConfig, generate_market

CREATE = ('{"timestamp": 1.0, "signature": "s0", "mint": "M", "coin_creator": "c", '
          '"trader": "c", "tx_type": "create", "in_bonding_curve": true, "v_sol": "30", '
          '"v_tok": "1073000000", "sol_amount": "0", "token_amount": "0", "is_bot": 0}')
BUY = ('{"timestamp": 2.5, "local_time": "2025-09-01T00:00:02", "signature": "s1", '
       '"mint": "M", "coin_creator": "c", "trader": "w", "tx_type": "buy", '
       '"in_bonding_curve": true, "v_sol": "30.9875", "v_tok": "1038805970.149254", '
       '"sol_amount": "0.9875", "token_amount": "34194029.850746", "is_bot": 1}')
SELL = BUY.replace('"buy"', '"sell"').replace('"s1"', '"s2"').replace("2.5", "3")


def test_three_line_jsonl_in_order():
    evs = parse_events("\n".join([CREATE, BUY, SELL]).encode())
    assert [e.tx_type for e in evs] == [TxType.CREATE, TxType.BUY, TxType.SELL]
    buy = evs[1]
    assert buy.sol_amount == 987_500_000 and buy.token_amount == 34_194_029_850_746
    assert buy.v_sol == 30_987_500_000 and buy.is_bot == 1
    assert buy.local_time == "2025-09-01T00:00:02" and evs[0].local_time is None


def test_unknown_tx_type_names_field():
    bad = CREATE.replace('"create"', '"mint"')
    with pytest.raises(EventParseError) as err:
        parse_events(bad.encode())
    assert err.value.field == "tx_type" and err.value.line == 1


def test_lenient_mode_skips_and_reports():
    text = "\n".join([CREATE, "{not json", BUY.replace('"0.9875"', '"-1"')]) + "\n"
    errors = []
    evs = parse_events(text.encode(), strict=False, errors=errors)
    assert len(evs) == 1
    assert [e.line for e in errors] == [2, 3]
    assert errors[1].field == "sol_amount"


def test_strict_mode_reports_position():
    text = "\n".join([CREATE, BUY, '{"timestamp": "x"}'])
    it = iter_events(io.BytesIO(text.encode()))
    next(it), next(it)
    with pytest.raises(EventParseError) as err:
        next(it)
    assert err.value.line == 3


@pytest.mark.parametrize("field,value", [("v_sol", '"30.0000000001"'), ("is_bot", "2"),
                                         ("timestamp", "null")])
def test_field_validation(field, value):
    rec = json.loads(CREATE)
    rec[field] = json.loads(value)
    with pytest.raises(EventParseError) as err:
        parse_events(json.dumps(rec).encode())
    assert err.value.field == field


def test_create_must_have_zero_amounts():
    with pytest.raises(EventParseError):
        parse_events(CREATE.replace('"sol_amount": "0"', '"sol_amount": "1"').encode())


def test_csv_requires_header_columns():
    with pytest.raises(EventParseError):
        parse_events(b"timestamp,mint\n1,M\n", "csv")


@pytest.mark.parametrize("fmt", ["jsonl", "csv"])
def test_round_trip(fmt):
    events = generate_market(SynthConfig(n_tokens=20, seed=4))
    buf = io.StringIO()
    assert write_events(events, buf, fmt) == len(events)
    back = parse_events(buf.getvalue().encode(), fmt)
    assert back == events


def test_unsupported_format():
    with pytest.raises(ValueError):
        parse_events(b"", "xml")


# -- trajectories -----------------------------------------------------------

def test_graduated_token_fields():
    evs = path("G", [60, 100, 115], dt=10)
    t = make_trajectory(evs)
    assert t.graduated and t.t_grad == 30 and t.grad_steps == 3 and t.grad_index == 3
    assert t.max_v_sol == 115 * SOL


def test_non_graduated_token_fields():
    t = make_trajectory(path("N", [45, 60, 50]))
    assert not t.graduated and t.grad_steps is None and t.t_grad is None
    assert t.max_v_sol == 60 * SOL


def test_same_timestamp_ordered_by_signature():
    a = replace(ev("M", 2, "buy", 40, t=5), signature="zzz")
    b = replace(ev("M", 3, "buy", 41, t=5), signature="aaa")
    trajs = build_trajectories([ev("M", 0, "create", 30), a, b])
    assert [e.signature for e in trajs["M"].events[1:]] == ["aaa", "zzz"]


def test_create_first_on_timestamp_tie():
    c = replace(ev("M", 0, "create", 30, t=5), signature="zzz")
    b = replace(ev("M", 1, "buy", 40, t=5), signature="aaa")
    q = []
    trajs = build_trajectories([b, c], quarantine=q)
    assert trajs["M"].events[0].tx_type is TxType.CREATE and not q


def test_quarantine_rules():
    q = []
    evs = path("OK", [40]) + [ev("ORPHAN", 1, "buy", 40)]
    evs += [ev("OK", 1, "buy", 40)]  # duplicate signature
    evs += [ev("EARLY", 0, "buy", 35, t=-1), ev("EARLY", 1, "create", 30, t=0)]
    trajs = build_trajectories(evs, quarantine=q)
    assert set(trajs) == {"OK", "EARLY"}
    reasons = sorted((x.mint, x.reason) for x in q)
    assert reasons == [("EARLY", "event precedes the create event"),
                       ("OK", "duplicate signature"),
                       ("ORPHAN", "no create event for mint")]


def test_permutation_invariance():
    events = generate_market(SynthConfig(n_tokens=30, seed=9))
    shuffled = list(events)
    random.Random(0).shuffle(shuffled)
    assert build_trajectories(shuffled) == build_trajectories(events)


def test_bot_classifier_hook():
    evs = path("M", [40, 50], bots=[0, 0])
    trajs = build_trajectories(evs, bot_classifier=lambda e: e.trader == "W2")
    assert [e.is_bot for e in trajs["M"].events] == [0, 0, 1]


def test_v_sol_carries_over_off_curve_events():
    evs = path("M", [40]) + [ev("M", 2, "buy", 999, in_curve=False)]
    t = make_trajectory(evs)
    assert t.v_sol.tolist() == [30 * SOL, 40 * SOL, 40 * SOL]


# -- validation -------------------------------------------------------------

def test_generated_trajectories_validate_clean(small_market):
    _, _, trajs = small_market
    for t in trajs.values():
        assert validate_trajectory(t).ok


def test_perturbed_v_tok_flags_invariant():
    t = next(iter(build_trajectories(generate_market(SynthConfig(n_tokens=1, seed=1))).values()))
    events = list(t.events)
    e = events[3]
    events[3] = replace(e, v_tok=int(e.v_tok * 1.01))
    report = validate_trajectory(make_trajectory(events))
    assert report.count("invariant") == 1
    assert all(v.index in (3, 4) for v in report.violations)


def test_direction_violation():
    t = make_trajectory(path("M", [40]) + [ev("M", 2, "buy", 35)])
    assert validate_trajectory(t).count("direction") == 1


def test_serialized_sample_validates_clean(small_market):
    # decimal strings at lamport precision, parsed back from the wire format
    _, events, _ = small_market
    buf = io.StringIO()
    write_events(events[:5000], buf, "csv")
    trajs = build_trajectories(parse_events(buf.getvalue().encode(), "csv"))
    assert all(validate_trajectory(t, tol=1e-6).ok for t in trajs.values())


def test_signed_flow_equals_reserve_change(small_market):
    _, _, trajs = small_market
    for t in trajs.values():
        flow = sum(e.sol_amount if e.tx_type is TxType.BUY else -e.sol_amount
                   for e in t.events if e.tx_type is not TxType.CREATE)
        assert flow == t.events[-1].v_sol - DEFAULT_PARAMS.x0


def test_token_units():
    assert TOK == 10**DEFAULT_PARAMS.token_decimals
