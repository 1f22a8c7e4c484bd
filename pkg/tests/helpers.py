from pumpgrad.ingest import TradeEvent, TxType

SOL = 10**9
TOK = 10**6


def ev(mint, i, tx, v_sol_sol, *, t=None, trader="W0", creator="C0", sol=0.0, bot=0,
       in_curve=True):
    """Hand-built event; reserves are not required to satisfy the invariant."""
    return TradeEvent(
        timestamp=float(i if t is None else t),
        signature=f"{mint}-{i:04d}",
        mint=mint,
        coin_creator=creator,
        trader=trader,
        tx_type=TxType(tx),
        in_bonding_curve=in_curve,
        v_sol=int(round(v_sol_sol * SOL)),
        v_tok=1_000 * TOK,
        sol_amount=0 if tx == "create" else int(round(sol * SOL)),
        token_amount=0 if tx == "create" else TOK,
        is_bot=bot,
    )


def path(mint, levels, *, creator="C0", traders=None, bots=None, t0=0.0, dt=1.0):
    """Create event at 30 followed by buys/sells walking through ``levels``."""
    out = [ev(mint, 0, "create", 30, t=t0, creator=creator, trader=creator)]
    prev = 30.0
    for j, v in enumerate(levels, start=1):
        tx = "buy" if v >= prev else "sell"
        out.append(ev(mint, j, tx, v, t=t0 + j * dt, creator=creator,
                      trader=(traders[j - 1] if traders else f"W{j}"),
                      sol=abs(v - prev), bot=(bots[j - 1] if bots else 0)))
        prev = v
    return out
