import pytest

from pretrust.ledger import ArbitrationRecord, produce_block
from pretrust.messages import (
    BlockExpectation,
    make_guarantee,
    make_pg1,
    make_pg2,
    make_receipt,
    make_withdrawal_request,
)
from pretrust.protocol import (
    ProtocolFailure,
    candidate_rank,
    epoch_ready,
    epoch_tick,
    file_arbitration,
    group_generate_guarantee,
    handle_withdrawal_request,
    payee_verify,
    payer_counter_sign,
    verify_txinfo,
)
from pretrust.sharding import assign_tx_shard

from helpers import add_blocks, elected, guarantee_flow, make_env, txinfo


def guard(fn, *args, **kw):
    with pytest.raises(ProtocolFailure) as exc:
        fn(*args, **kw)
    return exc.value.guard


@pytest.fixture
def env():
    return make_env(blocks_per_epoch=16)


def test_happy_path_flow_locks_collateral(env):
    payer, payee = env.clients[0], env.clients[1]
    t, pg1, pg2, g, gk = guarantee_flow(env, payer, payee)
    led = env.ledger
    assert led.account(gk.address).locked == 208
    assert led.guaranteed[t.id] == g
    assert led.spendable(payer.address) == 1000 - 104
    assert led.account(payer.address).next_txsn == 1
    assert pg1.expectation == BlockExpectation(assign_tx_shard(payer.address, 2), 0, 2)
    assert payee_verify(payee.address, g, led, expected=t)
    assert not payee_verify(payer.address, g, led)


def test_verify_txinfo_balance_boundary(env):
    payer, payee = env.clients[0], env.clients[1]
    exact = txinfo(env, payer, payee, 996, 4)
    over = txinfo(env, payer, payee, 997, 4)
    assert guard(verify_txinfo, elected(env, over)[0], over, env.ledger) == "balance"
    verify_txinfo(elected(env, exact)[0], exact, env.ledger)


def test_verify_txinfo_serial_numbers(env):
    payer, payee = env.clients[0], env.clients[1]
    ahead = txinfo(env, payer, payee, txsn=1)
    assert guard(verify_txinfo, elected(env, ahead)[0], ahead, env.ledger) == "txsn"
    t = txinfo(env, payer, payee)
    verify_txinfo(elected(env, t)[0], t, env.ledger)
    # replay of the same TxInfo, and reuse of the payee's serial number
    assert guard(verify_txinfo, elected(env, t)[0], t, env.ledger) == "txsn"
    again = txinfo(env, payer, payee, payee_sn=0)
    assert guard(verify_txinfo, elected(env, again)[0], again, env.ledger) == "txsn"


def test_verify_txinfo_needs_member_of_payer_group(env):
    payer, payee = env.clients[0], env.clients[1]
    t = txinfo(env, payer, payee)
    shard = env.shard_of(payer)
    outsider = next(k for k in env.guarantors
                    if k.address not in env.ledger.epoch.rosters[shard])
    assert guard(verify_txinfo, outsider, t, env.ledger) == "not_in_group"


def test_verify_txinfo_leaves_ledger_untouched_on_failure(env):
    payer, payee = env.clients[0], env.clients[1]
    over = txinfo(env, payer, payee, 2000, 0)
    before = len(env.ledger.journal)
    guard(verify_txinfo, elected(env, over)[0], over, env.ledger)
    assert len(env.ledger.journal) == before
    assert env.ledger.account(payer.address).next_txsn == 0


def test_overlapping_txinfos_cannot_exceed_balance(env):
    payer = env.clients[0]
    a = txinfo(env, payer, env.clients[1], 600, 0)
    verify_txinfo(elected(env, a)[0], a, env.ledger)
    b = txinfo(env, payer, env.clients[2], 600, 0)
    assert guard(verify_txinfo, elected(env, b)[0], b, env.ledger) == "balance"


def test_unknown_party_and_withdrawal_lock(env):
    from helpers import key

    stranger = key("stranger")
    t = txinfo(env, env.clients[0], stranger)
    assert guard(verify_txinfo, elected(env, t)[0], t, env.ledger) == "unknown_party"
    env.ledger.set_withdrawal_lock(env.clients[1].address, True)
    t = txinfo(env, env.clients[0], env.clients[1])
    assert guard(verify_txinfo, elected(env, t)[0], t, env.ledger) == "withdrawal_locked"


def test_payer_waits_for_priority(env):
    payer, payee = env.clients[0], env.clients[1]
    t = txinfo(env, payer, payee)
    cands = elected(env, t)
    if len(cands) < 2:
        pytest.skip("group of one")
    pg1 = verify_txinfo(cands[1], t, env.ledger)
    assert candidate_rank(pg1, env.ledger) == 1
    timeout = env.params.response_timeout
    assert guard(payer_counter_sign, payer, pg1, env.ledger, set(), elapsed=timeout - 1) == "priority"
    responded = set()
    payer_counter_sign(payer, pg1, env.ledger, responded, elapsed=timeout)
    assert guard(payer_counter_sign, payer, pg1, env.ledger, responded) == "duplicate"


def test_payer_rejects_pg1_for_other_txinfo(env):
    payer, payee = env.clients[0], env.clients[1]
    t = txinfo(env, payer, payee)
    pg1 = verify_txinfo(elected(env, t)[0], t, env.ledger)
    other = txinfo(env, payer, payee, amount=5, payee_sn=9)
    assert guard(payer_counter_sign, payer, pg1, env.ledger, set(), expected=other) == "signatures"
    assert guard(payer_counter_sign, payee, pg1, env.ledger, set()) == "signatures"


def test_payer_rejects_wrong_shard_expectation(env):
    payer, payee = env.clients[0], env.clients[1]
    t = txinfo(env, payer, payee)
    gk = elected(env, t)[0]
    wrong = (env.shard_of(payer) + 1) % 4
    pg1 = make_pg1(gk, t, 0, BlockExpectation(wrong, 0, 2))
    assert guard(payer_counter_sign, payer, pg1, env.ledger, set()) == "shard"


def _pg2(env, amount=100, fee=4):
    payer, payee = env.clients[0], env.clients[1]
    t = txinfo(env, payer, payee, amount, fee)
    gk = elected(env, t)[0]
    pg1 = verify_txinfo(gk, t, env.ledger)
    return payer_counter_sign(payer, pg1, env.ledger, set()), gk


def test_generate_guarantee_deposit_boundary():
    ok = make_env(deposit=208, blocks_per_epoch=16)
    pg2, gk = _pg2(ok)
    group_generate_guarantee(ok.group_keys(ok.shard_of(gk)), pg2, ok.ledger)
    assert ok.ledger.account(gk.address).available_deposit == 0
    short = make_env(deposit=207, blocks_per_epoch=16)
    pg2, gk = _pg2(short)
    assert guard(group_generate_guarantee, short.group_keys(short.shard_of(gk)), pg2,
                 short.ledger) == "deposit"
    assert short.ledger.account(gk.address).locked == 0


def test_generate_guarantee_at_most_once(env):
    pg2, gk = _pg2(env)
    keys = env.group_keys(env.shard_of(gk))
    group_generate_guarantee(keys, pg2, env.ledger)
    assert guard(group_generate_guarantee, keys, pg2, env.ledger) == "duplicate"


def test_generate_guarantee_requires_guarantor_group(env):
    pg2, gk = _pg2(env)
    wrong = (env.shard_of(gk) + 1) % 4
    assert guard(group_generate_guarantee, env.group_keys(wrong), pg2, env.ledger) == "group"


def test_generate_guarantee_rejects_unissued_guarsn(env):
    payer, payee = env.clients[0], env.clients[1]
    t = txinfo(env, payer, payee)
    gk = elected(env, t)[0]
    issued = verify_txinfo(gk, t, env.ledger)
    forged = make_pg1(gk, t, issued.guar_sn + 1, issued.expectation)
    pg2 = make_pg2(payer, forged)
    assert guard(group_generate_guarantee, env.group_keys(env.shard_of(gk)), pg2,
                 env.ledger) == "guarsn"


def test_payee_rejects_stale_group_signature():
    env = make_env(blocks_per_epoch=1)
    payer, payee = env.clients[0], env.clients[1]
    for _ in range(2):
        for s in range(4):
            add_blocks(env, s)
        epoch_tick(env.ledger)
    t, pg1, pg2, g, gk = guarantee_flow(env, payer, payee)
    assert payee_verify(payee.address, g, env.ledger)
    prev = env.ledger.epochs[-2]
    shard = env.shard_of(gk)
    stale = make_guarantee([env.keys[a] for a in prev.rosters[shard]], pg2, prev.index, shard,
                           list(prev.rosters[shard]))
    assert not payee_verify(payee.address, stale, env.ledger)


def test_arbitration_window_and_record_checks(env):
    payer, payee = env.clients[0], env.clients[1]
    t, pg1, pg2, g, gk = guarantee_flow(env, payer, payee)
    shard = g.expectation.shard
    assert g.expectation.height_max == 2
    add_blocks(env, shard, 3)
    assert guard(file_arbitration, payee.address, g, env.ledger) == "window_open"
    add_blocks(env, shard, 1)
    rec = file_arbitration(payee.address, g, env.ledger)
    assert (rec.compensation, rec.punishment) == (150, 50)
    assert guard(file_arbitration, payer.address, g, env.ledger) == "claimant"


def test_arbitration_fails_when_recorded(env):
    payer, payee = env.clients[0], env.clients[1]
    t, pg1, pg2, g, gk = guarantee_flow(env, payer, payee)
    add_blocks(env, g.expectation.shard, 4, records=[g])
    assert t.id in env.ledger.recorded
    assert guard(file_arbitration, payee.address, g, env.ledger) == "recorded"


def test_epoch_tick_requires_every_end_block():
    env = make_env(blocks_per_epoch=2)
    for s in range(3):
        add_blocks(env, s, 2)
    assert not epoch_ready(env.ledger)
    with pytest.raises(ProtocolFailure):
        epoch_tick(env.ledger)
    add_blocks(env, 3, 2)
    nxt = epoch_tick(env.ledger)
    assert nxt.index == 1 and env.ledger.epoch is nxt


def test_withdrawal_request_deducts_and_guards(env):
    c = env.clients[2]
    shard = env.shard_of(c)
    req = make_withdrawal_request(c, 1000)
    check = handle_withdrawal_request(env.group_keys(shard), req, env.ledger, shard)
    assert env.ledger.account(c.address).balance == 0
    assert env.ledger.escrowed(c.address) == 1000
    assert check.request == req
    assert guard(handle_withdrawal_request, env.group_keys(shard), req, env.ledger,
                 shard) == "pending"
    d = env.clients[3]
    too_much = make_withdrawal_request(d, 1001)
    sd = env.shard_of(d)
    assert guard(handle_withdrawal_request, env.group_keys(sd), too_much, env.ledger,
                 sd) == "balance"
    assert guard(handle_withdrawal_request, env.group_keys(sd),
                 make_withdrawal_request(d, 10), env.ledger, (sd + 1) % 4) == "shard"
