import json

from pretrust.external_chain import PublicChainState, Status, sign_registration
from pretrust.messages import make_certification

from helpers import key

TEE = key("tee")
ALICE = key("alice")


def chain(balance=500):
    c = PublicChainState(tee_pk=TEE.pk, time_interval=5_000)
    c.fund(ALICE.address, balance)
    return c


def register(c, deposit, kind="client", keys=ALICE):
    return c.register_account(keys.address, deposit, kind, sign_registration(keys, deposit, kind))


def test_register_balance_boundary():
    c = chain(500)
    snap = c.snapshot()
    assert register(c, 501) is Status.FAILURE
    assert c.snapshot() == snap
    assert register(c, 500) is Status.SUCCESS
    assert c.balances[ALICE.address] == 0 and c.contract_balance == 500
    assert c.read_membership()[0].deposit == 500


def test_register_rejects_bad_signature_kind_and_duplicates():
    c = chain(1000)
    bob = key("bob")
    sig = sign_registration(bob, 100, "client")
    assert c.register_account(ALICE.address, 100, "client", sig) is Status.FAILURE
    assert register(c, 100, kind="miner") is Status.FAILURE
    assert register(c, 0) is Status.FAILURE
    assert register(c, 100) is Status.SUCCESS
    assert register(c, 100) is Status.FAILURE
    assert c.contract_balance == 100


def test_withdraw_time_boundary_inclusive():
    c = chain(1000)
    register(c, 1000)
    cert = make_certification(TEE, 1_000, ALICE.address, 50)
    assert c.withdraw(cert, 6_001) is Status.FAILURE
    assert c.withdraw(cert, 999) is Status.FAILURE
    assert c.withdraw(cert, 6_000) is Status.SUCCESS
    assert c.balances[ALICE.address] == 50 and c.contract_balance == 950


def test_withdraw_once_and_only_with_tee_key():
    c = chain(1000)
    register(c, 1000)
    cert = make_certification(TEE, 0, ALICE.address, 50)
    assert c.withdraw(cert, 10) is Status.SUCCESS
    assert c.withdraw(cert, 11) is Status.FAILURE
    forged = make_certification(ALICE, 0, ALICE.address, 50)
    assert c.withdraw(forged, 10) is Status.FAILURE
    greedy = make_certification(TEE, 0, ALICE.address, 10_000)
    assert c.withdraw(greedy, 10) is Status.FAILURE
    assert c.check_invariant()
    assert c.contract_balance == 950


def test_call_log_is_json_lines():
    c = chain()
    register(c, 100)
    register(c, 10_000)
    lines = [json.loads(x) for x in c.export_call_log().splitlines()]
    assert [x["status"] for x in lines] == ["SUCCESS", "FAILURE"]
    assert all(x["call"] == "RegisterAccount" for x in lines)


def test_deactivate():
    c = chain()
    register(c, 100)
    c.deactivate(ALICE.address)
    assert not c.read_membership()[0].active
