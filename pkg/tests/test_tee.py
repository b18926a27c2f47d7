import pytest

from pretrust.external_chain import PublicChainState, Status, sign_registration
from pretrust.messages import make_withdrawal_check, make_withdrawal_request
from pretrust.protocol import handle_withdrawal_request
from pretrust.tee import TeeRejection, TeeState

from helpers import key, make_env

TEE = key("tee")


def setup(token=100):
    env = make_env(blocks_per_epoch=16)
    c = env.clients[0]
    shard = env.shard_of(c)
    req = make_withdrawal_request(c, token)
    check = handle_withdrawal_request(env.group_keys(shard), req, env.ledger, shard)
    return env, c, check, TeeState(TEE, env.ledger)


def test_submit_locks_and_certify_unlocks():
    env, c, check, tee = setup()
    tee.tee_submit_check(check, 10)
    assert env.ledger.account(c.address).withdrawal_locked
    with pytest.raises(TeeRejection):
        tee.tee_submit_check(check, 11)
    cert = tee.tee_certify(c.address, 15)
    assert not env.ledger.account(c.address).withdrawal_locked
    assert (cert.time, cert.addr, cert.token) == (15, c.address, 100)
    assert cert.digest in env.ledger.certified


def test_certify_rejects_mismatched_deduction():
    env, c, check, tee = setup()
    tee.tee_submit_check(check, 10)
    env.ledger.restore_withdrawal(c.address)
    env.ledger.deduct_withdrawal(c.address, 40)
    assert tee.tee_certify(c.address, 15) is None
    assert env.ledger.account(c.address).balance == 1000
    assert tee.rejections[0]["deducted"] == 40


def test_check_from_wrong_group_is_rejected_without_side_effects():
    env, c, check, tee = setup()
    shard = env.shard_of(c)
    other = (shard + 1) % 4
    roster = list(env.ledger.epoch.rosters[other])
    forged = make_withdrawal_check(env.group_keys(other), check.request, 0, other, roster)
    with pytest.raises(TeeRejection):
        tee.tee_submit_check(forged, 10)
    assert not env.ledger.account(c.address).withdrawal_locked
    with pytest.raises(TeeRejection):
        tee.tee_certify(c.address, 10)


def test_expired_certificate_restores_tokens():
    env, c, check, tee = setup()
    chain = PublicChainState(tee_pk=TEE.pk, time_interval=5_000)
    tee.tee_submit_check(check, 0)
    cert = tee.tee_certify(c.address, 0)
    assert tee.expire_certificates(5_000, chain) == []
    assert tee.expire_certificates(5_001, chain) == [cert.digest]
    assert env.ledger.account(c.address).balance == 1000
    assert chain.withdraw(cert, 5_001) is Status.FAILURE


def test_redeemed_certificate_does_not_expire():
    env, c, check, tee = setup()
    chain = PublicChainState(tee_pk=TEE.pk, time_interval=5_000)
    chain.fund(c.address, 1000)
    chain.register_account(c.address, 1000, "client", sign_registration(c, 1000, "client"))
    tee.tee_submit_check(check, 0)
    cert = tee.tee_certify(c.address, 0)
    assert chain.withdraw(cert, 10) is Status.SUCCESS
    env.ledger.finalize_withdrawal(cert.digest)
    assert tee.expire_certificates(9_999, chain) == []
