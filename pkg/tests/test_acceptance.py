"""Acceptance suite: ten end-to-end properties, each reported on one line."""

import itertools
import random
import threading
import time
from collections import Counter

import pytest

from pdo import crypto, devnet
from pdo.client import MisbehaviorEvidence, VerificationFailed
from pdo.enclave import TamperedState
from pdo.enclave_service import Adversarial
from pdo.interpreter import (
    DEFAULT_MAX_STEPS,
    PRIMITIVES,
    SPECIAL_FORMS,
    Assoc,
    BudgetExhausted,
    StepBudget,
    canonicalize,
    eval_method,
    parse,
)
from pdo.ledger import Ledger, LogCorrupt, TransactionRejected
from pdo.records import (
    CclUpdate,
    ContractRevoke,
    EnclaveRevoke,
    EvidenceRevoke,
    RejectCode,
    RemoveEnclave,
    Transaction,
)

from criteria import criterion
from programs import random_program, random_state, total_contract, total_contract_call
from test_interpreter import ALLOWED_PRIMITIVES

COUNTER = devnet.bundled_contract("counter")


def persist_and_replay(ledger, path):
    ledger.persist_log(path)
    return Ledger.replay_log(path, ledger.genesis)


# 1 --------------------------------------------------------------------------

def test_happy_path(tmp_path):
    with criterion(1, "happy path: 11 chained entries, get == 10, replay validates, < 5 s"):
        start = time.perf_counter()
        net = devnet.start(ps=3, es=2)
        assert len(net.ps_addrs) == 3 and len(net.es_addrs) == 2 and len(net.enclaves) == 2
        client = net.client()
        handle = client.create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
        for i in range(10):
            result, handle = client.invoke(handle, "inc", [1], enclave_id=net.enclaves[i % 2][1])
            assert result == i + 1

        chain = net.ledger.chain(handle.contract_id)
        assert len(chain) == 11
        assert chain[-1].new_state_hash == net.ledger.get_head(handle.contract_id)
        assert {e.enclave_id for e in chain[1:]} == {eid for _, eid in net.enclaves}
        value, _ = client.invoke(handle, "get", commit=False)
        assert value == 10

        replayed = persist_and_replay(net.ledger, tmp_path / "ledger.log")
        assert replayed.height() == net.ledger.height()
        assert replayed.state_digest() == net.ledger.state_digest()
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"took {elapsed:.2f} s"


# 2 --------------------------------------------------------------------------

def test_serial_progression():
    with criterion(2, "serial progression: 100 races, one winner each, loser retries, no forks"):
        net = devnet.start(ps=2, es=2)
        a, b = net.client(), net.client()
        handle = a.create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
        expected = 0
        for rep in range(100):
            head = a.refresh(handle)
            prepared = [a.prepare(head, "inc", [1], enclave_id=net.enclaves[0][1]),
                        b.prepare(head, "inc", [2], enclave_id=net.enclaves[1][1])]
            outcomes: dict[int, object] = {}
            barrier = threading.Barrier(2)

            def race(i, c, p):
                barrier.wait()
                try:
                    outcomes[i] = c.commit(p)
                except TransactionRejected as exc:
                    outcomes[i] = exc.code

            threads = [threading.Thread(target=race, args=(i, c, p)) for i, (c, p) in enumerate(zip((a, b), prepared))]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            codes = [o for o in outcomes.values() if isinstance(o, RejectCode)]
            assert codes == [RejectCode.STALE_STATE], (rep, outcomes)
            loser = 0 if isinstance(outcomes[0], RejectCode) else 1
            winner_amount = 2 if loser == 0 else 1
            loser_client, loser_amount = (a, 1) if loser == 0 else (b, 2)
            # the loser's retry starts from the winner's state
            result, handle = loser_client.invoke(head, "inc", [loser_amount])
            expected += winner_amount + loser_amount
            assert result == expected

        assert a.invoke(handle, "get", commit=False)[0] == expected
        ccl = [t.payload.update for t in net.ledger.transactions() if isinstance(t.payload, CclUpdate)]
        successors = Counter((u.contract_id, u.prev_state_hash) for u in ccl)
        assert max(successors.values()) == 1, "fork in the log"
        assert len(net.ledger.chain(handle.contract_id)) == len(ccl) == 201


# 3 --------------------------------------------------------------------------

def _escrow_pair():
    net = devnet.start(ps=2, es=2)
    client = net.client()
    asset = client.create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
    escrow = client.create_pdo(net.owner, devnet.bundled_contract("escrow"), net.ps_addrs, net.enclaves,
                               init_args=["seller", "buyer"])
    return net, client, asset, escrow


def test_dependency_enforcement():
    with criterion(3, "dependency enforcement: missing-dependency before, accepted after, both orders"):
        # release submitted before the payment it cites
        net, client, asset, escrow = _escrow_pair()
        payment = client.prepare(asset, "inc", [100])
        s = payment.output.update.new_state_hash
        release = client.prepare(escrow, "release", ["receipt"], deps=[(asset.contract_id, s)])
        with pytest.raises(TransactionRejected) as info:
            client.commit(release)
        assert info.value.code is RejectCode.MISSING_DEPENDENCY
        assert net.ledger.get_head(escrow.contract_id) == escrow.state_hash
        client.commit(payment)
        client.commit(release)
        assert net.ledger.get_head(escrow.contract_id) == release.output.update.new_state_hash
        entry = net.ledger.get_entry(escrow.contract_id, release.output.update.new_state_hash)
        assert [(d.contract_id, d.state_hash) for d in entry.dependencies] == [(asset.contract_id, s)]

        # payment committed first: the release goes straight through
        net, client, asset, escrow = _escrow_pair()
        _, paid = client.invoke(asset, "inc", [100])
        result, released = client.invoke(escrow, "release", ["receipt"], deps=[(asset.contract_id, paid.state_hash)])
        assert result == "seller"
        assert net.ledger.get_head(escrow.contract_id) == released.state_hash


# 4 --------------------------------------------------------------------------

def _adversary_candidates(known, missing_ps, contract_id, ledger):
    """Keys an adversary can build from n-1 secrets and everything on the ledger."""
    yield crypto.derive_state_key(known, contract_id) if known else None
    public_bytes = b"".join(t.canonical() for t in ledger.transactions())
    contract = ledger.get_contract(contract_id)
    sealed = b"".join(s.sealed for pe in contract.enclaves for s in pe.sealed_secrets if s.ps_id == missing_ps)
    guesses = {bytes(32), crypto.hash(public_bytes), crypto.hash(contract_id)}
    guesses.update(sealed[i:i + 32] for i in range(len(sealed) - 31))
    for g in sorted(guesses):
        yield crypto.derive_state_key(known + [crypto.Secret(g, missing_ps)], contract_id)


@pytest.mark.parametrize("n", [2, 3])
def test_one_honest_provisioning_service(n):
    with criterion(4, "one honest PS: every leave-one-out key fails, all n secrets succeed (n=2,3)"):
        net = devnet.start(ps=n, es=2)
        client = net.client()
        handle = client.create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
        _, handle = client.invoke(handle, "inc", [7])
        blob, cid = handle.encrypted_state, handle.contract_id
        services = [net.network.provisioners[a] for a in net.ps_addrs]
        secrets = [ps.leak_secret(cid) for ps in services]

        assert crypto.decrypt_state(crypto.derive_state_key(secrets, cid), blob, cid)
        cases = 0
        for honest in range(n):
            known = [s for i, s in enumerate(secrets) if i != honest]
            assert len(list(itertools.combinations(range(n), n - 1))) == n
            tried = 0
            for key in _adversary_candidates(known, services[honest].ps_id, cid, net.ledger):
                if key is None:
                    continue
                tried += 1
                with pytest.raises(crypto.AuthenticationError):
                    crypto.decrypt_state(key, blob, cid)
            assert tried > 1
            cases += 1
        assert cases == n


# 5 --------------------------------------------------------------------------

def test_channel_unlinkability(tmp_path):
    with criterion(5, "channel unlinkability: 20 distinct channel keys, long-term key absent from log"):
        net = devnet.start(ps=2, es=2)
        handle = net.client().create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
        user = net.client()
        before = net.ledger.height()
        for i in range(20):
            _, handle = user.invoke(handle, "inc", [1], enclave_id=net.enclaves[i % 2][1])

        session = [t for t in net.ledger.transactions(before) if isinstance(t.payload, CclUpdate)]
        channels = [t.payload.update.channel_pub for t in session]
        assert len(channels) == 20 and len(set(channels)) == 20
        assert all(t.submitter_pub == t.payload.update.channel_pub for t in session)

        path = tmp_path / "ledger.log"
        net.ledger.persist_log(path)
        text = path.read_bytes()
        raw = b"".join(bytes.fromhex(line.decode()) for line in text.splitlines())
        for secret in (user.identity.public, user.identity.seed()):
            assert secret not in raw
            assert secret.hex().encode() not in text


# 6 --------------------------------------------------------------------------

def test_tamper_rejection():
    with criterion(6, "tamper rejection: input state, returned blob, update tuple; head unchanged"):
        net = devnet.start(ps=2, es=2)
        client = net.client()
        handle = client.create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
        _, handle = client.invoke(handle, "inc", [1])
        svc, eid = net.service(0), net.enclaves[0][1]
        cases = [
            (Adversarial.TAMPER_INPUT_STATE, TamperedState, "tampered-state"),
            (Adversarial.TAMPER_RESULT, VerificationFailed, "state-hash-mismatch"),
            (Adversarial.TAMPER_UPDATE, VerificationFailed, "bad-enclave-signature"),
        ]
        for mode, error, code in cases:
            head, height = net.ledger.get_head(handle.contract_id), net.ledger.height()
            svc.adversarial = mode
            with pytest.raises(error) as info:
                client.invoke(handle, "inc", [1], enclave_id=eid)
            assert info.value.code == code
            assert net.ledger.get_head(handle.contract_id) == head
            assert net.ledger.height() == height
        svc.adversarial = None
        assert client.invoke(handle, "inc", [1], enclave_id=eid)[0] == 2


# 7 --------------------------------------------------------------------------

def test_reexecution_and_revocation():
    with criterion(7, "re-execution: 2 of 3 commit, equivocation revokes, later update rejected revoked"):
        net = devnet.start(ps=2, es=3, compromised=[2])
        client = net.client()
        handle = client.create_pdo(net.owner, COUNTER, net.ps_addrs, net.enclaves)
        bad = net.enclaves[2][1]

        outcome = client.replicated_invoke(handle, "inc", [5], k=3)
        assert outcome.result == 5
        assert len(outcome.agreeing) == 2 and bad not in outcome.agreeing
        assert net.ledger.get_head(handle.contract_id) == outcome.handle.state_hash

        assert [e.enclave_id for e in outcome.evidence] == [bad]
        evidence = outcome.evidence[0]
        assert evidence.first.update.prev_state_hash == evidence.second.update.prev_state_hash
        assert evidence.first.update.new_state_hash != evidence.second.update.new_state_hash
        client.submit_revocation(evidence)
        assert net.ledger.get_enclave(bad).revoked
        assert any(isinstance(t.payload, EvidenceRevoke) for t in net.ledger.transactions())

        # the revoked enclave still signs; the ledger no longer listens
        channel = crypto.SigningKeyPair.generate()
        current = client.refresh(outcome.handle)
        req = client._request(current, "inc", [1], (), channel)
        out = net.network.services[net.enclaves[2][0]].relay_invoke(bad, req)
        su = out.signed_update
        txn = Transaction.build(CclUpdate(update=su.update, enclave_id=bad, enclave_sig=su.enclave_sig), channel)
        with pytest.raises(TransactionRejected) as info:
            net.ledger.submit(txn)
        assert info.value.code is RejectCode.REVOKED


# 8 --------------------------------------------------------------------------

def test_honest_determinism():
    with criterion(8, "honest determinism: 200 random triples, identical outputs on two enclaves"):
        rng = random.Random(8)
        with crypto.seeded(8):
            net = devnet.start(ps=2, es=2)
        client = net.client()
        (addr_a, eid_a), (addr_b, eid_b) = net.enclaves
        es_a, es_b = net.network.services[addr_a], net.network.services[addr_b]
        assert es_a.platform_key != es_b.platform_key
        for i in range(200):
            code = total_contract(rng)
            handle = client.create_pdo(net.owner, code, net.ps_addrs, net.enclaves,
                                       init_method="put", init_args=[random_state(rng)])
            method, args = total_contract_call(rng, code)
            req = client._request(handle, method, args, (), crypto.SigningKeyPair.generate())
            out_a, out_b = es_a.relay_invoke(eid_a, req), es_b.relay_invoke(eid_b, req)
            assert out_a.encrypted_state == out_b.encrypted_state, i
            assert out_a.update.new_state_hash == out_b.update.new_state_hash, i
            assert out_a.result == out_b.result, i


# 9 --------------------------------------------------------------------------

def _mixed_session(target=50):
    net = devnet.start(ps=2, es=2, enclaves_per_es=2, compromised=[3])
    client = net.client()
    e = net.enclaves
    a = client.create_pdo(net.owner, COUNTER, net.ps_addrs, e[:2])
    b = client.create_pdo(net.owner, COUNTER, net.ps_addrs, [e[0], e[3]])
    c = client.create_pdo(net.owner, COUNTER, net.ps_addrs, e[:1])
    net.ledger.submit(Transaction.build(ContractRevoke(contract_id=c.contract_id), net.owner))

    # equivocation by the compromised enclave, then its removal from contract b
    req = client._request(client.refresh(b), "inc", [1], (), crypto.SigningKeyPair.generate())
    svc = net.network.services[e[3][0]]
    first, second = svc.relay_invoke(e[3][1], req), svc.relay_invoke(e[3][1], req)
    client.submit_revocation(MisbehaviorEvidence(first.signed_update, second.signed_update))
    net.ledger.submit(Transaction.build(RemoveEnclave(contract_id=b.contract_id, enclave_id=e[3][1]), net.owner))
    net.ledger.submit(Transaction.build(EnclaveRevoke(enclave_id=e[2][1]), net.owner))

    handles = {"a": a, "b": b}
    i = 0
    while net.ledger.height() < target:
        name = "ab"[i % 2]
        _, handles[name] = client.invoke(handles[name], "inc", [i], enclave_id=e[i % 2 if name == "a" else 0][1])
        i += 1
    return net, [a.contract_id, b.contract_id, c.contract_id]


def test_ledger_replay(tmp_path):
    with criterion(9, "ledger replay: 50 mixed transactions replay identically; any byte flip aborts at its line"):
        net, contracts = _mixed_session()
        assert net.ledger.height() == 50
        families = Counter(t.family for t in net.ledger.transactions())
        assert set(families) == {"enclave-registry", "contract-registry", "ccl"}

        path = tmp_path / "ledger.log"
        replayed = persist_and_replay(net.ledger, path)
        assert replayed.state.enclaves == net.ledger.state.enclaves
        assert replayed.state.contracts == net.ledger.state.contracts
        for cid in contracts:
            assert replayed.get_head(cid) == net.ledger.get_head(cid)
        assert replayed.state_digest() == net.ledger.state_digest()

        data = path.read_bytes()
        lines = data.split(b"\n")[:-1]
        assert len(lines) == 50
        starts = list(itertools.accumulate([0] + [len(x) + 1 for x in lines]))
        rng = random.Random(9)
        positions = set()
        for k, line in enumerate(lines):
            begin, end = starts[k], starts[k] + len(line)
            positions.update({begin, end - 1, end})  # first byte, last byte, newline
            positions.update(rng.randrange(begin, end) for _ in range(8))
        mutated = tmp_path / "mutated.log"
        hexdigits = b"0123456789abcdef"
        for pos in sorted(positions):
            line_no = next(k for k in range(50) if starts[k] <= pos < starts[k + 1]) + 1
            old = data[pos]
            replacement = rng.choice([d for d in hexdigits if d != old]) if rng.random() < 0.8 else rng.choice(b"\nxZ \x00")
            if replacement == old:
                replacement = ord("0") if old != ord("0") else ord("1")
            mutated.write_bytes(data[:pos] + bytes([replacement]) + data[pos + 1:])
            with pytest.raises(LogCorrupt) as info:
                Ledger.replay_log(mutated, net.ledger.genesis)
            assert info.value.line == line_no, (pos, old, replacement, info.value)
        assert len(positions) >= 50 * 3


# 10 -------------------------------------------------------------------------

def test_interpreter_sandbox_and_budget():
    with criterion(10, "interpreter: 10^6-step budget stops a loop in < 2 s, allowlist audit, canonical idempotence"):
        assert DEFAULT_MAX_STEPS == 10**6
        program = parse("(contract (method loop () (loop)))")
        budget = StepBudget()
        start = time.perf_counter()
        with pytest.raises(BudgetExhausted):
            eval_method(program, "loop", Assoc(), (), budget)
        elapsed = time.perf_counter() - start
        assert budget.used == DEFAULT_MAX_STEPS + 1
        assert elapsed < 2.0, f"took {elapsed:.2f} s"

        assert set(PRIMITIVES) == ALLOWED_PRIMITIVES
        assert set(SPECIAL_FORMS) == {"quote", "if", "let", "lambda", "begin", "and", "or"}

        rng = random.Random(10)
        for _ in range(1000):
            text = random_program(rng)
            once = canonicalize(parse(text))
            assert canonicalize(parse(once)) == once
            assert parse(once).code_hash == parse(text).code_hash
