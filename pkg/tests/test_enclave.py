from dataclasses import replace

import pytest

from pdo import crypto, devnet
from pdo.enclave import (
    BadRequest,
    ContractEnclave,
    ExecutionFailed,
    NotProvisioned,
    ProvisioningFailed,
    TamperedState,
    invocation_message,
    seal_identity,
    unseal_identity,
)
from pdo.enclave_service import Adversarial, EnclaveService, RegistrationAborted, ServiceUnavailable, UnknownEnclave
from pdo.interpreter import decode_value, encode_value, parse
from pdo.records import EMPTY, Dependency, secret_message


def request(client, handle, method, args=(), deps=()):
    channel = crypto.SigningKeyPair.generate()
    return client._request(handle, method, args, tuple(deps), channel), channel


def hosted(net, i=0):
    addr, eid = net.enclaves[i]
    return net.network.services[addr].enclave(eid)


# -- identity -----------------------------------------------------------------

def test_sealed_identity_only_opens_on_its_platform():
    enclave, quote, sealed = ContractEnclave.create(b"\x01" * 32)
    again = ContractEnclave.from_sealed(b"\x01" * 32, sealed)
    assert again.enclave_id == enclave.enclave_id and again.enc_pub == enclave.enc_pub
    assert quote == again.quote()
    with pytest.raises(crypto.AuthenticationError):
        unseal_identity(b"\x02" * 32, sealed)
    assert seal_identity(b"\x01" * 32, again._identity) != sealed  # fresh nonce per seal


def test_quote_binds_both_keys():
    enclave, quote, _ = ContractEnclave.create(bytes(32))
    assert quote.report_data == crypto.hash(enclave.verif_pub + enclave.enc_pub)
    assert enclave.enclave_id == crypto.hash(enclave.verif_pub)


# -- provisioning -------------------------------------------------------------

def test_provisioning_is_all_or_nothing(net, counter):
    svc = net.service(0)
    eid = svc.launch_and_register(net.owner)
    enclave = svc.enclave(eid)
    contract = net.ledger.get_contract(counter.contract_id)
    secrets = [net.network.provisioners[a].provision(counter.contract_id, eid) for a in net.ps_addrs]

    with pytest.raises(ProvisioningFailed):
        enclave.accept_provisioning(counter.contract_id, contract.ps_list, secrets[:2])
    with pytest.raises(ProvisioningFailed):
        enclave.accept_provisioning(counter.contract_id, contract.ps_list, [secrets[0], secrets[0], secrets[1]])
    forged = secrets[1].model_copy(update={"ps_sig": net.owner.sign(b"x")})
    with pytest.raises(ProvisioningFailed, match="bad signature"):
        enclave.accept_provisioning(counter.contract_id, contract.ps_list, [secrets[0], forged, secrets[2]])
    # a secret sealed to a different enclave does not open here
    other = net.enclaves[0][1]
    foreign = net.network.provisioners[net.ps_addrs[2]].provision(counter.contract_id, other)
    resigned = net.network.provisioners[net.ps_addrs[2]].keys.sign(
        secret_message(counter.contract_id, eid, foreign.sealed))
    foreign = foreign.model_copy(update={"ps_sig": resigned})
    with pytest.raises(ProvisioningFailed, match="does not unseal"):
        enclave.accept_provisioning(counter.contract_id, contract.ps_list, [secrets[0], secrets[1], foreign])
    assert not enclave.is_provisioned(counter.contract_id)

    enclave.accept_provisioning(counter.contract_id, contract.ps_list, secrets)
    assert enclave.is_provisioned(counter.contract_id)


def test_all_enclaves_of_a_contract_share_one_key(net, counter):
    assert hosted(net, 0)._keys[counter.contract_id] == hosted(net, 1)._keys[counter.contract_id]


# -- invocation ---------------------------------------------------------------

def test_invocation_output_is_bound_to_its_request(net, counter, client):
    req, channel = request(client, counter, "inc", [5])
    out = hosted(net).invoke(req)
    u = out.update
    assert u.prev_state_hash == counter.state_hash
    assert u.new_state_hash == crypto.hash(out.encrypted_state)
    assert u.channel_pub == channel.public
    assert u.message_hash == crypto.hash(req.message())
    assert out.result_value() == 5
    assert crypto.verify_quietly(hosted(net).verif_pub, u.signing_message(), out.signed_update.enclave_sig)


def test_state_is_encrypted_and_chained(net, counter, client):
    req, _ = request(client, counter, "inc", [5])
    out = hosted(net).invoke(req)
    key = hosted(net)._keys[counter.contract_id]
    plain = crypto.decrypt_state(key, out.encrypted_state, counter.contract_id)
    assert plain[:32] == counter.state_hash
    assert decode_value(plain[32:]).get("count") == 5
    assert encode_value(5) not in out.encrypted_state


def test_enclave_rejects_bad_requests(net, counter, client):
    enclave = hosted(net)
    req, _ = request(client, counter, "inc", [1])
    with pytest.raises(BadRequest, match="channel signature"):
        enclave.invoke(req.model_copy(update={"method": "get"}))
    with pytest.raises(BadRequest, match="channel signature"):
        enclave.invoke(req, [Dependency(contract_id=bytes(32), state_hash=bytes(32))])
    with pytest.raises(BadRequest, match="does not parse"):
        enclave.invoke(req.model_copy(update={"code": "(contract"}))

    other_code = counter.code.replace("(+ ", "(- ")
    forged, _ = request(client, replace(counter, code=other_code), "inc", [1])
    with pytest.raises(BadRequest, match="does not belong"):
        enclave.invoke(forged)

    ch = crypto.SigningKeyPair.generate()
    for args in (b"\xff", encode_value(1)):
        raw = client._request(counter, "inc", [1], (), ch).model_copy(update={"args": args})
        raw = raw.model_copy(update={"channel_sig": ch.sign(invocation_message(
            counter.contract_id, parse(counter.code).code_hash, counter.owner_pub, counter.nonce,
            raw.message(), ch.public, ()))})
        with pytest.raises(BadRequest, match="arguments"):
            enclave.invoke(raw)


def test_unprovisioned_enclave_refuses(net, counter, client):
    eid = net.service(0).launch_and_register(net.owner)
    req, _ = request(client, counter, "inc", [1])
    with pytest.raises(NotProvisioned):
        net.service(0).enclave(eid).invoke(req)


def test_tampered_state_is_detected_inside(net, counter, client):
    req, _ = request(client, counter, "inc", [1])
    blob = bytearray(req.encrypted_state)
    blob[40] ^= 1
    with pytest.raises(TamperedState):
        hosted(net).invoke(req.model_copy(update={"encrypted_state": bytes(blob)}))


def test_state_of_another_contract_does_not_open(net, counter, client):
    other = client.create_pdo(net.owner, counter.code, net.ps_addrs, net.enclaves)
    req, _ = request(client, counter, "inc", [1])
    with pytest.raises(TamperedState):
        hosted(net).invoke(req.model_copy(update={"encrypted_state": other.encrypted_state}))


def test_contract_errors_become_execution_failures(net, counter, client):
    req, _ = request(client, counter, "inc", ["x"])
    with pytest.raises(ExecutionFailed):
        hosted(net).invoke(req)
    req, _ = request(client, counter, "nope")
    with pytest.raises(ExecutionFailed):
        hosted(net).invoke(req)


def test_step_budget_is_enforced_in_the_enclave():
    with crypto.seeded(1):
        net = devnet.start(ps=1, es=1, max_steps=50)
        client = net.client()
        code = "(contract (method init () (list (assoc) 0)) (method spin (n) (if (= n 0) (list state 0) (spin (- n 1)))))"
        handle = client.create_pdo(net.owner, code, net.ps_addrs, net.enclaves)
        req, _ = request(client, handle, "spin", [1000])
        with pytest.raises(ExecutionFailed, match="Budget"):
            net.service(0).enclave(net.enclaves[0][1]).invoke(req)


def test_key_export_requires_compromise(net, counter):
    with pytest.raises(PermissionError):
        hosted(net).export_state_key(counter.contract_id)


def test_compromised_enclave_equivocates():
    net = devnet.start(ps=1, es=2, compromised=[1])
    client = net.client()
    handle = client.create_pdo(net.owner, devnet.bundled_contract("counter"), net.ps_addrs, net.enclaves)
    bad = hosted(net, 1)
    req, _ = request(client, handle, "inc", [1])
    a, b = bad.invoke(req), bad.invoke(req)
    assert a.update.new_state_hash != b.update.new_state_hash
    assert bad.export_state_key(handle.contract_id) == hosted(net, 0)._keys[handle.contract_id]


def test_honest_enclaves_agree(net, counter, client):
    req, _ = request(client, counter, "inc", [2])
    a, b = hosted(net, 0).invoke(req), hosted(net, 1).invoke(req)
    assert a.encrypted_state == b.encrypted_state
    assert a.update == b.update


def test_first_invocation_starts_from_empty(net, client):
    handle = client.create_pdo(net.owner, devnet.bundled_contract("counter"), net.ps_addrs, net.enclaves)
    first = net.ledger.chain(handle.contract_id)[0]
    assert first.prev_state_hash == EMPTY


# -- enclave service ----------------------------------------------------------

def test_unknown_enclave(net):
    with pytest.raises(UnknownEnclave):
        net.service(0).enclave(bytes(32))


def test_untrusted_build_is_not_registered(net):
    with pytest.raises(RegistrationAborted, match="FAILED"):
        net.service(0).launch_and_register(net.owner, build_id="debug")


def test_registration_rejected_by_ledger_leaves_nothing_hosted(net):
    from pdo.attestation import AttestationService
    rogue = EnclaveService(net.ledger, AttestationService())
    with pytest.raises(RegistrationAborted, match="bad-attestation"):
        rogue.launch_and_register(net.owner)
    assert rogue.enclave_ids() == []


def test_restart_keeps_enclaves_with_sealed_keys(tmp_path, net):
    svc = EnclaveService(net.ledger, net.ias, storage_dir=tmp_path)
    keep = svc.launch_and_register(net.owner)
    lose = svc.launch_and_register(net.owner)
    svc.delete_sealed_keys(lose)
    svc.restart()
    assert svc.enclave_ids() == [keep]
    # a new process on the same storage directory recovers the platform key
    again = EnclaveService(net.ledger, net.ias, storage_dir=tmp_path)
    assert again.platform_key == svc.platform_key


def test_lost_sealed_keys_lose_access_but_not_state(net, counter, client):
    svc = net.service(0)
    eid = net.enclaves[0][1]
    svc.delete_sealed_keys(eid)
    svc.restart()
    with pytest.raises(UnknownEnclave):
        svc.enclave(eid)
    # the other enclave still holds the contract key
    result, _ = client.invoke(counter, "inc", [3], enclave_id=net.enclaves[1][1])
    assert result == 3


def test_restart_requires_reprovisioning(net, counter, client):
    svc = net.service(0)
    svc.restart()
    eid = net.enclaves[0][1]
    assert svc.enclave(eid).enclave_id == eid
    assert not svc.enclave(eid).is_provisioned(counter.contract_id)


def test_state_cache(net, counter):
    assert net.service(0).fetch_state(counter.state_hash) == counter.encrypted_state
    assert net.service(0).fetch_state(bytes(32)) is None


@pytest.mark.parametrize("mode", list(Adversarial))
def test_adversarial_modes_are_caught(net, counter, client, mode):
    svc = net.service(0)
    eid = net.enclaves[0][1]
    client.invoke(counter, "inc", [1], enclave_id=eid)  # gives replay something to replay
    svc.adversarial = mode
    head = net.ledger.get_head(counter.contract_id)
    handle = client.refresh(counter)
    req, _ = request(client, handle, "inc", [1])
    if mode is Adversarial.DROP_RESPONSE:
        with pytest.raises(ServiceUnavailable):
            svc.relay_invoke(eid, req)
    elif mode is Adversarial.TAMPER_INPUT_STATE:
        with pytest.raises(TamperedState):
            svc.relay_invoke(eid, req)
    else:
        out = svc.relay_invoke(eid, req)
        with pytest.raises(Exception) as info:
            client.check_output(handle, req, (), eid, out)
        assert type(info.value).__name__ == "VerificationFailed"
    assert net.ledger.get_head(counter.contract_id) == head
