"""Scripted, seeded end-to-end runs.

A scenario is a JSON document ``{"name": ..., "steps": [...]}``; every step
is an object whose ``action`` selects one of the handlers below.  The whole
run happens inside :func:`crypto.seeded`, so the same seed gives the same
keys, nonces and therefore the same state hashes on every run.
"""

from __future__ import annotations

import hashlib
import json
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

from pydantic import BaseModel, ConfigDict, Field

from . import crypto, devnet
from .client import (
    MisbehaviorEvidence,
    PdoClient,
    PdoHandle,
    Prepared,
    StaleStateConflict,
    VerificationFailed,
)
from .enclave import EnclaveError
from .enclave_service import Adversarial, ServiceUnavailable
from .interpreter import encode_value, from_json, to_json, values_equal
from .ledger import Ledger, TransactionRejected
from .records import CclUpdate, Dependency, Transaction


class ScenarioFailed(Exception):
    def __init__(self, step: int, action: str, reason: str):
        self.step = step
        self.action = action
        self.reason = reason
        super().__init__(f"step {step} ({action}): {reason}")


class Step(BaseModel):
    model_config = ConfigDict(extra="allow")

    action: str


class Scenario(BaseModel):
    name: str
    description: str = ""
    steps: list[Step] = Field(min_length=1)

    @classmethod
    def load(cls, ref: str) -> Scenario:
        """A path to a JSON file, or the name of a bundled scenario."""
        path = Path(ref)
        if path.is_file():
            return cls.model_validate_json(path.read_text())
        name = ref if ref.endswith(".json") else ref + ".json"
        res = resources.files("pdo.scenarios").joinpath(name)
        if not res.is_file():
            raise FileNotFoundError(f"no scenario named {ref!r}")
        return cls.model_validate_json(res.read_text())


def bundled_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("pdo.scenarios").iterdir() if p.name.endswith(".json"))


def error_code(exc: BaseException) -> Optional[str]:
    """The enumerated reason behind any protocol failure, if it has one."""
    if isinstance(exc, TransactionRejected):
        return exc.code.value
    if isinstance(exc, (VerificationFailed, EnclaveError)):
        return exc.code
    if isinstance(exc, StaleStateConflict):
        return "stale-state"
    if isinstance(exc, ServiceUnavailable):
        return "unavailable"
    return None


def contract_args(raw: Any) -> tuple:
    """JSON arguments to contract values; ``{"$digest": s}`` is replaced by the digest of ``s``."""
    def expand(v):
        if isinstance(v, dict) and set(v) == {"$digest"}:
            return hashlib.sha256(encode_value(v["$digest"])).hexdigest()
        if isinstance(v, list):
            return [expand(x) for x in v]
        return v
    return tuple(from_json(expand(list(raw or []))))


@dataclass
class ScenarioResult:
    name: str
    seed: int
    lines: list[str]
    heads: dict[str, str]
    ledger_digest: str


@dataclass
class _Run:
    emit: Callable[[str], None]
    net: Optional[devnet.Devnet] = None
    client: Optional[PdoClient] = None
    handles: dict[str, PdoHandle] = field(default_factory=dict)
    prepared: dict[str, Prepared] = field(default_factory=dict)
    labels: dict[str, bytes] = field(default_factory=dict)
    evidence: list[MisbehaviorEvidence] = field(default_factory=list)

    # -- helpers --------------------------------------------------------------

    def world(self) -> devnet.Devnet:
        if self.net is None:
            raise ValueError("no services started; the first step must be 'start'")
        return self.net

    def handle(self, name: str) -> PdoHandle:
        if name not in self.handles:
            raise ValueError(f"unknown pdo {name!r}")
        return self.handles[name]

    def enclave(self, index: int) -> bytes:
        return self.world().enclaves[index][1]

    def deps(self, raw: list[dict] | None) -> list[Dependency]:
        out = []
        for d in raw or []:
            cid = self.handle(d["pdo"]).contract_id
            if "prepared" in d:
                state = self.prepared[d["prepared"]].output.update.new_state_hash
            else:
                state = self.labels[d["state"]]
            out.append(Dependency(contract_id=cid, state_hash=state))
        return out

    def head(self, name: str) -> Optional[bytes]:
        return self.world().ledger.get_head(self.handle(name).contract_id)

    def expect_result(self, step: Step, result: Any) -> None:
        if "expect_result" in step.model_extra:
            want = from_json(step.model_extra["expect_result"])
            if not values_equal(want, result):
                raise ValueError(f"result {to_json(result)!r} != expected {to_json(want)!r}")

    def expect_error(self, step: Step, fn: Callable[[], Any]) -> Any:
        """Run ``fn``; if the step names ``expect_error`` it must fail with that code."""
        want = step.model_extra.get("expect_error")
        try:
            value = fn()
        except Exception as exc:
            code = error_code(exc)
            if want is None or code != want:
                raise
            self.emit(f"  expected failure: {code}")
            return None
        if want is not None:
            raise ValueError(f"expected failure {want!r} but the step succeeded")
        return value

    # -- actions --------------------------------------------------------------

    def do_start(self, s: Step) -> None:
        x = s.model_extra
        self.net = devnet.start(
            ps=x.get("ps", 3), es=x.get("es", 2),
            enclaves_per_es=x.get("enclaves_per_es", 1), compromised=x.get("compromised", ()),
        )
        self.client = self.net.client(retries=x.get("retries", 3))
        self.emit(f"started {len(self.net.ps_addrs)} provisioning and {len(self.net.es_addrs)} enclave services")
        for i, (addr, eid) in enumerate(self.net.enclaves):
            self.emit(f"  enclave {i} on {addr}: {eid.hex()}")

    def do_create(self, s: Step) -> None:
        x = s.model_extra
        net = self.world()
        indices = x.get("enclaves", list(range(len(net.enclaves))))
        chosen = [net.enclaves[i] for i in indices]
        ps = x.get("ps")
        ps_addrs = [net.ps_addrs[i] for i in ps] if ps is not None else net.ps_addrs
        handle = self.client.create_pdo(
            net.owner, devnet.load_contract(x["contract"]), ps_addrs, chosen,
            init_args=contract_args(x.get("init_args")),
        )
        self.handles[x["pdo"]] = handle
        self.emit(f"created {x['pdo']} ({x['contract']}) as {handle.contract_id.hex()}")
        self.emit(f"  head {handle.state_hash.hex()}")

    def do_invoke(self, s: Step) -> None:
        x = s.model_extra
        name = x["pdo"]
        eid = self.enclave(x["enclave"]) if "enclave" in x else None
        commit = x.get("commit", True)

        def call():
            return self.client.invoke(self.handle(name), x["method"], contract_args(x.get("args")),
                                      self.deps(x.get("deps")), eid, commit=commit)
        out = self.expect_error(s, call)
        if out is None:
            return
        result, handle = out
        self.handles[name] = handle
        self.expect_result(s, result)
        if "save_state" in x:
            self.labels[x["save_state"]] = handle.state_hash
        tail = f" -> head {handle.state_hash.hex()}" if commit else " (not committed)"
        self.emit(f"{name}.{x['method']} = {json.dumps(to_json(result))}{tail}")

    def do_prepare(self, s: Step) -> None:
        x = s.model_extra
        handle = self.client.refresh(self.handle(x["pdo"]))
        eid = self.enclave(x["enclave"]) if "enclave" in x else None
        p = self.client.prepare(handle, x["method"], contract_args(x.get("args")), self.deps(x.get("deps")), eid)
        self.prepared[x["as"]] = p
        self.expect_result(s, p.result)
        self.emit(f"prepared {x['as']}: {x['pdo']}.{x['method']} -> {p.output.update.new_state_hash.hex()}")

    def do_commit(self, s: Step) -> None:
        x = s.model_extra
        p = self.prepared[x["prepared"]]
        handle = self.expect_error(s, lambda: self.client.commit(p))
        if handle is None:
            return
        name = next(n for n, h in self.handles.items() if h.contract_id == p.handle.contract_id)
        self.handles[name] = handle
        self.emit(f"committed {x['prepared']} -> head {handle.state_hash.hex()}")

    def do_adversarial(self, s: Step) -> None:
        x = s.model_extra
        mode = x.get("mode")
        svc = self.world().service(x["es"])
        svc.adversarial = Adversarial(mode) if mode else None
        self.emit(f"{svc.name} adversarial mode: {mode or 'off'}")

    def do_expect_tamper(self, s: Step) -> None:
        """Invoke through a misbehaving service; the call must fail and the head must not move."""
        x = s.model_extra
        name = x["pdo"]
        before = self.head(name)
        eid = self.enclave(x["enclave"]) if "enclave" in x else None
        try:
            self.client.invoke(self.handle(name), x["method"], contract_args(x.get("args")), (), eid)
        except Exception as exc:
            code = error_code(exc)
            if code != x["code"]:
                raise ValueError(f"expected {x['code']!r}, got {code!r} ({exc})") from None
        else:
            raise ValueError("tampered invocation was accepted")
        if self.head(name) != before:
            raise ValueError("ledger head moved")
        self.emit(f"tamper detected, no commit ({x['code']})")

    def do_replicate(self, s: Step) -> None:
        x = s.model_extra
        name = x["pdo"]
        eids = [self.enclave(i) for i in x["enclaves"]] if "enclaves" in x else None
        out = self.client.replicated_invoke(
            self.handle(name), x["method"], contract_args(x.get("args")), self.deps(x.get("deps")),
            eids, k=x.get("k", 3))
        self.handles[name] = out.handle
        self.expect_result(s, out.result)
        self.evidence.extend(out.evidence)
        self.emit(f"{name}.{x['method']} replicated: {len(out.agreeing)} agree, "
                  f"{len(out.suspects)} suspect, {len(out.evidence)} equivocation proof(s)")
        self.emit(f"  head {out.handle.state_hash.hex()}")
        if "expect_evidence" in x and len(out.evidence) != x["expect_evidence"]:
            raise ValueError(f"expected {x['expect_evidence']} equivocation proofs, got {len(out.evidence)}")

    def do_revoke(self, s: Step) -> None:
        if not self.evidence:
            raise ValueError("no misbehaviour evidence collected")
        ledger = self.world().ledger
        for ev in self.evidence:
            self.client.submit_revocation(ev)
            rec = ledger.get_enclave(ev.enclave_id)
            if rec is None or not rec.revoked:
                raise ValueError("enclave still active after evidence was accepted")
            self.emit(f"enclave revoked: {ev.enclave_id.hex()}")
        self.evidence.clear()

    def do_submit_unchecked(self, s: Step) -> None:
        """Run a call on one enclave and submit its update without any client checks."""
        x = s.model_extra
        net = self.world()
        handle = self.client.refresh(self.handle(x["pdo"]))
        addr, eid = net.enclaves[x["enclave"]]
        channel = crypto.SigningKeyPair.generate()
        req = self.client._request(handle, x["method"], contract_args(x.get("args")), (), channel)
        su = net.network.es(addr).relay_invoke(eid, req).signed_update
        txn = Transaction.build(CclUpdate(update=su.update, enclave_id=su.enclave_id, enclave_sig=su.enclave_sig),
                                channel)
        before = self.head(x["pdo"])
        self.expect_error(s, lambda: net.ledger.submit(txn))
        if "expect_error" in x and self.head(x["pdo"]) != before:
            raise ValueError("ledger head moved")
        self.emit(f"unchecked update from enclave {x['enclave']} handled by ledger")

    def do_snapshot(self, s: Step) -> None:
        x = s.model_extra
        self.labels[x["as"]] = self.head(x["pdo"])

    def do_assert_head(self, s: Step) -> None:
        x = s.model_extra
        head = self.head(x["pdo"])
        if "equals" in x and head != self.labels[x["equals"]]:
            raise ValueError(f"head of {x['pdo']} differs from {x['equals']}")
        self.emit(f"head of {x['pdo']} as expected")

    def do_assert_chain(self, s: Step) -> None:
        x = s.model_extra
        n = len(self.world().ledger.chain(self.handle(x["pdo"]).contract_id))
        if n != x["length"]:
            raise ValueError(f"chain of {x['pdo']} has {n} entries, expected {x['length']}")
        self.emit(f"chain of {x['pdo']} has {n} entries")

    def do_replay(self, s: Step) -> None:
        ledger = self.world().ledger
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ledger.log"
            ledger.persist_log(path)
            again = Ledger.replay_log(path, ledger.genesis)
        if again.state_digest() != ledger.state_digest():
            raise ValueError("replayed ledger differs")
        self.emit(f"replay of {ledger.height()} transactions reproduces the ledger")

    def do_log(self, s: Step) -> None:
        self.emit(s.model_extra.get("message", ""))


def run(scenario: Scenario, seed: int, emit: Callable[[str], None] = print) -> ScenarioResult:
    lines: list[str] = []

    def out(line: str) -> None:
        lines.append(line)
        emit(line)

    state = _Run(out)
    out(f"scenario {scenario.name} seed {seed}")
    with crypto.seeded(seed):
        for i, step in enumerate(scenario.steps, start=1):
            handler = getattr(state, "do_" + step.action.replace("-", "_"), None)
            if handler is None:
                raise ScenarioFailed(i, step.action, "unknown action")
            try:
                handler(step)
            except ScenarioFailed:
                raise
            except Exception as exc:
                code = error_code(exc)
                reason = f"{code}: {exc}" if code else f"{type(exc).__name__}: {exc}"
                raise ScenarioFailed(i, step.action, reason) from exc
    net = state.world()
    heads = {}
    for name, h in state.handles.items():
        head = net.ledger.get_head(h.contract_id)
        heads[name] = head.hex() if head else ""
        out(f"final head {name} {heads[name]}")
    digest = net.ledger.state_digest().hex()
    out(f"ledger digest {digest}")
    return ScenarioResult(scenario.name, seed, lines, heads, digest)
