"""``pdo`` command line.

Service commands (``... serve``) run one party behind HTTP.  The ``owner``,
``user`` and ``inspect`` commands are thin clients of those services.
``devnet`` starts every party in one process; ``scenario run`` needs no
services at all.

Failures exit with status 1 and print ``{"error": <code>, "detail": ...}``
on stderr.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
import threading
import time
from dataclasses import replace
from pathlib import Path

import click
import httpx

from . import crypto
from .attestation import DEFAULT_BUILD_ID, AttestationService, enclave_measurement
from .client import (
    CreationAborted,
    NoMajority,
    PdoClient,
    PdoHandle,
    StateUnavailable,
)
from .devnet import load_contract
from .enclave_service import Adversarial
from .interpreter import ParseError, ValueEncodingError, from_json, to_json
from .ledger import Genesis, Ledger, LogCorrupt
from .provisioning import ProvisioningRefused
from .records import Dependency
from .scenario import Scenario, ScenarioFailed, bundled_scenarios, error_code, run

DEFAULT_LEDGER = "127.0.0.1:8700"


class CliFailure(Exception):
    def __init__(self, code: str, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(detail or code)


def _classify(exc: BaseException) -> tuple[str, str]:
    if isinstance(exc, CliFailure):
        return exc.code, exc.detail
    if isinstance(exc, CreationAborted):
        code, _ = _classify(exc.cause)
        return code, f"{exc.stage}: {exc.cause}"
    code = error_code(exc)
    if code:
        return code, str(exc)
    if isinstance(exc, ProvisioningRefused):
        return exc.code, str(exc)
    if isinstance(exc, ScenarioFailed):
        return "scenario-failed", str(exc)
    if isinstance(exc, LogCorrupt):
        return "log-corrupt", str(exc)
    if isinstance(exc, NoMajority):
        return "no-majority", str(exc)
    if isinstance(exc, StateUnavailable):
        return "state-unavailable", str(exc)
    if isinstance(exc, httpx.TransportError):
        return "connection", str(exc)
    if isinstance(exc, (ParseError, ValueEncodingError, json.JSONDecodeError, ValueError, FileNotFoundError)):
        return "validation", str(exc)
    return "internal", f"{type(exc).__name__}: {exc}"


def reports_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.exceptions.Exit:
            raise
        except click.ClickException:
            raise
        except Exception as exc:
            code, detail = _classify(exc)
            click.echo(json.dumps({"error": code, "detail": detail}), err=True)
            sys.exit(1)
    return wrapper


def _emit(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


def _load_or_create_key(path: Path) -> crypto.SigningKeyPair:
    if path.exists():
        return crypto.SigningKeyPair.from_seed(bytes.fromhex(path.read_text().strip()))
    key = crypto.SigningKeyPair.generate()
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(key.seed().hex() + "\n")
    path.chmod(0o600)
    return key


def _serve(app, host: str, port: int) -> None:
    import uvicorn

    uvicorn.run(app, host=host, port=port, log_level="warning")


host_option = click.option("--host", default="127.0.0.1", show_default=True)
ledger_option = click.option("--ledger", "ledger_addr", envvar="PDO_LEDGER", default=DEFAULT_LEDGER,
                             show_default=True, help="Ledger address (host:port).")
home_option = click.option("--home", type=click.Path(path_type=Path), envvar="PDO_HOME", default=Path(".pdo"),
                           show_default=True, help="Directory for keys and contract handles.")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log protocol steps to stderr.")
def main(verbose: bool) -> None:
    """Private data objects: confidential contracts over a shared ledger."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


# -- services -----------------------------------------------------------------

@main.group()
def ledger() -> None:
    """The ledger service."""


@ledger.command("serve")
@click.option("--genesis", "genesis_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--log", "log_path", required=True, type=click.Path(path_type=Path),
              help="Append-only transaction log; replayed on startup if it exists.")
@host_option
@click.option("--port", default=8700, show_default=True)
@reports_errors
def ledger_serve(genesis_path: Path, log_path: Path, host: str, port: int) -> None:
    from .api import ledger_app

    led = Ledger(Genesis.load(genesis_path), log_path)
    click.echo(f"ledger at height {led.height()} listening on {host}:{port}", err=True)
    _serve(ledger_app.create_app(led), host, port)


@main.group()
def ias() -> None:
    """The attestation verification simulator."""


@ias.command("init")
@click.option("--dir", "out_dir", required=True, type=click.Path(path_type=Path))
@click.option("--build-id", default=DEFAULT_BUILD_ID, show_default=True)
@reports_errors
def ias_init(out_dir: Path, build_id: str) -> None:
    """Create a root key, a known-measurements file and a matching ledger genesis."""
    out_dir.mkdir(parents=True, exist_ok=True)
    root = _load_or_create_key(out_dir / "ias.key")
    measurement = enclave_measurement(build_id)
    (out_dir / "measurements.json").write_text(json.dumps([measurement.hex()]) + "\n")
    Genesis(root.public, measurement).save(out_dir / "genesis.json")
    _emit({"root_pub": root.public.hex(), "measurement": measurement.hex(),
           "genesis": str(out_dir / "genesis.json"), "known_measurements": str(out_dir / "measurements.json")})


@ias.command("serve")
@click.option("--known-measurements", required=True, type=click.Path(exists=True, path_type=Path),
              help="JSON list of hex measurements that earn an OK verdict.")
@click.option("--key", "key_path", type=click.Path(path_type=Path), default=None,
              help="Root signing key (hex seed); created if missing.  Default: next to the measurements file.")
@host_option
@click.option("--port", default=8701, show_default=True)
@reports_errors
def ias_serve(known_measurements: Path, key_path: Path | None, host: str, port: int) -> None:
    from .api import ias_app

    good = [bytes.fromhex(m) for m in json.loads(known_measurements.read_text())]
    root = _load_or_create_key(key_path or known_measurements.parent / "ias.key")
    svc = AttestationService(root, good)
    click.echo(f"attestation simulator {root.public.hex()[:16]} listening on {host}:{port}", err=True)
    _serve(ias_app.create_app(svc), host, port)


@main.group()
def ps() -> None:
    """A provisioning service."""


@ps.command("serve")
@click.option("--store", required=True, type=click.Path(path_type=Path))
@ledger_option
@host_option
@click.option("--port", default=8710, show_default=True)
@reports_errors
def ps_serve(store: Path, ledger_addr: str, host: str, port: int) -> None:
    from .api import RemoteLedger, ps_app
    from .provisioning import ProvisioningService

    svc = ProvisioningService(RemoteLedger(ledger_addr), store_dir=store)
    click.echo(f"provisioning service {svc.ps_id.hex()[:16]} listening on {host}:{port}", err=True)
    _serve(ps_app.create_app(svc), host, port)


@main.group()
def es() -> None:
    """An enclave service."""


@es.command("serve")
@ledger_option
@click.option("--ias", "ias_addr", required=True, help="Attestation simulator address.")
@click.option("--adversarial", type=click.Choice([m.value for m in Adversarial]),
              default=None, help="Misbehave in the given way (testing only).")
@click.option("--store", type=click.Path(path_type=Path), default=None, help="Sealed storage directory.")
@click.option("--enclaves", "launch", default=0, show_default=True, help="Enclaves to launch at startup.")
@host_option
@click.option("--port", default=8720, show_default=True)
@reports_errors
def es_serve(ledger_addr: str, ias_addr: str, adversarial: str | None, store: Path | None, launch: int,
             host: str, port: int) -> None:
    from .api import RemoteAttestation, RemoteLedger, es_app
    from .enclave_service import EnclaveService

    svc = EnclaveService(RemoteLedger(ledger_addr), RemoteAttestation(ias_addr), storage_dir=store,
                         adversarial=adversarial, name=f"es:{port}")
    owner = _load_or_create_key(store / "owner.key") if store else crypto.SigningKeyPair.generate()
    for _ in range(launch):
        eid = svc.launch_and_register(owner)
        click.echo(f"launched enclave {eid.hex()}", err=True)
    click.echo(f"enclave service listening on {host}:{port}", err=True)
    _serve(es_app.create_app(svc, owner), host, port)


@main.command()
@click.option("--ps", "n_ps", default=3, show_default=True, help="Provisioning services.")
@click.option("--es", "n_es", default=2, show_default=True, help="Enclave services.")
@click.option("--enclaves-per-es", default=1, show_default=True)
@click.option("--dir", "work_dir", type=click.Path(path_type=Path), default=Path(".pdo/devnet"), show_default=True)
@host_option
@click.option("--port", default=8700, show_default=True, help="First port; parties take consecutive ports.")
@reports_errors
def devnet(n_ps: int, n_es: int, enclaves_per_es: int, work_dir: Path, host: str, port: int) -> None:
    """Run a ledger, an attestation simulator and every service in this process."""
    import uvicorn

    from .api import es_app, ias_app, ledger_app, ps_app
    from .enclave_service import EnclaveService
    from .provisioning import ProvisioningService

    work_dir.mkdir(parents=True, exist_ok=True)
    root = _load_or_create_key(work_dir / "ias.key")
    attest = AttestationService(root)
    genesis = Genesis(root.public, enclave_measurement())
    genesis.save(work_dir / "genesis.json")
    led = Ledger(genesis, work_dir / "ledger.log")
    owner = _load_or_create_key(work_dir / "es-owner.key")

    apps = [("ledger", ledger_app.create_app(led)), ("ias", ias_app.create_app(attest))]
    for i in range(n_ps):
        svc = ProvisioningService(led, store_dir=work_dir / f"ps{i}")
        apps.append((f"ps{i}", ps_app.create_app(svc)))
    for i in range(n_es):
        svc = EnclaveService(led, attest, storage_dir=work_dir / f"es{i}", name=f"es{i}")
        for _ in range(enclaves_per_es):
            svc.launch_and_register(owner)
        apps.append((f"es{i}", es_app.create_app(svc, owner)))

    servers = []
    addrs = {}
    for offset, (name, app) in enumerate(apps):
        server = uvicorn.Server(uvicorn.Config(app, host=host, port=port + offset, log_level="warning"))
        threading.Thread(target=server.run, name=name, daemon=True).start()
        servers.append(server)
        addrs[name] = f"{host}:{port + offset}"
    while not all(s.started for s in servers):
        time.sleep(0.05)
    (work_dir / "devnet.json").write_text(json.dumps(addrs, indent=2) + "\n")
    _emit(addrs)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        for s in servers:
            s.should_exit = True


# -- clients ------------------------------------------------------------------

def _network(ledger_addr: str):
    from .api import HttpNetwork

    return HttpNetwork.connect(ledger_addr)


def _handle_path(home: Path, contract_id: str) -> Path:
    return home / "handles" / f"{contract_id}.json"


def _find_handle(home: Path, ref: str) -> Path:
    direct = Path(ref)
    if direct.is_file():
        return direct
    matches = sorted((home / "handles").glob(f"{ref.lower()}*.json"))
    if len(matches) != 1:
        raise CliFailure("unknown-contract", f"{len(matches)} local handles match {ref!r}")
    return matches[0]


def _parse_args(text: str) -> tuple:
    value = json.loads(text)
    if not isinstance(value, list):
        raise CliFailure("validation", "--args must be a JSON array")
    return from_json(value)


@main.group()
def owner() -> None:
    """Contract owner operations."""


@owner.command("create")
@click.option("--code", required=True, help="Contract source file, or the name of a bundled contract.")
@click.option("--ps", "ps_addrs", multiple=True, required=True, help="Provisioning service address (repeat).")
@click.option("--es", "es_addrs", multiple=True, required=True, help="Enclave service address (repeat).")
@click.option("--enclaves", "k", default=1, show_default=True, help="Enclaves to provision for the contract.")
@click.option("--init-args", default="[]", show_default=True, help="JSON array passed to the init method.")
@click.option("--key", "key_path", type=click.Path(path_type=Path), default=None,
              help="Owner signing key (hex seed); default <home>/owner.key, created if missing.")
@ledger_option
@home_option
@reports_errors
def owner_create(code: str, ps_addrs: tuple[str, ...], es_addrs: tuple[str, ...], k: int, init_args: str,
                 key_path: Path | None, ledger_addr: str, home: Path) -> None:
    """Register a contract, provision K enclaves and run its init method."""
    net = _network(ledger_addr)
    owner_key = _load_or_create_key(key_path or home / "owner.key")
    source = load_contract(code)
    args = _parse_args(init_args)

    available = {addr: net.es(addr).enclave_ids() for addr in es_addrs}
    chosen: list[tuple[str, bytes]] = []
    i = 0
    while len(chosen) < k:
        addr = es_addrs[i % len(es_addrs)]
        pool = [e for e in available[addr] if (addr, e) not in chosen]
        chosen.append((addr, pool[0] if pool else net.es(addr).launch()))
        i += 1

    handle = PdoClient(net).create_pdo(owner_key, source, list(ps_addrs), chosen, init_args=args)
    handle = replace(handle, ledger=ledger_addr)
    path = _handle_path(home, handle.contract_id.hex())
    path.parent.mkdir(parents=True, exist_ok=True)
    handle.save(path)
    _emit({
        "contract_id": handle.contract_id.hex(),
        "state_hash": handle.state_hash.hex(),
        "enclaves": {eid.hex(): addr for addr, eid in chosen},
        "handle": str(path),
    })


@main.group()
def user() -> None:
    """Contract user operations."""


def _parse_dep(text: str) -> Dependency:
    cid, sep, state = text.partition(":")
    if not sep:
        raise CliFailure("validation", f"dependency {text!r} is not <contract_id>:<state_hash>")
    return Dependency(contract_id=cid, state_hash=state)


@user.command("invoke")
@click.option("--contract", "contract_ref", required=True, help="Contract id (or unique prefix) or handle file.")
@click.option("--method", required=True)
@click.option("--args", "args_json", default="[]", show_default=True, help="JSON array of arguments.")
@click.option("--dep", "deps", multiple=True, help="<contract_id>:<state_hash> that must be committed first.")
@click.option("--replicate", "k", type=int, default=None, help="Run on K enclaves and commit the majority.")
@click.option("--enclave", "enclave_ref", default=None, help="Enclave id prefix to use.")
@click.option("--no-commit", is_flag=True, help="Verify the result but do not submit the update.")
@ledger_option
@home_option
@reports_errors
def user_invoke(contract_ref: str, method: str, args_json: str, deps: tuple[str, ...], k: int | None,
                enclave_ref: str | None, no_commit: bool, ledger_addr: str, home: Path) -> None:
    """Invoke a method, verify every part of the answer, then commit it."""
    net = _network(ledger_addr)
    client = PdoClient(net)
    path = _find_handle(home, contract_ref)
    handle = PdoHandle.load(path)
    args = _parse_args(args_json)
    dep_list = [_parse_dep(d) for d in deps]
    eid = None
    if enclave_ref:
        hits = [e for e in handle.enclaves if e.hex().startswith(enclave_ref.lower())]
        if len(hits) != 1:
            raise CliFailure("unknown-enclave", f"{len(hits)} enclaves of this contract match {enclave_ref!r}")
        eid = hits[0]

    out: dict = {}
    if k:
        outcome = client.replicated_invoke(handle, method, args, dep_list, k=k)
        result, handle = outcome.result, outcome.handle
        revoked = []
        for ev in outcome.evidence:
            client.submit_revocation(ev)
            revoked.append(ev.enclave_id.hex())
        out.update(agreeing=[e.hex() for e in outcome.agreeing], suspects=[e.hex() for e in outcome.suspects],
                   revoked=revoked)
        committed = True
    else:
        result, handle = client.invoke(handle, method, args, dep_list, eid, commit=not no_commit)
        committed = not no_commit
    if committed:
        handle.save(path)
    out.update(result=to_json(result), committed=committed,
               state_hash=handle.state_hash.hex() if handle.state_hash else None)
    _emit(out)


@main.command()
@click.argument("what", type=click.Choice(["ledger", "contract", "enclave"]))
@click.argument("ident", required=False)
@ledger_option
@reports_errors
def inspect(what: str, ident: str | None, ledger_addr: str) -> None:
    """Show ledger records."""
    from .api import RemoteLedger

    led = RemoteLedger(ledger_addr)
    if what == "ledger":
        _emit({"height": led.height(), "genesis": led.genesis.to_json()})
        return
    if not ident:
        raise CliFailure("validation", f"inspect {what} needs an id")
    try:
        key = bytes.fromhex(ident)
    except ValueError:
        raise CliFailure("validation", "id must be hex") from None
    if what == "contract":
        rec = led.get_contract(key)
        if rec is None:
            raise CliFailure("unknown-contract", ident)
        head = led.get_head(key)
        _emit({**rec.to_json(), "head": head.hex() if head else None})
    else:
        rec = led.get_enclave(key)
        if rec is None:
            raise CliFailure("unknown-enclave", ident)
        _emit(rec.to_json())


@main.group()
def scenario() -> None:
    """Scripted end-to-end runs."""


@scenario.command("list")
def scenario_list() -> None:
    for name in bundled_scenarios():
        click.echo(name)


@scenario.command("run")
@click.argument("name")
@click.option("--seed", default=1, show_default=True)
@reports_errors
def scenario_run(name: str, seed: int) -> None:
    """Run a bundled scenario by name, or a scenario JSON file."""
    run(Scenario.load(name), seed, emit=click.echo)


if __name__ == "__main__":
    main()
