"""Wire a complete set of parties together in one process."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from . import crypto
from .attestation import AttestationService, enclave_measurement
from .client import LocalNetwork, PdoClient
from .enclave import Compromise
from .enclave_service import EnclaveService
from .interpreter import DEFAULT_MAX_STEPS
from .ledger import Genesis, Ledger
from .provisioning import ProvisioningService


def bundled_contract(name: str) -> str:
    """Source of a contract shipped with the package (``counter`` or ``counter.pdo``)."""
    if not name.endswith(".pdo"):
        name += ".pdo"
    return resources.files("pdo.contracts").joinpath(name).read_text()


def bundled_contracts() -> list[str]:
    return sorted(p.name for p in resources.files("pdo.contracts").iterdir() if p.name.endswith(".pdo"))


def load_contract(ref: str) -> str:
    """A path to a ``.pdo`` file, or the name of a bundled contract."""
    path = Path(ref)
    if path.is_file():
        return path.read_text()
    return bundled_contract(ref)


@dataclass
class Devnet:
    ias: AttestationService
    ledger: Ledger
    network: LocalNetwork
    owner: crypto.SigningKeyPair
    # (es address, enclave id) in launch order
    enclaves: list[tuple[str, bytes]] = field(default_factory=list)

    @property
    def ps_addrs(self) -> list[str]:
        return list(self.network.provisioners)

    @property
    def es_addrs(self) -> list[str]:
        return list(self.network.services)

    def service(self, index: int) -> EnclaveService:
        return self.network.services[self.es_addrs[index]]

    def client(self, **kwargs) -> PdoClient:
        return PdoClient(self.network, **kwargs)


def start(
    ps: int = 3,
    es: int = 2,
    *,
    enclaves_per_es: int = 1,
    compromised: Sequence[int] = (),
    log_path: str | Path | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> Devnet:
    """Start ``ps`` provisioning services and ``es`` enclave services.

    ``compromised`` lists flat enclave indices (launch order) whose enclaves
    get both test-only compromise switches.
    """
    ias = AttestationService()
    ledger = Ledger(Genesis(ias.root_pub, enclave_measurement()), log_path)
    net = LocalNetwork(ledger)
    for i in range(ps):
        net.provisioners[f"ps{i}"] = ProvisioningService(ledger)
    for i in range(es):
        net.services[f"es{i}"] = EnclaveService(ledger, ias, name=f"es{i}", max_steps=max_steps)
    owner = crypto.SigningKeyPair.generate()
    dev = Devnet(ias, ledger, net, owner)
    bad = set(compromised)
    for _ in range(enclaves_per_es):
        for addr, svc in net.services.items():
            compromise = Compromise(exfiltrate_keys=True, tamper_state=True) if len(dev.enclaves) in bad else None
            dev.enclaves.append((addr, svc.launch_and_register(owner, compromise=compromise)))
    return dev
