"""HTTP services for each party, and proxies that talk to them."""

from . import es_app, ias_app, ledger_app, ps_app
from .remote import (
    HttpNetwork,
    RemoteAttestation,
    RemoteEnclaveService,
    RemoteError,
    RemoteLedger,
    RemoteProvisioning,
)

__all__ = [
    "HttpNetwork", "RemoteAttestation", "RemoteEnclaveService", "RemoteError", "RemoteLedger",
    "RemoteProvisioning", "es_app", "ias_app", "ledger_app", "ps_app",
]
