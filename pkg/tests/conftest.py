import pytest

from pdo import devnet


@pytest.fixture
def net():
    """3 provisioning services, 2 enclave services with one enclave each."""
    return devnet.start(ps=3, es=2)


@pytest.fixture
def client(net):
    return net.client()


@pytest.fixture
def counter(net, client):
    return client.create_pdo(net.owner, devnet.bundled_contract("counter"), net.ps_addrs, net.enclaves)


def pytest_terminal_summary(terminalreporter):
    from criteria import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
