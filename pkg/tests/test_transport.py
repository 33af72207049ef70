from conftest import random_federation, row_set

from kprotect import wire
from kprotect.mediator import execute_plan
from kprotect.ranges import IdRange
from kprotect.service import DataService, ServiceConfig
from kprotect.transport import InProcessTransport, ServiceServer, TcpTransport
from kprotect.wire import ProtocolMessage


def test_tcp_round_trip(f13):
    svc = DataService(ServiceConfig("DS3"), f13)
    with ServiceServer(svc) as server:
        channel = TcpTransport({"DS3": server.address})
        try:
            resp = channel.request("DS3", ProtocolMessage(wire.SELECTIVITY_REQ, 1, range=IdRange.full()))
            again = channel.request("DS3", ProtocolMessage(wire.SELECTIVITY_REQ, 2, range=IdRange.full()))
        finally:
            channel.close()
    assert resp.count == 13 and again.request_id == 2


def test_tcp_and_inprocess_agree():
    fed = random_federation(3, max_size=300)
    local, t_local = execute_plan(fed.plan, InProcessTransport(fed.services()))
    services = fed.services()
    servers = [ServiceServer(s).start() for s in services.values()]
    try:
        channel = TcpTransport({name: s.address for name, s in zip(services, servers)})
        remote, t_remote = execute_plan(fed.plan, channel)
        channel.close()
    finally:
        for s in servers:
            s.stop()
    assert row_set(local) == row_set(remote)
    assert t_local.messages() == t_remote.messages()


def test_inprocess_without_serialization(f13):
    svc = DataService(ServiceConfig("DS3"), f13)
    channel = InProcessTransport({"DS3": svc}, serialize=False)
    resp = channel.request("DS3", ProtocolMessage(wire.SELECTIVITY_REQ, 4, range=IdRange.full()))
    assert resp.count == 13
