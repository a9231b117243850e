import pytest

from fastresume import wire
from fastresume.dispatch import HostStack, SocketAddr
from fastresume.netsim import Network
from fastresume.server import Phase, PortRangeExhausted, Server, ServerConfig

from helpers import is_type, scenario, sends

MT = wire.MessageType
HANDSHAKE = ["CLIENT_HELLO", "HELLO_VERIFY_REQUEST", "CLIENT_HELLO", "SERVER_HELLO", "HANDSHAKE_ACK", "SERVER_FINISHED"]


def flights_before_data(trace):
    out = []
    for t, src, dst, kind in sends(trace):
        if kind == "DATA":
            break
        out.append((t, src, dst, kind))
    return out


def test_ipc_handshake_six_flights_from_new_port():
    sc = scenario(variant="ipc", delay_ms=10)
    m = sc.run()
    flights = flights_before_data(m.trace)
    assert [f[3] for f in flights] == HANDSHAKE
    assert [f[0] for f in flights] == [0, 10, 20, 30, 40, 50]
    sh = flights[3]
    assert sh[1] == "108.110.11.12:20000"
    # the client acknowledges to the port the ServerHello came from
    assert flights[4][2] == "108.110.11.12:20000"
    assert m.redirect_transmissions == 0


def test_tcs_handshake_uses_welcome_port_then_redirects():
    sc = scenario(variant="tcs", delay_ms=10)
    m = sc.run()
    flights = flights_before_data(m.trace)
    assert [f[3] for f in flights] == HANDSHAKE + ["ADDRESS_REDIRECT"]
    assert all(src == "108.110.11.12:4433" for _, src, _, k in flights if k in ("SERVER_HELLO", "ADDRESS_REDIRECT"))
    first_data = next(s for s in sends(m.trace) if s[3] == "DATA")
    assert first_data[2] == "108.110.11.12:20000"
    assert m.redirect_transmissions == 1


def test_tcs_temp_socket_closed_on_first_message_at_final_socket():
    sc = scenario(variant="tcs", delay_ms=10)
    m = sc.run()
    closed = [l for l in m.trace if "temp socket" in l and "closed" in l]
    assert len(closed) == 1
    first_final = next(l for l in m.trace if "DISPATCH 108.110.11.12:20000" in l)
    assert closed[0].split()[0] == first_final.split()[0]
    st = next(iter(sc.server.sessions.values()))
    assert st.temp.closed and not st.com.closed and st.com.peer is None
    assert st.com.local.port != 4433


@pytest.mark.parametrize("k", [1, 2])
def test_redirect_retransmitted_every_500ms(k):
    sc = scenario(variant="tcs", delay_ms=10)
    sc.net.add_drop_rule(is_type(MT.ADDRESS_REDIRECT), k)
    m = sc.run()
    times = [t for t, _, _, kind in sends(m.trace) if kind == "ADDRESS_REDIRECT"]
    # the HandshakeAck reaches the server at t=50
    assert times == [50 + 500 * i for i in range(k + 1)]
    assert m.completed and m.handshakes_completed == 1


def test_redirect_stops_once_client_reaches_final_socket():
    sc = scenario(variant="tcs", delay_ms=10, redirect_retx_ms=15, total_messages=3)
    m = sc.run()
    # retransmissions happen only until the client's first Data arrives at t=70
    times = [t for t, _, _, kind in sends(m.trace) if kind == "ADDRESS_REDIRECT"]
    assert times == [50, 65]
    sc.net.advance(sc.net.now() + 1000)
    assert [t for t, _, _, kind in sends(sc.net.trace) if kind == "ADDRESS_REDIRECT"] == times


def test_baseline_post_handover_data_dropped_at_welcome():
    m = scenario(variant="baseline", delay_ms=10, total_messages=200, handover_period_ms=1000).run()
    assert any("on welcome socket" in l and "drop DATA" in l for l in m.trace)


def test_baseline_idle_timeout_closes_session():
    sc = scenario(variant="baseline", delay_ms=10, total_messages=1)
    sc.run()
    last = sc.net.now()
    sc.net.advance(last + 2000)
    assert sc.server.sessions == {}
    teardown = [l for l in sc.net.trace if "teardown idle-timeout" in l]
    # the last client datagram reached the server at last - 10
    assert teardown[0].startswith(f"t={last - 10 + 1000} ")


def test_tcs_idle_session_is_not_closed():
    sc = scenario(variant="tcs", delay_ms=10, total_messages=1)
    sc.run()
    sc.net.advance(sc.net.now() + 10_000)
    (st,) = sc.server.sessions.values()
    assert st.phase is Phase.ESTABLISHED


@pytest.mark.parametrize("variant", ["ipc", "tcs"])
def test_no_handshake_after_establishment_over_handovers(variant):
    m = scenario(variant=variant, delay_ms=10, total_messages=300, handover_period_ms=1000).run()
    assert m.handovers >= 5
    first_data = next(t for t, _, _, k in sends(m.trace) if k == "DATA")
    later = [k for t, _, _, k in sends(m.trace) if t > first_data and k == "CLIENT_HELLO"]
    assert later == []


@pytest.mark.parametrize("variant, welcome_port", [("tcs", True), ("ipc", False), ("baseline", True)])
def test_server_hello_source_port(variant, welcome_port):
    m = scenario(variant=variant, delay_ms=10).run()
    sh = [src for _, src, _, k in sends(m.trace) if k == "SERVER_HELLO"]
    assert sh and all(src.endswith(":4433") == welcome_port for src in sh)


def test_baseline_com_socket_is_connected():
    sc = scenario(variant="baseline", delay_ms=10)
    sc.run()
    (st,) = sc.server.sessions.values()
    assert st.com.peer is not None and st.com.local.port == 4433


def test_data_ack_echoes_seq():
    sc = scenario(variant="tcs", delay_ms=10, total_messages=1)
    acks = []

    def grab(dgram):
        msg = wire.decode(dgram.data)
        if msg.msg_type is MT.DATA_ACK:
            acks.append(msg.payload)
        elif msg.msg_type is MT.DATA:
            acks.append(msg.seq)

    sc.net.send_listeners.append(grab)
    sc.run()
    data_seq, ack_payload = acks
    assert int.from_bytes(ack_payload[:8], "big") == data_seq
    assert ack_payload[8:] == (0).to_bytes(8, "big")


# direct server drive ----------------------------------------------------

WELCOME = SocketAddr("108.110.11.12", 4433)
CLIENT = SocketAddr("184.16.1.30", 1234)


def bare_server(variant="tcs", port_range=(20000, 29999)):
    net = Network()
    host = net.add_host(HostStack("srv", {0: WELCOME.ip}))
    srv = Server(host, ServerConfig(WELCOME, variant, port_range=port_range))
    srv.start()
    return net, host, srv


def test_port_allocator_sequential_and_skips_bound():
    net, host, srv = bare_server()
    assert srv.port_allocator() == 20000
    host.bind(SocketAddr(WELCOME.ip, 20001))
    assert srv.port_allocator() == 20002


def test_port_allocator_deterministic():
    seqs = []
    for _ in range(2):
        net, host, srv = bare_server()
        seqs.append([srv.port_allocator() for _ in range(5)])
    assert seqs[0] == seqs[1] == [20000, 20001, 20002, 20003, 20004]


def test_port_allocator_exhaustion():
    net, host, srv = bare_server(port_range=(20000, 20001))
    for port in (20000, 20001):
        host.bind(SocketAddr(WELCOME.ip, port))
    with pytest.raises(PortRangeExhausted):
        srv.port_allocator()


def test_garbage_and_bad_cookies_are_dropped_silently():
    net, host, srv = bare_server()
    srv.on_datagram(srv.welcome, CLIENT, b"\x00garbage")
    forged = wire.encode(wire.WireMessage(MT.CLIENT_HELLO, payload=bytes(40)))
    srv.on_datagram(srv.welcome, CLIENT, forged)
    data = wire.encode(wire.WireMessage(MT.DATA, payload=bytes(8)))
    srv.on_datagram(srv.welcome, CLIENT, data)
    assert srv.dropped == 3
    assert srv.sessions == {}


def test_unknown_session_on_final_socket_dropped():
    sc = scenario(variant="tcs", delay_ms=10, total_messages=1)
    sc.run()
    (st,) = sc.server.sessions.values()
    before = sc.server.dropped
    stray = wire.encode(wire.WireMessage(MT.DATA, session_id=b"\xee" * 8, payload=bytes(8)))
    sc.server.on_datagram(st.com, SocketAddr("9.9.9.9", 1), stray)
    assert sc.server.dropped == before + 1
