import io
import math
import struct
import threading

import pytest
from hypothesis import given, strategies as st

from fedlens.client import FAClient
from fedlens.core import ADDITION, STATISTICAL, Aggregation, Kernel, QuerySpec
from fedlens.errors import MalformedPayload, OversizePayload, TruncatedFrame, UnknownKind, UnsupportedVersion
from fedlens.fa import FAServer
from fedlens.transport import Envelope, frame, frame_body, read_frame, unframe
from fedlens.transport.envelope import MAX_FRAME, QUERY, REGISTER_ACK, RESPONSE, encode_json
from fedlens.transport.federation import Registry
from fedlens.transport.sim import LinkModel, LinkState, SimFederation, SimNetwork, deliver
from fedlens.transport.tcp import TcpFederation, run_client

from conftest import make_clients

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-(2**53), 2**53) | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=8), inner, max_size=4),
    max_leaves=12,
)


# --- framing --------------------------------------------------------------------------


def test_length_prefix_example():
    body = b'{"a":"bc"}'
    assert len(body) == 10
    framed = frame_body(body)
    assert len(framed) == 14 and framed[:4] == bytes([0, 0, 0, 0x0A])


def test_frame_key_order_and_round_trip():
    env = Envelope(QUERY, {"spec": {"k": [1, 2.5, None]}})
    data = frame(env)
    (n,) = struct.unpack(">I", data[:4])
    assert n == len(data) - 4
    assert data[4:].startswith(b'{"v":1,"kind":"QUERY","msg_id":')
    assert unframe(data) == env


def test_oversize():
    with pytest.raises(OversizePayload):
        frame_body(b"x" * (MAX_FRAME + 1))
    with pytest.raises(OversizePayload):
        read_frame(io.BytesIO(struct.pack(">I", MAX_FRAME + 1)))


def test_truncation():
    data = frame(Envelope(QUERY, {"spec": {}}))
    with pytest.raises(TruncatedFrame):
        unframe(data[:-1])
    with pytest.raises(TruncatedFrame):
        unframe(data[:2])
    assert read_frame(io.BytesIO(b"")) is None


def test_protocol_gates():
    with pytest.raises(UnsupportedVersion):
        unframe(frame_body(encode_json({"v": 2, "kind": "BYE", "msg_id": "m", "correlates": None, "payload": {}})))
    with pytest.raises(UnknownKind):
        unframe(frame_body(encode_json({"v": 1, "kind": "PING", "msg_id": "m", "correlates": None, "payload": {}})))
    with pytest.raises(MalformedPayload):
        unframe(frame_body(b"not json"))
    with pytest.raises(MalformedPayload):
        Envelope(QUERY, {})
    with pytest.raises(MalformedPayload):
        Envelope(RESPONSE, {"query_id": "q", "client_id": 1})


def test_back_to_back_frames_on_one_stream():
    envs = [Envelope(QUERY, {"spec": {"i": i}}) for i in range(5)]
    stream = io.BytesIO(b"".join(frame(e) for e in envs))
    got = []
    while (e := read_frame(stream)) is not None:
        got.append(e)
    assert got == envs


@given(payload=st.dictionaries(st.text(max_size=8), json_values, max_size=5))
def test_round_trip_property(payload):
    env = Envelope(QUERY, dict(payload, spec=payload))
    assert unframe(frame(env)) == env


# --- simulated links ------------------------------------------------------------------


def test_identity_link_delivers_immediately():
    link = LinkState(LinkModel(), "a->b")
    assert deliver(link, b"x", 3.0) == 3.0


def test_drop_rate_within_binomial_bounds():
    eps, n = 0.05, 10_000
    link = LinkState(LinkModel(drop_probability=1 - eps, seed=1), "a->b")
    delivered = sum(deliver(link, b"", 0.0) is not None for _ in range(n))
    sigma = math.sqrt(n * eps * (1 - eps))
    assert abs(delivered - n * eps) <= 3 * sigma


def test_link_is_deterministic_and_fifo():
    model = LinkModel(latency_ms=(1.0, 50.0), drop_probability=0.2, seed=7)
    runs = []
    for _ in range(2):
        link = LinkState(model, "a->b")
        runs.append([deliver(link, b"", t * 0.001) for t in range(500)])
    assert runs[0] == runs[1]
    times = [t for t in runs[0] if t is not None]
    assert times == sorted(times)
    assert any(t is None for t in runs[0])


def test_sim_network_preserves_order():
    net = SimNetwork(LinkModel(latency_ms=(0.0, 20.0), seed=3))
    got = []
    net.attach("b", lambda src, data: got.append(data))
    for i in range(100):
        net.send("a", "b", bytes([i]))
    net.run(10.0)
    assert got == [bytes([i]) for i in range(100)]


def test_invalid_link_model():
    with pytest.raises(ValueError):
        LinkModel(drop_probability=1.0)
    with pytest.raises(ValueError):
        LinkModel(latency_ms=(5, 1))


# --- registration ---------------------------------------------------------------------


def test_registry_ids():
    reg = Registry()
    schema = make_clients([1])[0].schema.to_dict()
    assert reg.register({"schema": schema}, "a") == 1
    assert reg.register({"schema": schema, "preferred_id": 7}, "b") == 7
    assert reg.register({"schema": schema, "preferred_id": 7}, "c") not in (1, 7)


def test_sim_registration_acks(clients):
    with SimFederation([FAClient(c) for c in clients]) as fed:
        assert fed.client_ids == [1, 2, 3]
        assert all(isinstance(c.salt, str) and c.epoch == fed.epoch for c in fed.clients)


# --- TCP ------------------------------------------------------------------------------


def test_tcp_matches_sim(clients):
    spec = QuerySpec(STATISTICAL, (Kernel("count"), Kernel("sum")), Aggregation(ADDITION), (1, 2, 3), query_id="q")
    with SimFederation([FAClient(c) for c in clients]) as fed:
        sim = FAServer(fed).execute_query(spec)
    with TcpFederation() as fed:
        threads = [threading.Thread(target=run_client, args=(FAClient(c), fed.address), daemon=True) for c in clients]
        for t in threads:
            t.start()
        assert fed.wait_for_clients(3, 10.0) == [1, 2, 3]
        tcp = FAServer(fed, timeout=10.0).execute_query(spec)
    for t in threads:
        t.join(5.0)
        assert not t.is_alive()
    assert tcp.to_dict() == sim.to_dict()


def test_reply_requires_correlation():
    req = Envelope(QUERY, {"spec": {}})
    ack = req.reply(REGISTER_ACK, {"client_id": 1, "epoch": 1, "salt": "s"})
    assert ack.correlates == req.msg_id
