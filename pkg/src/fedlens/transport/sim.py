"""In-process simulated network on a virtual clock.

Frames are real bytes produced by :func:`frame`; only their delivery is
simulated. Each directed link draws latency and drop decisions from its own
seeded SplitMix64 stream, and deliveries on one link never overtake each
other.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from typing import Callable

from fedlens.prng import SplitMix64, derive_seed
from fedlens.transport.envelope import BYE, REGISTER, Envelope, frame, unframe
from fedlens.transport.federation import Federation

log = logging.getLogger(__name__)

SERVER = "server"


@dataclass(frozen=True)
class LinkModel:
    latency_ms: float | tuple[float, float] = 0.0
    drop_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop probability must lie in [0, 1)")
        lat = self.latency_ms
        lo, hi = (lat, lat) if isinstance(lat, (int, float)) else lat
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid latency {lat!r}")

    @property
    def latency_bounds(self) -> tuple[float, float]:
        lat = self.latency_ms
        return (float(lat), float(lat)) if isinstance(lat, (int, float)) else (float(lat[0]), float(lat[1]))


class LinkState:
    def __init__(self, model: LinkModel, name: str):
        self.model = model
        self.rng = SplitMix64(derive_seed("link", model.seed, name))
        self.last_delivery = 0.0


def deliver(link: LinkState, data: bytes, now: float) -> float | None:
    """Delivery time in seconds for ``data`` sent at ``now``, or ``None`` if dropped."""
    model = link.model
    # both draws happen on every frame so the stream stays aligned
    drop = link.rng.next_float() < model.drop_probability
    lo, hi = model.latency_bounds
    latency = link.rng.uniform(lo, hi) / 1000.0
    if drop:
        return None
    at = max(now + latency, link.last_delivery)
    link.last_delivery = at
    return at


Handler = Callable[[str, bytes], None]


class SimNetwork:
    def __init__(self, link: LinkModel | None = None):
        self.link_model = link or LinkModel()
        self.now = 0.0
        self._queue: list = []
        self._seq = 0
        self._links: dict[tuple[str, str], LinkState] = {}
        self._handlers: dict[str, Handler] = {}
        self.taps: list[Callable[[str, str, bytes], None]] = []

    def attach(self, address: str, handler: Handler) -> None:
        self._handlers[address] = handler

    def send(self, src: str, dst: str, data: bytes) -> None:
        for tap in self.taps:
            tap(src, dst, data)
        key = (src, dst)
        link = self._links.get(key)
        if link is None:
            link = self._links[key] = LinkState(self.link_model, f"{src}->{dst}")
        at = deliver(link, data, self.now)
        if at is None:
            log.debug("dropped frame %s -> %s", src, dst)
            return
        heapq.heappush(self._queue, (at, self._seq, src, dst, data))
        self._seq += 1

    def run(self, until: float, done: Callable[[], bool] = lambda: False) -> None:
        """Deliver frames in time order until ``done()`` or the clock passes ``until``."""
        while not done():
            if not self._queue or self._queue[0][0] > until:
                self.now = max(self.now, until)
                return
            at, _, src, dst, data = heapq.heappop(self._queue)
            self.now = max(self.now, at)
            handler = self._handlers.get(dst)
            if handler is not None:
                handler(src, data)


class SimFederation(Federation):
    """Hosts the FA server and in-process clients on a :class:`SimNetwork`."""

    def __init__(self, clients, link: LinkModel | None = None, epoch: int = 1, salt: str | None = None,
                 register_timeout: float = 30.0):
        super().__init__(epoch, salt)
        self.net = SimNetwork(link)
        self.clients = list(clients)
        self._addresses: dict[int, str] = {}
        self._inbox: dict[str, Envelope] = {}
        self.net.attach(SERVER, self._on_server_frame)
        for idx, client in enumerate(self.clients):
            address = f"client-{idx}"
            self.net.attach(address, self._client_handler(address, client))
            self._register(address, client, register_timeout)

    def _client_handler(self, address: str, client):
        def handle(src: str, data: bytes) -> None:
            reply = client.handle(unframe(data))
            if reply is not None:
                self.net.send(address, src, frame(reply))

        return handle

    def _on_server_frame(self, src: str, data: bytes) -> None:
        env = unframe(data)
        if env.kind == REGISTER:
            self.net.send(SERVER, src, frame(self._ack(env, src)))
        elif env.correlates is not None:
            self._inbox[env.correlates] = env

    def _register(self, address: str, client, timeout: float) -> None:
        for _ in range(100):
            self.net.send(address, SERVER, frame(client.register_envelope()))
            self.net.run(self.net.now + timeout, lambda: client.client_id is not None)
            if client.client_id is not None:
                self._addresses[client.client_id] = address
                return
        raise ConnectionError(f"{address} could not register")

    def request(self, kind: str, payloads: dict[int, dict], timeout: float) -> dict[int, Envelope]:
        pending: dict[str, int] = {}
        for cid in sorted(payloads):
            env = Envelope(kind, payloads[cid])
            pending[env.msg_id] = cid
            self.net.send(SERVER, self._addresses[cid], frame(env))
        deadline = self.net.now + timeout
        self.net.run(deadline, lambda: all(m in self._inbox for m in pending))
        return {cid: self._inbox.pop(m) for m, cid in pending.items() if m in self._inbox}

    def close(self) -> None:
        for cid, address in self._addresses.items():
            self.net.send(SERVER, address, frame(Envelope(BYE, {})))
        self.net.run(self.net.now + 1.0)
