"""TCP carrier: same frames as the simulator, over real sockets."""
from __future__ import annotations

import logging
import socket
import threading
import time

from fedlens.errors import TransportError
from fedlens.transport.envelope import BYE, REGISTER, Envelope, frame, read_frame
from fedlens.transport.federation import Federation

log = logging.getLogger(__name__)


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ValueError(f"expected host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


class _Connection:
    def __init__(self, sock: socket.socket, address: str):
        self.sock = sock
        self.address = address
        self.rfile = sock.makefile("rb")
        self._wlock = threading.Lock()

    def send(self, env: Envelope) -> None:
        data = frame(env)
        with self._wlock:
            self.sock.sendall(data)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class TcpFederation(Federation):
    """Listens for clients; one reader thread per connection.

    Replies are matched to requests by ``correlates``, so several requests may
    be outstanding at once.
    """

    def __init__(self, bind: str = "127.0.0.1:0", epoch: int = 1, salt: str | None = None):
        super().__init__(epoch, salt)
        host, port = parse_address(bind)
        self._listener = socket.create_server((host, port))
        self.address = "%s:%d" % self._listener.getsockname()[:2]
        self._conns: dict[int, _Connection] = {}
        self._cond = threading.Condition()
        self._replies: dict[str, Envelope] = {}
        self._closed = False
        self._threads: list[threading.Thread] = []
        t = threading.Thread(target=self._accept_loop, name="fedlens-accept", daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                sock, peer = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = _Connection(sock, "%s:%d" % peer[:2])
            t = threading.Thread(target=self._reader, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _reader(self, conn: _Connection) -> None:
        try:
            while True:
                env = read_frame(conn.rfile)
                if env is None or env.kind == BYE:
                    return
                if env.kind == REGISTER:
                    ack = self._ack(env, conn.address)
                    with self._cond:
                        self._conns[ack.payload["client_id"]] = conn
                        self._cond.notify_all()
                    conn.send(ack)
                elif env.correlates is not None:
                    with self._cond:
                        self._replies[env.correlates] = env
                        self._cond.notify_all()
        except (OSError, TransportError) as exc:
            if not self._closed:
                log.warning("connection %s failed: %s", conn.address, exc)

    def wait_for_clients(self, n: int, timeout: float = 60.0) -> list[int]:
        deadline = time.monotonic() + timeout
        with self._cond:
            while len(self._conns) < n:
                left = deadline - time.monotonic()
                if left <= 0:
                    raise TimeoutError(f"only {len(self._conns)} of {n} clients registered")
                self._cond.wait(left)
        return self.client_ids

    def request(self, kind: str, payloads: dict[int, dict], timeout: float) -> dict[int, Envelope]:
        pending: dict[str, int] = {}
        for cid in sorted(payloads):
            env = Envelope(kind, payloads[cid])
            pending[env.msg_id] = cid
            try:
                self._conns[cid].send(env)
            except OSError as exc:
                log.warning("send to client %d failed: %s", cid, exc)
        deadline = time.monotonic() + timeout
        with self._cond:
            while not all(m in self._replies for m in pending):
                left = deadline - time.monotonic()
                if left <= 0:
                    break
                self._cond.wait(left)
            return {cid: self._replies.pop(m) for m, cid in pending.items() if m in self._replies}

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for conn in list(self._conns.values()):
            try:
                conn.send(Envelope(BYE, {}))
            except OSError:
                pass
            conn.close()
        self._listener.close()


def run_client(client, address: str, connect_timeout: float = 30.0) -> None:
    """Connect a :class:`FAClient` to a server and serve requests until BYE."""
    host, port = parse_address(address)
    deadline = time.monotonic() + connect_timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=connect_timeout)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.05)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    conn = _Connection(sock, address)
    try:
        conn.send(client.register_envelope())
        while True:
            env = read_frame(conn.rfile)
            if env is None or env.kind == BYE:
                return
            reply = client.handle(env)
            if reply is not None:
                conn.send(reply)
    finally:
        conn.close()
