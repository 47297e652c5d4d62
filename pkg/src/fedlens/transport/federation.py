"""Server-side view of a federation, independent of the carrier."""
from __future__ import annotations

import threading
from abc import ABC, abstractmethod

from fedlens.core import ClientDescriptor, Schema
from fedlens.prng import derive_seed
from fedlens.transport.envelope import REGISTER_ACK, Envelope


class Registry:
    """Assigns client ids at registration, monotonically from 1.

    A client may ask for a preferred id (its partition index); the request is
    honoured when the id is still free, which keeps ids stable when clients
    connect in arbitrary order over TCP.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.descriptors: dict[int, ClientDescriptor] = {}
        self.schemas: dict[int, Schema] = {}
        self._by_address: dict[str, int] = {}
        self._next = 1

    def register(self, payload: dict, address: str) -> int:
        with self._lock:
            if address in self._by_address:
                return self._by_address[address]
            preferred = payload.get("preferred_id")
            if isinstance(preferred, int) and preferred >= 1 and preferred not in self.descriptors:
                cid = preferred
            else:
                while self._next in self.descriptors:
                    self._next += 1
                cid = self._next
            self.descriptors[cid] = ClientDescriptor(cid, payload.get("domain_tag", "intra-domain"), address)
            self.schemas[cid] = Schema.from_dict(payload["schema"])
            self._by_address[address] = cid
            return cid


class Federation(ABC):
    """Scatter/gather access to registered clients."""

    def __init__(self, epoch: int = 1, salt: str | None = None):
        self.epoch = epoch
        self.salt = salt if salt is not None else f"{derive_seed('salt', epoch):016x}"
        self.registry = Registry()

    @property
    def descriptors(self) -> dict[int, ClientDescriptor]:
        return self.registry.descriptors

    @property
    def client_ids(self) -> list[int]:
        return sorted(self.registry.descriptors)

    def schema_of(self, client_id: int) -> Schema:
        return self.registry.schemas[client_id]

    def _ack(self, request: Envelope, address: str) -> Envelope:
        cid = self.registry.register(request.payload, address)
        return request.reply(REGISTER_ACK, {"client_id": cid, "epoch": self.epoch, "salt": self.salt})

    @abstractmethod
    def request(self, kind: str, payloads: dict[int, dict], timeout: float) -> dict[int, Envelope]:
        """Send one message per client; return the replies that arrive in time."""

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
