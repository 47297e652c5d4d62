"""The FA/FL client: answers queries and trains locally on its own partition."""
from __future__ import annotations

import logging

from fedlens.core import ClientDataset, QuerySpec, validate_dataset
from fedlens.errors import FedLensError
from fedlens.fa.kernels import run_kernel
from fedlens.fa.secure import linearize, mask_vector
from fedlens.fl import TrainConfig, from_base64, local_train, to_base64
from fedlens.transport.envelope import (
    ERROR,
    MODEL_BROADCAST,
    MODEL_UPDATE,
    QUERY,
    REGISTER,
    REGISTER_ACK,
    RESPONSE,
    Envelope,
)

log = logging.getLogger(__name__)


class FAClient:
    """Message handler for one data owner; transport-agnostic.

    Outbound payloads are built only from kernel outputs and model
    parameters, never from ``dataset.rows``.
    """

    def __init__(self, dataset: ClientDataset, domain_tag: str = "intra-domain"):
        self.dataset = validate_dataset(dataset)
        self.domain_tag = domain_tag
        self.client_id: int | None = None
        self.epoch = 0
        self.salt = ""

    def register_envelope(self) -> Envelope:
        return Envelope(
            REGISTER,
            {
                "schema": self.dataset.schema.to_dict(),
                "domain_tag": self.domain_tag,
                "preferred_id": self.dataset.client_id,
            },
        )

    def handle(self, env: Envelope) -> Envelope | None:
        try:
            if env.kind == REGISTER_ACK:
                self.client_id = int(env.payload["client_id"])
                self.epoch = int(env.payload["epoch"])
                self.salt = str(env.payload["salt"])
                return None
            if env.kind == QUERY:
                return self._answer(env)
            if env.kind == MODEL_BROADCAST:
                return self._train(env)
            return None
        except (FedLensError, KeyError, ValueError, TypeError, IndexError) as exc:
            log.warning("client %s failed on %s: %s", self.client_id, env.kind, exc)
            return env.reply(ERROR, {"code": type(exc).__name__, "message": str(exc), "client_id": self.client_id})

    def _answer(self, env: Envelope) -> Envelope:
        spec = QuerySpec.from_dict(env.payload["spec"])
        outputs = {k.name: run_kernel(k, self.dataset, self.salt) for k in spec.kernels}
        body = {"query_id": spec.query_id, "client_id": self.client_id}
        if spec.secure:
            vec, layout = linearize(spec.kernels, spec.aggregation, outputs)
            body["masked"] = mask_vector(vec, self.client_id, spec.cohort, self.epoch, spec.query_id)
            body["layout"] = layout
        else:
            body["payload"] = outputs
        return env.reply(RESPONSE, body)

    def _train(self, env: Envelope) -> Envelope:
        p = env.payload
        cfg = TrainConfig.from_dict(p["train"])
        params = from_base64(p["model"])
        std = {k: tuple(v) for k, v in p.get("standardization", {}).items()} or None
        update = local_train(params, self.dataset, cfg, int(p["round"]), std)
        return env.reply(
            MODEL_UPDATE,
            {
                "round": p["round"],
                "client_id": self.client_id,
                "model": to_base64(update.params),
                "k_n": update.k_n,
                "loss": update.local_train_loss,
            },
        )
