from fedlens.transport.envelope import Envelope, frame, frame_body, read_frame, unframe
from fedlens.transport.federation import Federation
from fedlens.transport.sim import LinkModel, SimFederation, SimNetwork, deliver
from fedlens.transport.tcp import TcpFederation, run_client

__all__ = [
    "Envelope",
    "Federation",
    "LinkModel",
    "SimFederation",
    "SimNetwork",
    "TcpFederation",
    "deliver",
    "frame",
    "frame_body",
    "read_frame",
    "run_client",
    "unframe",
]
