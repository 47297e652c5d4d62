"""Pairwise zero-sum masking for additive queries.

Values are encoded as fixed-point integers (31 fractional bits) in the ring
Z/2^64. For each pair ``i < j`` both clients derive the same mask vector
from ``SplitMix64(hash(epoch, i, j, query_id))``; client ``i`` adds it and
client ``j`` subtracts it, so the masks vanish from the server-side sum.
Read as signed fixed-point numbers, mask entries span [-2^32, 2^32).

There is no dropout recovery: a missing masked share leaves the sum
unrecoverable and the query is aborted. No cryptographic claim is made.
"""
from __future__ import annotations

from typing import Iterable, Sequence

from fedlens.core import ADDITION, AVERAGE, Aggregation, Kernel
from fedlens.errors import CohortTooSmall, SecureRangeError, ShapeMismatch, ZeroTotalWeight
from fedlens.prng import SplitMix64, derive_seed

FRAC_BITS = 31
SCALE = float(1 << FRAC_BITS)
MOD = 1 << 64
# |value| bound such that the decoded sum still fits in a signed 64-bit word
RANGE = float(1 << (63 - FRAC_BITS))


def encode(x: float) -> int:
    return round(x * SCALE) % MOD


def decode(u: int) -> float:
    u %= MOD
    if u >= MOD >> 1:
        u -= MOD
    return u / SCALE


def pair_mask(epoch: int, i: int, j: int, query_id: str, length: int) -> list[int]:
    if i >= j:
        raise ValueError("pair masks are keyed by (i, j) with i < j")
    rng = SplitMix64(derive_seed("mask", epoch, i, j, query_id))
    return [rng.next_u64() for _ in range(length)]


def net_mask(client_id: int, cohort: Sequence[int], epoch: int, query_id: str, length: int) -> list[int]:
    """Sum of +m_ij for peers j > i and -m_ji for peers j < i, mod 2^64."""
    total = [0] * length
    for peer in cohort:
        if peer == client_id:
            continue
        if client_id < peer:
            m, sign = pair_mask(epoch, client_id, peer, query_id, length), 1
        else:
            m, sign = pair_mask(epoch, peer, client_id, query_id, length), -1
        total = [(t + sign * v) % MOD for t, v in zip(total, m)]
    return total


def mask_vector(
    values: Sequence[float], client_id: int, cohort: Sequence[int], epoch: int, query_id: str
) -> list[int]:
    cohort = sorted(set(cohort))
    if len(cohort) < 2:
        raise CohortTooSmall("secure aggregation needs at least two clients")
    limit = RANGE / len(cohort)
    for v in values:
        if not abs(v) < limit:
            raise SecureRangeError(f"value {v!r} outside the maskable range ±{limit:g}")
    mask = net_mask(client_id, cohort, epoch, query_id, len(values))
    return [(encode(v) + m) % MOD for v, m in zip(values, mask)]


def unmask_sum(masked: Iterable[Sequence[int]]) -> list[float]:
    masked = list(masked)
    length = len(masked[0])
    if any(len(m) != length for m in masked):
        raise ShapeMismatch("masked vectors differ in length")
    return [decode(sum(col)) for col in zip(*masked)]


# --- linearisation of kernel payloads -------------------------------------------------


def linearize(kernels: Sequence[Kernel], agg: Aggregation, payloads: dict[str, dict]) -> tuple[list[float], list[dict]]:
    """Flatten kernel payloads into one vector plus a non-sensitive layout.

    Weighted averages are sent as ``[n, n*v1, n*v2, ...]`` so the server can
    divide the masked totals.
    """
    vec: list[float] = []
    layout = []
    for k in kernels:
        p = payloads[k.name]
        if k.name == "gram_for_pca":
            flat = [float(p["n"])] + list(p["s"]) + [x for row in p["g"] for x in row]
            layout.append({"name": k.name, "features": p["features"], "length": len(flat)})
            vec.extend(flat)
            continue
        value = p["value"]
        values = [float(v) for v in value] if isinstance(value, list) else [float(value)]
        if k.name == "histogram" and agg.method == ADDITION:
            values += [float(p["underflow"]), float(p["overflow"])]
        if agg.method == AVERAGE:
            w = float(p.get("n", p["value"] if k.name == "count" else 1))
            values = [w] + [w * v for v in values]
        layout.append(
            {"name": k.name, "features": p.get("features"), "scalar": not isinstance(value, list), "length": len(values)}
        )
        vec.extend(values)
    return vec, layout


def delinearize(kernels: Sequence[Kernel], agg: Aggregation, layout: list[dict], total: Sequence[float]) -> dict:
    out = {}
    pos = 0
    for k, lay in zip(kernels, layout):
        chunk = list(total[pos : pos + lay["length"]])
        pos += lay["length"]
        if k.name == "gram_for_pca":
            d = len(lay["features"])
            s = chunk[1 : 1 + d]
            g = [chunk[1 + d + r * d : 1 + d + (r + 1) * d] for r in range(d)]
            out[k.name] = {"features": lay["features"], "n": int(round(chunk[0])), "s": s, "g": g}
            continue
        if agg.method == ADDITION:
            vals = chunk
        else:
            w = chunk[0]
            if round(w * SCALE) == 0:
                raise ZeroTotalWeight("weights sum to zero")
            vals = [v / w for v in chunk[1:]]
        if k.name in ("count", "feature_count", "histogram") and agg.method == ADDITION:
            vals = [int(round(v)) for v in vals]
            if k.name == "histogram":
                out[k.name] = {"value": vals[:-2], "underflow": vals[-2], "overflow": vals[-1]}
                continue
        out[k.name] = vals[0] if lay["scalar"] else vals
    return out
