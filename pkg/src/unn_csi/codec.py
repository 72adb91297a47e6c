"""The over-the-air CSI report: a fitted decoder serialized to bytes.

A report carries everything the receiving side needs to regenerate the
estimated channel: the canonical decoder spec JSON (including the seed rule),
the per-snapshot norms and scale factor of the preprocessing, and every
trainable scalar as little-endian float32 in canonical order. Encoding is
deterministic, so any two encoders produce identical bytes from identical
inputs; decode is the exact inverse. See docs/csir-format.md for the byte
layout.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .decoder import (
    DecoderSpec,
    ParamSet,
    check_params,
    param_count,
    params_from_vector,
    params_to_vector,
    spec_from_json,
    spec_to_json,
)

__all__ = [
    "CodecError",
    "encode",
    "decode",
    "save_report",
    "load_report",
    "payload_bytes",
    "weight_delta_stats",
    "DeltaStats",
]

REPORT_MAGIC = b"CSIR"
REPORT_VERSION = 1
_DTYPE_F32 = 0  # dtype field reserved for future quantized payloads


class CodecError(ValueError):
    """Malformed or corrupted CSI report."""


def payload_bytes(spec: DecoderSpec) -> int:
    return 4 * param_count(spec)


def encode(spec: DecoderSpec, params: ParamSet, snapshot_norms, scale) -> bytes:
    """Serialize a fitted decoder into the report byte stream."""
    check_params(spec, params)
    header = {
        "spec": json.loads(spec_to_json(spec)),
        "norms": np.asarray(snapshot_norms, dtype=float).tolist(),
        "scale": np.asarray(scale, dtype=float).tolist(),
    }
    header_blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = params_to_vector(params).astype("<f4").tobytes()
    return b"".join(
        [
            REPORT_MAGIC,
            struct.pack("<HB", REPORT_VERSION, _DTYPE_F32),
            struct.pack("<I", len(header_blob)),
            header_blob,
            struct.pack("<II", zlib.crc32(payload), len(payload)),
            payload,
        ]
    )


def decode(blob: bytes):
    """Exact inverse of :func:`encode`.

    Returns (spec, params, snapshot_norms, scale). Raises CodecError on a bad
    magic, unknown version, or checksum mismatch.
    """
    if len(blob) < 11 or blob[:4] != REPORT_MAGIC:
        raise CodecError("not a CSI report (bad magic)")
    version, dtype_tag = struct.unpack_from("<HB", blob, 4)
    if version != REPORT_VERSION:
        raise CodecError(f"unknown report version {version}")
    if dtype_tag != _DTYPE_F32:
        raise CodecError(f"unknown payload dtype tag {dtype_tag}")
    (header_len,) = struct.unpack_from("<I", blob, 7)
    header_end = 11 + header_len
    header = json.loads(blob[11:header_end].decode("utf-8"))
    crc, payload_len = struct.unpack_from("<II", blob, header_end)
    payload = blob[header_end + 8 : header_end + 8 + payload_len]
    if len(payload) != payload_len:
        raise CodecError("truncated payload")
    if zlib.crc32(payload) != crc:
        raise CodecError("payload checksum mismatch")

    spec = spec_from_json(json.dumps(header["spec"]))
    if payload_len != payload_bytes(spec):
        raise CodecError(
            f"payload holds {payload_len} bytes, spec needs {payload_bytes(spec)}"
        )
    vec = np.frombuffer(payload, dtype="<f4")
    params = params_from_vector(spec, vec, dtype=np.float32)
    norms = np.asarray(header["norms"], dtype=float)
    scale = header["scale"]
    scale = np.asarray(scale, dtype=float) if isinstance(scale, list) else float(scale)
    return spec, params, norms, scale


def save_report(path, blob: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(blob)


def load_report(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


@dataclass
class DeltaStats:
    per_layer: list  # Frobenius distance per kernel
    mean_abs_delta: float  # over all scalars
    nonzero: int  # scalars that differ
    entropy_bits_per_byte: float  # byte-level entropy of the delta payload


def weight_delta_stats(a: bytes, b: bytes) -> DeltaStats:
    """How far apart two reports of the same spec are - the raw material for a
    differential compression stage (not implemented here)."""
    spec_a, params_a, _, _ = decode(a)
    spec_b, params_b, _, _ = decode(b)
    if spec_to_json(spec_a) != spec_to_json(spec_b):
        raise CodecError("reports describe different decoder specs")
    per_layer = [
        float(np.linalg.norm(wa.astype(np.float64) - wb.astype(np.float64)))
        for wa, wb in zip(params_a.kernels, params_b.kernels)
    ]
    delta = params_to_vector(params_a).astype(np.float64) - params_to_vector(params_b).astype(
        np.float64
    )
    delta_payload = (params_to_vector(params_a) - params_to_vector(params_b)).astype("<f4").tobytes()
    counts = np.bincount(np.frombuffer(delta_payload, dtype=np.uint8), minlength=256)
    probs = counts[counts > 0] / counts.sum()
    entropy = float(-np.sum(probs * np.log2(probs)))
    return DeltaStats(
        per_layer=per_layer,
        mean_abs_delta=float(np.mean(np.abs(delta))),
        nonzero=int(np.count_nonzero(delta)),
        entropy_bits_per_byte=entropy,
    )
