"""Self-describing model checkpoints.

Layout (little-endian)::

    magic        8 bytes  b"TCDCKPT\\0"
    version      u32
    header_len   u32
    header       header_len bytes of UTF-8 JSON: network config, schedule
                 (kind, K), ablation flags, dataset stats, window sizes and the
                 ordered (name, shape) list of every parameter block
    payload      each listed block as contiguous f64, denoiser blocks first,
                 then inverse-dynamics blocks
    crc32        u32 over every preceding byte

JSON floats use Python's shortest round-trip repr, so stats reload bitwise.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .agent import InverseDynamics
from .conditioning import AblationFlags, DatasetStats
from .diffusion import Denoiser, UnetConfig, make_schedule
from .training import TrainedDenoiser

MAGIC = b"TCDCKPT\0"
VERSION = 1
_PREFIX = struct.Struct("<8sII")


class CheckpointError(ValueError):
    """Malformed, truncated or incompatible checkpoint."""


def _stats_json(s: DatasetStats) -> dict:
    return {"T_min": s.T_min, "T_max": s.T_max, "r_min": s.r_min, "r_max": s.r_max,
            "state_min": [float(v) for v in s.state_min],
            "state_max": [float(v) for v in s.state_max],
            "t_max": s.t_max, "return_basis": s.return_basis}


def _stats_from_json(d: dict) -> DatasetStats:
    return DatasetStats(d["T_min"], d["T_max"], d["r_min"], d["r_max"],
                        np.array(d["state_min"], dtype=np.float64),
                        np.array(d["state_max"], dtype=np.float64),
                        int(d["t_max"]), d["return_basis"])


def _blocks(params: dict) -> list:
    return [[name, list(arr.shape)] for name, arr in params.items()]


def checkpoint_to_bytes(trained: TrainedDenoiser, inverse: Optional[InverseDynamics] = None,
                        meta: Optional[dict] = None) -> bytes:
    header = {
        "unet": trained.model.cfg.to_dict(),
        "schedule": {"kind": trained.schedule.kind, "K": trained.schedule.K},
        "flags": asdict(trained.flags),
        "stats": _stats_json(trained.stats),
        "L": trained.L,
        "T_HC": trained.T_HC,
        "params": _blocks(trained.model.params),
        "inverse": None if inverse is None else {
            "state_dim": inverse.state_dim,
            "action_dim": inverse.action_dim,
            "action_scale": [float(v) for v in inverse.action_scale],
            "params": _blocks(inverse.params),
        },
        "meta": meta or {},
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(head)), head]
    for arr in trained.model.params.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if inverse is not None:
        for arr in inverse.params.values():
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def _read_blocks(buf: bytes, pos: int, blocks: list) -> tuple[dict, int]:
    out = {}
    for name, shape in blocks:
        n = int(np.prod(shape, dtype=np.int64))
        end = pos + 8 * n
        if end > len(buf):
            raise CheckpointError(f"checkpoint truncated inside block {name!r}")
        out[name] = np.frombuffer(buf[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
        pos = end
    return out, pos


def checkpoint_from_bytes(buf: bytes) -> tuple[TrainedDenoiser, Optional[InverseDynamics], dict]:
    if len(buf) < _PREFIX.size + 4:
        raise CheckpointError("checkpoint too short")
    magic, version, hlen = _PREFIX.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (crc,) = struct.unpack_from("<I", buf, len(buf) - 4)
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError("checkpoint checksum mismatch (corrupt or truncated)")
    pos = _PREFIX.size
    try:
        header = json.loads(buf[pos:pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    pos += hlen
    body = buf[:-4]
    params, pos = _read_blocks(body, pos, header["params"])
    inverse = None
    if header["inverse"] is not None:
        inv = header["inverse"]
        iparams, pos = _read_blocks(body, pos, inv["params"])
        inverse = InverseDynamics(iparams, inv["state_dim"], inv["action_dim"],
                                  np.array(inv["action_scale"], dtype=np.float64))
    if pos != len(body):
        raise CheckpointError("trailing bytes after the parameter payload")
    cfg = UnetConfig(**header["unet"])
    sched = make_schedule(header["schedule"]["K"], header["schedule"]["kind"])
    trained = TrainedDenoiser(Denoiser(cfg, params), sched, AblationFlags(**header["flags"]),
                              _stats_from_json(header["stats"]), header["L"], header["T_HC"])
    return trained, inverse, header["meta"]


def save_checkpoint(path, trained: TrainedDenoiser, inverse: Optional[InverseDynamics] = None,
                    meta: Optional[dict] = None) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(trained, inverse, meta))


def load_checkpoint(path) -> tuple[TrainedDenoiser, Optional[InverseDynamics], dict]:
    return checkpoint_from_bytes(Path(path).read_bytes())
