"""Binary checkpoint of a finished run.

Layout (little-endian)::

    magic     4s   b"FLCK"
    version   u16
    act       u8   0 = tanh, 1 = relu
    F, H, O   3 x u32
    epsilon   f64  calibrated anomaly threshold
    pct       f64  calibration percentile
    cfg_hash  16s  ascii hex of the config hash
    d         u64  parameter count
    params    d x f64 (U, W, b, V, c row-major)
    cfg_len   u32, then the canonical config text (utf-8)
    rep_len   u32, then the round reports as JSON (utf-8)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FliotError
from .rnn import ACTIVATIONS, AnomalyThreshold, RnnParams

MAGIC = b"FLCK"
VERSION = 1
_HEAD = struct.Struct("<4sHB3Idd16sQ")


@dataclass
class Checkpoint:
    params: RnnParams
    threshold: AnomalyThreshold
    config_hash: str
    config_text: str
    rounds: list  # one dict per round, keyed like rounds.csv


def write_checkpoint(path, ckpt: Checkpoint) -> Path:
    p = ckpt.params
    head = _HEAD.pack(MAGIC, VERSION, ACTIVATIONS.index(p.activation), p.n_features, p.hidden_size,
                      p.out_dim, ckpt.threshold.epsilon, ckpt.threshold.calibration_percentile,
                      ckpt.config_hash.encode("ascii"), p.size)
    cfg = ckpt.config_text.encode()
    rep = json.dumps(ckpt.rounds, sort_keys=True).encode()
    blob = (head + p.flatten().astype("<f8").tobytes() + struct.pack("<I", len(cfg)) + cfg
            + struct.pack("<I", len(rep)) + rep)
    path = Path(path)
    path.write_bytes(blob)
    return path


def read_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < _HEAD.size:
        raise FliotError(f"{path}: too short for a checkpoint")
    magic, version, act, F, H, O, eps, pct, chash, d = _HEAD.unpack_from(data)
    if magic != MAGIC:
        raise FliotError(f"{path}: not a checkpoint file")
    if version != VERSION:
        raise FliotError(f"{path}: unsupported checkpoint version {version}")
    pos = _HEAD.size
    flat = np.frombuffer(data, dtype="<f8", count=d, offset=pos).astype(np.float64)
    pos += 8 * d
    (n,) = struct.unpack_from("<I", data, pos)
    cfg = data[pos + 4:pos + 4 + n].decode()
    pos += 4 + n
    (m,) = struct.unpack_from("<I", data, pos)
    rounds = json.loads(data[pos + 4:pos + 4 + m].decode())
    params = RnnParams.unflatten(flat, F, H, O, ACTIVATIONS[act])
    return Checkpoint(params, AnomalyThreshold(eps, pct), chash.decode("ascii"), cfg, rounds)
