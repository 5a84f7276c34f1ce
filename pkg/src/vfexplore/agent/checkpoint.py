"""Binary checkpoint container.

Layout::

    MAGIC (8 bytes) | version u32 | meta_len u32 | meta JSON
    | n_tensors u32 | tensors... | sha256 of everything before it (32 bytes)

Each tensor record is ``name_len u16 | name | dtype_len u8 | dtype | ndim u8 |
shape (u64 * ndim) | nbytes u64 | raw little-endian bytes``.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .sac import AgentBundle, TrainConfig, make_bundle

MAGIC = b"VFXCKPT\x00"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def _flatten(bundle: AgentBundle) -> dict[str, torch.Tensor]:
    out: dict[str, torch.Tensor] = {}
    for mname, mod in bundle.named_modules().items():
        for k, v in mod.state_dict().items():
            out[f"{mname}/{k}"] = v
    out["log_alpha"] = bundle.log_alpha.detach()
    for oname, opt in bundle.named_optimizers().items():
        for pid, st in opt.state_dict()["state"].items():
            for k, v in st.items():
                out[f"{oname}/{pid}/{k}"] = v if torch.is_tensor(v) else torch.tensor(v)
    return out


def save_checkpoint(bundle: AgentBundle, path, meta: Optional[dict] = None) -> None:
    """Write atomically (temp file + rename)."""
    tensors = _flatten(bundle)
    header = {
        "obs_dim": bundle.obs_dim,
        "act_dim": bundle.act_dim,
        "action_limit": bundle.actor.action_limit,
        "train_cfg": {k: v for k, v in vars(bundle.cfg).items()},
        "env_steps": bundle.env_steps,
        "updates": bundle.updates,
        **(meta or {}),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    meta_bytes = json.dumps(header, sort_keys=True).encode()
    buf.write(struct.pack("<II", FORMAT_VERSION, len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = tensors[name].detach().cpu().numpy()
        arr = np.array(arr, order="C", copy=True)  # ascontiguousarray would promote 0-d to 1-d
        nb = name.encode()
        dt = arr.dtype.str.encode()
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack("<B", len(dt)) + dt)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        raw = arr.tobytes()
        buf.write(struct.pack("<Q", len(raw)))
        buf.write(raw)
    body = buf.getvalue()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(body + hashlib.sha256(body).digest())
    os.replace(tmp, path)


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32 or not data.startswith(MAGIC):
        raise CorruptCheckpointError(f"{path}: not a checkpoint or truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    off = len(MAGIC)
    version, mlen = struct.unpack_from("<II", body, off)
    off += 8
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    meta = json.loads(body[off:off + mlen])
    off += mlen
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + ln].decode()
            off += ln
            (dl,) = struct.unpack_from("<B", body, off)
            off += 1
            dtype = np.dtype(body[off:off + dl].decode())
            off += dl
            (ndim,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}Q", body, off)
            off += 8 * ndim
            (nbytes,) = struct.unpack_from("<Q", body, off)
            off += 8
            tensors[name] = np.frombuffer(body[off:off + nbytes], dtype=dtype).reshape(shape).copy()
            off += nbytes
    except (struct.error, ValueError) as err:
        raise CorruptCheckpointError(f"{path}: malformed tensor block ({err})") from err
    if off != len(body):
        raise CorruptCheckpointError(f"{path}: trailing bytes after tensor block")
    return meta, tensors


def load_checkpoint(path, expected_obs_dim: Optional[int] = None, expected_act_dim: Optional[int] = None) -> AgentBundle:
    """Rebuild a bundle; nothing is returned unless every tensor loads cleanly."""
    meta, tensors = read_checkpoint(path)
    if expected_obs_dim is not None and meta["obs_dim"] != expected_obs_dim:
        raise CheckpointShapeError(
            f"checkpoint observation dimension {meta['obs_dim']} != expected {expected_obs_dim}"
        )
    if expected_act_dim is not None and meta["act_dim"] != expected_act_dim:
        raise CheckpointShapeError(f"checkpoint action dimension {meta['act_dim']} != expected {expected_act_dim}")
    cfg = TrainConfig(**meta["train_cfg"])
    bundle = make_bundle(meta["obs_dim"], meta["act_dim"], meta["action_limit"], cfg, with_buffer=False)
    for mname, mod in bundle.named_modules().items():
        sd = mod.state_dict()
        new = {}
        for k, v in sd.items():
            key = f"{mname}/{k}"
            if key not in tensors:
                raise CorruptCheckpointError(f"missing tensor {key}")
            if tuple(tensors[key].shape) != tuple(v.shape):
                raise CheckpointShapeError(f"{key}: shape {tensors[key].shape} != {tuple(v.shape)}")
            new[k] = torch.from_numpy(tensors[key])
        mod.load_state_dict(new)
    with torch.no_grad():
        bundle.log_alpha.copy_(torch.from_numpy(tensors["log_alpha"]))
    for oname, opt in bundle.named_optimizers().items():
        sd = opt.state_dict()
        state: dict = {}
        prefix = f"{oname}/"
        for key, arr in tensors.items():
            if not key.startswith(prefix):
                continue
            pid, field = key[len(prefix):].split("/", 1)
            state.setdefault(int(pid), {})[field] = torch.from_numpy(arr)
        sd["state"] = state
        opt.load_state_dict(sd)
    bundle.env_steps = int(meta["env_steps"])
    bundle.updates = int(meta["updates"])
    return bundle
