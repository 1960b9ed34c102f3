"""Versioned binary checkpoint container.

Layout (all integers little-endian):
    magic "GAITFORGE-CKPT\\n", version u32,
    config digest (u32 length + ascii hex),
    metadata JSON (u32 length + utf-8),
    block count u32, then per block:
        name (u32 length + utf-8), dtype code u8 (0 = float64, 1 = int64),
        ndim u32, shape (u64 each), raw little-endian data.

The digest ties a checkpoint to the resolved run configuration; loads verify
it when the caller supplies an expected digest.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

MAGIC = b"GAITFORGE-CKPT\n"
VERSION = 1
_DTYPES = {0: "<f8", 1: "<i8"}
_CODES = {np.dtype(np.float64): 0, np.dtype(np.int64): 1}


class CheckpointError(RuntimeError):
    """Corrupt, mismatched, or unreadable checkpoint file."""


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def rng_state_to_meta(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return json.loads(json.dumps(st))  # plain ints/strings only


def rng_from_meta(meta: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = meta
    return np.random.Generator(bg)


def save_checkpoint(path: str, arrays: dict[str, np.ndarray],
                    metadata: dict, digest: str) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        d = digest.encode("ascii")
        f.write(struct.pack("<I", len(d)))
        f.write(d)
        meta = json.dumps(metadata, sort_keys=True).encode()
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _CODES:
                arr = arr.astype(np.float64)
            nb = name.encode()
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", _CODES[arr.dtype]))
            f.write(struct.pack("<I", arr.ndim))
            for s in arr.shape:
                f.write(struct.pack("<Q", s))
            f.write(arr.astype(_DTYPES[_CODES[arr.dtype]]).tobytes())


def load_checkpoint(path: str, expected_digest: str | None = None):
    """Returns (arrays, metadata, digest); raises CheckpointError on mismatch."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from e
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    off = len(MAGIC)

    def take(n):
        nonlocal off
        chunk = data[off:off + n]
        if len(chunk) != n:
            raise CheckpointError(f"{path}: truncated file")
        off += n
        return chunk

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (dlen,) = struct.unpack("<I", take(4))
    digest = take(dlen).decode("ascii")
    if expected_digest is not None and digest != expected_digest:
        raise CheckpointError(
            f"{path}: config digest mismatch (checkpoint {digest[:12]}..., "
            f"expected {expected_digest[:12]}...)")
    (mlen,) = struct.unpack("<I", take(4))
    metadata = json.loads(take(mlen).decode())
    (count,) = struct.unpack("<I", take(4))
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode()
        (code,) = struct.unpack("<B", take(1))
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code}")
        (ndim,) = struct.unpack("<I", take(4))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        n_items = int(np.prod(shape)) if shape else 1
        raw = take(n_items * 8)
        arrays[name] = np.frombuffer(raw, dtype=_DTYPES[code]).reshape(shape).copy()
    return arrays, metadata, digest


# ---- helpers to pack networks and optimizer state into named blocks -------

def pack_mlp(prefix: str, p, arrays: dict) -> None:
    arrays[f"{prefix}/sizes"] = np.asarray(p.sizes, dtype=np.int64)
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        arrays[f"{prefix}/w{i}"] = w
        arrays[f"{prefix}/b{i}"] = b


def unpack_mlp(prefix: str, arrays: dict):
    from .nn import MlpParams
    sizes = [int(s) for s in arrays[f"{prefix}/sizes"]]
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        w = arrays[f"{prefix}/w{i}"]
        b = arrays[f"{prefix}/b{i}"]
        if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
            raise CheckpointError(f"block {prefix}/w{i}: shape mismatch")
        weights.append(w)
        biases.append(b)
    return MlpParams(sizes, weights, biases)


def pack_adam(prefix: str, st, arrays: dict, meta: dict) -> None:
    meta[f"{prefix}/step"] = st.step
    for i, (m, v) in enumerate(zip(st.m, st.v)):
        arrays[f"{prefix}/m{i}"] = m
        arrays[f"{prefix}/v{i}"] = v


def unpack_adam(prefix: str, params: list, arrays: dict, meta: dict):
    from .nn import AdamState
    st = AdamState.for_params(params)
    st.step = int(meta[f"{prefix}/step"])
    for i, p in enumerate(params):
        m = arrays[f"{prefix}/m{i}"]
        v = arrays[f"{prefix}/v{i}"]
        if m.shape != p.shape or v.shape != p.shape:
            raise CheckpointError(f"block {prefix}/m{i}: shape mismatch")
        st.m[i] = m
        st.v[i] = v
    return st
