"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic          4 bytes  b"PGSG"
    version        u32      currently 1
    arch_hash      16 bytes md5 of the architecture description
    meta_len       u32      followed by meta_len bytes of UTF-8 JSON
    n_params       u32
    per parameter: name_len u16, name utf-8, ndim u8, dims u32 each,
                   raw little-endian float32 data
    adam_t_g       u64
    adam_t_d       u64
    n_moments      u32      then (name, shape, f32 data) records, names
                            prefixed m./v. under their network prefix
    n_fibs         u32
    per fib:       name_len u16, name, alpha f64, increment f64,
                   ceiling f64, steps u64

The meta JSON carries the generator/discriminator configs, growth flags,
phase, resolution and a training-config echo, which is everything needed
to rebuild the networks before filling in the tensors.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict

import numpy as np

from .errors import DataError
from .fib import FibD, FibState, FibU
from .nn.adam import AdamState
from .nn.layers import named_params
from .sgan import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig

MAGIC = b"PGSG"
VERSION = 1


def architecture_hash(g: Generator, d: Discriminator) -> str:
    desc = g.describe() + "|" + d.describe() + "|" + "|".join(
        f"{n}:{p.shape}" for n, p in list(named_params(g)) + list(named_params(d)))
    return hashlib.md5(desc.encode()).hexdigest()


def _fib_states(g: Generator, d: Discriminator) -> dict[str, FibState]:
    out = {}
    if d.in_fib is not None:
        out["d.in_fib"] = d.in_fib.state
    if g.in_fib is not None:
        out["g.in_fib"] = g.in_fib.state
    if g.out_fib is not None:
        out["g.out_fib"] = g.out_fib.state
    return out


def _write_array(f, name: str, arr: np.ndarray):
    nb = name.encode()
    f.write(struct.pack("<H", len(nb)))
    f.write(nb)
    f.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<I", dim))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(f):
    (nlen,) = struct.unpack("<H", f.read(2))
    name = f.read(nlen).decode()
    (ndim,) = struct.unpack("<B", f.read(1))
    shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
    n = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
    return name, arr


def save_checkpoint(path, g: Generator, d: Discriminator,
                    adam_g: AdamState, adam_d: AdamState, meta: dict):
    meta = dict(meta)
    meta["generator"] = asdict(g.cfg)
    meta["discriminator"] = asdict(d.cfg)
    meta["g_grown"] = g.grown
    meta["d_grown"] = d.grown
    meta["architecture_hash"] = architecture_hash(g, d)
    fibs = _fib_states(g, d)
    meta["fib_alphas"] = {k: s.alpha for k, s in fibs.items()}
    meta_bytes = json.dumps(meta).encode()

    params = [("g." + n, p) for n, p in named_params(g)] + \
             [("d." + n, p) for n, p in named_params(d)]
    moments = []
    for prefix, state in (("g", adam_g), ("d", adam_d)):
        for kind in ("m", "v"):
            store = getattr(state, kind)
            moments += [(f"{prefix}.{kind}.{n}", a) for n, a in store.items()]

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(bytes.fromhex(meta["architecture_hash"]))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(params)))
        for name, arr in params:
            _write_array(f, name, arr)
        f.write(struct.pack("<Q", adam_g.t))
        f.write(struct.pack("<Q", adam_d.t))
        f.write(struct.pack("<I", len(moments)))
        for name, arr in moments:
            _write_array(f, name, arr)
        f.write(struct.pack("<I", len(fibs)))
        for name, s in fibs.items():
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<ddd", s.alpha, s.increment, s.ceiling))
            f.write(struct.pack("<Q", s.steps))


def load_checkpoint(path):
    """Rebuild (generator, discriminator, adam_g, adam_d, meta) from disk."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise DataError(f"{path}: not a PGSG checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        f.read(16)  # arch hash; authoritative copy lives in the meta JSON
        (mlen,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(mlen).decode())

        g = Generator(GeneratorConfig(**meta["generator"]))
        d = Discriminator(DiscriminatorConfig(
            input_channels=meta["discriminator"]["input_channels"],
            hidden=tuple(tuple(h) for h in meta["discriminator"]["hidden"])))
        if meta["d_grown"]:
            grow_discriminator_net(d)
        if meta["g_grown"]:
            grow_generator_net(g)

        params = {**{"g." + n: p for n, p in named_params(g)},
                  **{"d." + n: p for n, p in named_params(d)}}
        (n_params,) = struct.unpack("<I", f.read(4))
        for _ in range(n_params):
            name, arr = _read_array(f)
            if name not in params:
                raise DataError(f"{path}: unknown parameter {name}")
            if params[name].shape != arr.shape:
                raise DataError(f"{path}: shape mismatch for {name}")
            params[name][...] = arr

        adam_g = AdamState()
        adam_d = AdamState()
        (adam_g.t,) = struct.unpack("<Q", f.read(8))
        (adam_d.t,) = struct.unpack("<Q", f.read(8))
        (n_moments,) = struct.unpack("<I", f.read(4))
        for _ in range(n_moments):
            name, arr = _read_array(f)
            prefix, kind, pname = name.split(".", 2)
            state = adam_g if prefix == "g" else adam_d
            getattr(state, kind)[pname] = arr

        fibs = _fib_states(g, d)
        (n_fibs,) = struct.unpack("<I", f.read(4))
        for _ in range(n_fibs):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode()
            alpha, inc, ceil = struct.unpack("<ddd", f.read(24))
            (steps,) = struct.unpack("<Q", f.read(8))
            if name in fibs:
                st = fibs[name]
                st.alpha, st.increment, st.ceiling, st.steps = alpha, inc, ceil, steps

    if meta["architecture_hash"] != architecture_hash(g, d):
        raise DataError(f"{path}: architecture hash mismatch after rebuild")
    return g, d, adam_g, adam_d, meta


def grow_discriminator_net(d: Discriminator, rng=None,
                           increment: float = 1.0 / 30.0):
    c = d.cfg.input_channels
    d.in_fib = FibD(c, c, rng=rng,
                    state=FibState(increment=increment, ceiling=1.0))


def grow_generator_net(g: Generator, rng=None, increment: float = 1.0 / 30.0):
    c = g.cfg.input_channels
    g.in_fib = FibD(c, c, rng=rng,
                    state=FibState(increment=increment, ceiling=0.5))
    g.out_fib = FibU(g.cfg.base_width, g.to_image, rng=rng,
                     state=FibState(increment=increment, ceiling=0.5))
