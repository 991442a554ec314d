"""Versioned binary checkpoints: model parameters, and optionally the
center table plus optimizer moments for exact training resume.

Layout: magic "ZSLCKPT1", u32 version, the four space dims plus hidden
width, per-net layer widths, then all parameters as 64-bit
little-endian floats in declaration order (f, g, h, D1, D2; W then b
per layer).  A flags word marks whether a training-state section
(step/epoch counters, centers, three Adam states) follows.
"""

from __future__ import annotations

import struct

import numpy as np

from .autodiff import AdamState, Tensor
from .nets import ModelParams, Spaces

MAGIC = b"ZSLCKPT1"
VERSION = 1

NET_NAMES = ("f", "g", "h", "d1", "d2")


class CheckpointError(Exception):
    pass


def _write_arr(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(path, params, centers=None, optimizers=None,
                    step=0, epoch=0):
    """Write params; pass centers + optimizers (dict name -> AdamState
    with names gen/d1/d2) to embed resumable training state."""
    has_training = centers is not None and optimizers is not None
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        s = params.spaces
        fh.write(struct.pack("<7I", VERSION, s.visual_dim, s.semantic_dim,
                             s.latent_dim, s.noise_dim, params.hidden,
                             1 if has_training else 0))
        for name in NET_NAMES:
            layers = getattr(params, name)
            fh.write(struct.pack("<I", len(layers)))
            for w, _ in layers:
                fh.write(struct.pack("<2I", *w.shape))
        for name in NET_NAMES:
            for w, b in getattr(params, name):
                _write_arr(fh, w.data)
                _write_arr(fh, b.data)
        if has_training:
            fh.write(struct.pack("<2Q", step, epoch))
            fh.write(struct.pack("<2I", *centers.shape))
            _write_arr(fh, centers)
            for key in ("gen", "d1", "d2"):
                st = optimizers[key]
                fh.write(struct.pack("<4dQI", st.lr, st.beta1, st.beta2,
                                     st.eps, st.step, len(st.m)))
                for m, v in zip(st.m, st.v):
                    _write_arr(fh, m)
                    _write_arr(fh, v)


class _Reader:
    def __init__(self, buf):
        self.buf, self.off = buf, 0

    def take(self, n, what):
        if self.off + n > len(self.buf):
            raise CheckpointError("checkpoint truncated while reading %s" % what)
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def arr(self, shape, what):
        n = int(np.prod(shape, dtype=np.int64))
        raw = self.take(8 * n, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def load_checkpoint(path, expect_training=False):
    """Returns (params, training) where training is None or a dict with
    step, epoch, centers, optimizers."""
    with open(path, "rb") as fh:
        buf = fh.read()
    r = _Reader(buf)
    if r.take(8, "magic") != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, vd, sd, ld, nd, hidden, flags = r.unpack("<7I", "header")
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    spaces = Spaces(vd, sd, ld, nd)
    widths = {}
    for name in NET_NAMES:
        (n_layers,) = r.unpack("<I", "layer count")
        widths[name] = [r.unpack("<2I", "layer widths") for _ in range(n_layers)]
    params = ModelParams.__new__(ModelParams)
    params.spaces = spaces
    params.hidden = hidden
    for name in NET_NAMES:
        layers = []
        for fan_in, fan_out in widths[name]:
            w = Tensor(r.arr((fan_in, fan_out), "weights"))
            b = Tensor(r.arr((fan_out,), "biases"))
            layers.append((w, b))
        setattr(params, name, layers)
    if not flags & 1:
        if expect_training:
            raise CheckpointError("checkpoint has no training-state section")
        if r.off != len(buf):
            raise CheckpointError("trailing bytes in checkpoint")
        return params, None
    step, epoch = r.unpack("<2Q", "counters")
    c_rows, c_cols = r.unpack("<2I", "center shape")
    centers = r.arr((c_rows, c_cols), "centers")
    optimizers = {}
    param_lists = {"gen": params.generator_tensors(),
                   "d1": params.net_tensors("d1"),
                   "d2": params.net_tensors("d2")}
    for key in ("gen", "d1", "d2"):
        lr, b1, b2, eps, ostep, count = r.unpack("<4dQI", "optimizer header")
        plist = param_lists[key]
        if count != len(plist):
            raise CheckpointError("optimizer %s has %d moment pairs, model "
                                  "needs %d" % (key, count, len(plist)))
        st = AdamState(plist, lr=lr, beta1=b1, beta2=b2, eps=eps)
        st.step = ostep
        st.m, st.v = [], []
        for p in plist:
            st.m.append(r.arr(p.shape, "adam m"))
            st.v.append(r.arr(p.shape, "adam v"))
        optimizers[key] = st
    if r.off != len(buf):
        raise CheckpointError("trailing bytes in checkpoint")
    return params, {"step": step, "epoch": epoch, "centers": centers,
                    "optimizers": optimizers}
