"""Named parameter collections: AdamW updates and binary checkpoints.

A parameter collection is a plain dict mapping name -> Tensor.  Checkpoints
are a flat binary format (version header, then name / shape / little-endian
float payload per entry) that round-trips bit-exactly.
"""

import hashlib
import struct

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"RMCK"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class AdamW:
    """Decoupled-weight-decay Adam with bias-corrected moments."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr_scale=1.0):
        self.step_count += 1
        t = self.step_count
        lr = self.lr * lr_scale
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"AdamW: parameter {name!r} has no gradient")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * (mhat / (np.sqrt(vhat) + self.eps)
                            + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def serialize_params(params):
    chunks = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params))]
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data)
        if data.dtype not in _DTYPE_CODES:
            raise TypeError(f"unsupported dtype {data.dtype} for {name!r}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[data.dtype], data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.astype(data.dtype.newbyteorder("<")).tobytes())
    return b"".join(chunks)


def deserialize_params(blob):
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dtype = _CODE_DTYPES[code]
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(blob, dtype=dtype.newbyteorder("<"),
                             count=n, offset=off).astype(dtype).reshape(shape)
        off += n * dtype.itemsize
        params[name] = Tensor(data)
    return params


def save_params(path, params):
    with open(path, "wb") as f:
        f.write(serialize_params(params))


def load_params(path):
    with open(path, "rb") as f:
        return deserialize_params(f.read())


def fingerprint(params):
    """Stable digest of a parameter collection (hex string)."""
    return hashlib.sha256(serialize_params(params)).hexdigest()
