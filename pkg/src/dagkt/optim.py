"""Adam optimiser, gradient clipping and the named-tensor checkpoint format."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import DTYPE, ShapeError, Tensor


class Adam:
    """Adam with bias-corrected moment estimates.

    Moments are keyed by parameter position, so ``params`` must be passed in
    the same order on every call to :meth:`step`.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads=None):
        grads = [p.grad for p in self.params] if grads is None else list(grads)
        if len(grads) != len(self.params):
            raise ShapeError(f"adam: {len(grads)} gradients for {len(self.params)} parameters")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"adam: gradient shape {g.shape} does not match parameter {p.shape}")

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def clip_grad_norm(params, max_norm):
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total


# ----------------------------------------------------------------------------
# checkpoints: <dir>/tensors.bin holds raw little-endian float64 values back to
# back, <dir>/manifest.json lists name, shape and byte offset of each tensor.

TENSOR_FILE = "tensors.bin"
MANIFEST_FILE = "manifest.json"


def save_tensors(directory, tensors, extra=None):
    """Write ``{name: Tensor | ndarray}`` to ``directory``.

    ``extra`` is merged into the manifest under ``"meta"``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / TENSOR_FILE, "wb") as fh:
        for name, value in tensors.items():
            arr = np.asarray(value.data if isinstance(value, Tensor) else value, dtype="<f8")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    manifest = {"format": "dagkt-tensors/1", "dtype": "float64-le", "tensors": entries, "meta": extra or {}}
    (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_tensors(directory):
    """Inverse of :func:`save_tensors`; returns ``(arrays, meta)``."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_FILE).read_text())
    raw = (directory / TENSOR_FILE).read_bytes()
    arrays = {}
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(DTYPE)
    return arrays, manifest.get("meta", {})
