"""Tiny dense networks stored as plain numpy arrays.

Evaluation and input gradients are implemented here in numpy so inference
has no framework dependency; the training loops (torch) export their
weights into these containers.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"PPCKPT1\n"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint container."""


@dataclass
class MLP:
    """Fully connected net with tanh hidden activations and linear output.

    weights[i] has shape (fan_out, fan_in); biases[i] has shape (fan_out,).
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must be nonempty and same length")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @staticmethod
    def init(layer_sizes: list[int], rng: np.random.Generator) -> "MLP":
        """Glorot-uniform initialization."""
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return MLP(weights, biases)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on a single input (1D) or a batch (2D, row per sample)."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last:
                h = np.tanh(h)
        return h

    def forward_with_activations(self, x: np.ndarray):
        h = np.asarray(x, dtype=np.float64)
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i != last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def input_jacobian(self, x: np.ndarray) -> np.ndarray:
        """d output / d input for a single 1D input, shape (out_dim, in_dim).

        One reverse pass through the dense layers; exact, no finite differences.
        """
        _, acts = self.forward_with_activations(np.asarray(x, dtype=np.float64))
        last = len(self.weights) - 1
        jac = self.weights[last].copy()
        for i in range(last - 1, -1, -1):
            # acts[i + 1] holds tanh(pre-activation) for hidden layer i
            jac = (jac * (1.0 - acts[i + 1] ** 2)) @ self.weights[i]
        return jac

    def input_gradient(self, x: np.ndarray) -> np.ndarray:
        """Gradient of a scalar-output net w.r.t. its input."""
        jac = self.input_jacobian(x)
        if jac.shape[0] != 1:
            raise ValueError("input_gradient requires a scalar-output net")
        return jac[0]


def save_mlp_container(path, mlp: MLP, meta: dict) -> None:
    """Write a versioned binary checkpoint.

    Layout: magic, u32 little-endian JSON header length, UTF-8 JSON header,
    then all weight/bias arrays concatenated as little-endian float64 in
    layer order (W0, b0, W1, b1, ...). Round-trip is bit-exact.
    """
    header = dict(meta)
    header["container_version"] = CHECKPOINT_VERSION
    header["layer_sizes"] = mlp.layer_sizes
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for w, b in zip(mlp.weights, mlp.biases):
        buf.write(w.astype("<f8").tobytes())
        buf.write(b.astype("<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_mlp_container(path) -> tuple[MLP, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: bad magic, not a checkpoint container")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header: {e}") from e
    off += hlen
    version = header.get("container_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: container version {version} not supported (expected {CHECKPOINT_VERSION})")
    sizes = header["layer_sizes"]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        n = fan_out * fan_in
        w = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(fan_out, fan_in)
        off += 8 * n
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.copy())
        biases.append(b.copy())
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes after weight payload")
    return MLP(weights, biases), header
