"""MLP encoders, classification heads, momentum SGD with poly decay, checkpoints.

Encoders use rectified hidden layers; the final linear layer's output is the
feature vector handed to distillation, tapped before the rectifier that feeds
the classification head. The raw-feature classification path is therefore
``linear(relu(features))`` while band classifiers consume band features
directly (band reconstructions are zero-mean signals and are classified
without a rectifier).

Weight init is symmetric uniform with fan-in scaling: entries drawn from
``U(-1/sqrt(fan_in), +1/sqrt(fan_in))``, biases zero, one RNG stream per
layer keyed by the owning module's tag. The one exception is the feature
layer's bias, which starts at a positive constant so the rectified head path
opens in its active regime; the constant is pure DC, so it biases only the
low band of the feature spectrum.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, DimensionError, NumericError
from .numerics import SeededRng

CHECKPOINT_MAGIC = b"FQKDCKPT"
CHECKPOINT_VERSION = 1
FEATURE_BIAS_INIT = 0.5


def _init_weight(fan_in, fan_out, gen):
    bound = 1.0 / np.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=(fan_in, fan_out))


class MlpEncoder:
    """Fully-connected encoder emitting pre-activation features."""

    def __init__(self, weights, biases):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise DimensionError("encoder layer shapes are inconsistent")

    @classmethod
    def init(cls, widths, rng: SeededRng, tag: str) -> "MlpEncoder":
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise DimensionError(f"invalid layer widths {widths}")
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            gen = rng.stream(f"init.{tag}.layer", i)
            weights.append(_init_weight(fan_in, fan_out, gen))
            biases.append(np.zeros(fan_out))
        biases[-1] += FEATURE_BIAS_INIT
        return cls(weights, biases)

    @property
    def widths(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[1]

    def forward(self, x):
        """Return (features, cache); cache holds per-layer inputs for backward."""
        a = np.asarray(x, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise DimensionError(
                f"encoder expects input width {self.input_dim}, got {a.shape}"
            )
        layer_inputs = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            layer_inputs.append(a)
            z = a @ w + b
            a = z if i == last else np.maximum(z, 0.0)
        return a, layer_inputs

    def features(self, x):
        return self.forward(x)[0]

    def backward(self, layer_inputs, d_features):
        """Gradients of a scalar loss w.r.t. parameters, given d(loss)/d(features)."""
        grads = {}
        delta = np.asarray(d_features, dtype=np.float64)
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = layer_inputs[i]
            grads[f"w{i}"] = a_in.T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
                # hidden activations are relu(z); a_in > 0 marks the pass-through slope
                delta = delta * (layer_inputs[i] > 0.0)
        return grads

    def params(self):
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out


@dataclass
class LinearHead:
    """Linear map from feature space to class logits."""

    w: np.ndarray
    b: np.ndarray

    @classmethod
    def init(cls, dim: int, classes: int, rng: SeededRng, tag: str) -> "LinearHead":
        gen = rng.stream(f"init.{tag}.layer", 0)
        return cls(w=_init_weight(dim, classes, gen), b=np.zeros(classes))

    def logits(self, x):
        return np.asarray(x, dtype=np.float64) @ self.w + self.b

    def params(self):
        return {"w": self.w, "b": self.b}


@dataclass
class SharedClassifiers:
    """One classifier per band, shared across modalities."""

    phi_l: LinearHead
    phi_h: LinearHead

    @classmethod
    def init(cls, dim: int, classes: int, rng: SeededRng) -> "SharedClassifiers":
        return cls(
            phi_l=LinearHead.init(dim, classes, rng, "phi_l"),
            phi_h=LinearHead.init(dim, classes, rng, "phi_h"),
        )


def raw_class_logits(head: LinearHead, features):
    """Classification path for raw features: rectify, then the linear head."""
    rectified = np.maximum(np.asarray(features, dtype=np.float64), 0.0)
    return rectified @ head.w + head.b, rectified


def raw_class_backward(head: LinearHead, features, rectified, d_logits):
    d_w = rectified.T @ d_logits
    d_b = d_logits.sum(axis=0)
    d_features = (d_logits @ head.w.T) * (np.asarray(features) > 0.0)
    return d_w, d_b, d_features


class PolySgd:
    """SGD with momentum and polynomial learning-rate decay.

    Per step: ``v <- momentum*v + g`` then ``p <- p - lr(t)*v`` with
    ``lr(t) = lr0 * (1 - t/max_steps)**power``. The step counter starts at 0,
    so the first update uses the full base rate and ``lr(max_steps) == 0``.
    """

    def __init__(self, params, lr=1e-2, momentum=0.9, power=0.9, max_steps=1):
        if lr < 0:
            raise NumericError(f"learning rate must be >= 0, got {lr}")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.power = power
        self.max_steps = max(1, int(max_steps))
        self.step_count = 0
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def lr_at(self, t: int) -> float:
        return self.lr * max(0.0, 1.0 - t / self.max_steps) ** self.power

    def step(self, grads):
        for name in self.params:
            g = grads[name]
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter '{name}'")
        lr = self.lr_at(self.step_count)
        for name in sorted(self.params):
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            self.params[name] -= lr * v
        self.step_count += 1


def snapshot_params(params):
    return {k: v.copy() for k, v in params.items()}


def restore_params(params, snapshot):
    if set(params) != set(snapshot):
        raise CheckpointError("snapshot keys do not match parameter store")
    for k, v in params.items():
        if v.shape != snapshot[k].shape:
            raise CheckpointError(f"snapshot shape mismatch for '{k}'")
        np.copyto(v, snapshot[k])


def params_fingerprint(params) -> str:
    h = hashlib.blake2b(digest_size=16)
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()


def _payload_checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def save_tensors(path, tensors):
    """Write named float64 tensors in the package checkpoint format.

    Layout, all little-endian: magic, u32 version, u32 tensor count, a shape
    table (u16 name length + name bytes, u8 ndim, u32 dims), the raw float64
    payload in table order, and a trailing u64 checksum of the payload bytes.
    """
    names = sorted(tensors)
    header = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(names))]
    payload_parts = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode()
        header.append(struct.pack("<H", len(encoded)))
        header.append(encoded)
        header.append(struct.pack("<B", arr.ndim))
        header.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        payload_parts.append(arr.tobytes())
    payload = b"".join(payload_parts)
    blob = b"".join(header) + payload + struct.pack("<Q", _payload_checksum(payload))
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"not a freqkd checkpoint: {path}")
    offset = len(CHECKPOINT_MAGIC)
    version, count = struct.unpack_from("<II", blob, offset)
    offset += 8
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    shapes = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        shapes.append((name, shape))
    payload_len = sum(int(np.prod(s)) * 8 for _, s in shapes)
    payload = blob[offset : offset + payload_len]
    if len(payload) != payload_len or len(blob) != offset + payload_len + 8:
        raise CheckpointError("checkpoint is truncated")
    (stored,) = struct.unpack_from("<Q", blob, offset + payload_len)
    if stored != _payload_checksum(payload):
        raise CheckpointError("checkpoint payload checksum mismatch")
    tensors = {}
    cursor = 0
    for name, shape in shapes:
        size = int(np.prod(shape)) * 8
        arr = np.frombuffer(payload[cursor : cursor + size], dtype="<f8").reshape(shape)
        tensors[name] = arr.astype(np.float64)
        cursor += size
    return tensors


_MODALITY_CODE = {"a": 0.0, "b": 1.0}
_MODALITY_NAME = {v: k for k, v in _MODALITY_CODE.items()}


@dataclass
class ModelBundle:
    """One modality's encoder and private head, optionally with shared classifiers."""

    modality: str
    encoder: MlpEncoder
    head: LinearHead
    phi: SharedClassifiers | None = None

    def trainable_params(self):
        out = {f"encoder.{k}": v for k, v in self.encoder.params().items()}
        out.update({f"head.{k}": v for k, v in self.head.params().items()})
        if self.phi is not None:
            out.update({f"phi_l.{k}": v for k, v in self.phi.phi_l.params().items()})
            out.update({f"phi_h.{k}": v for k, v in self.phi.phi_h.params().items()})
        return out

    def save(self, path):
        tensors = dict(self.trainable_params())
        tensors["meta.modality"] = np.array([_MODALITY_CODE[self.modality]])
        save_tensors(path, tensors)

    @classmethod
    def load(cls, path) -> "ModelBundle":
        tensors = load_tensors(path)
        if "meta.modality" not in tensors:
            raise CheckpointError("checkpoint is missing the modality tag")
        code = float(tensors["meta.modality"][0])
        if code not in _MODALITY_NAME:
            raise CheckpointError(f"unknown modality code {code}")
        n_layers = len([k for k in tensors if k.startswith("encoder.w")])
        if n_layers == 0:
            raise CheckpointError("checkpoint holds no encoder layers")
        weights = [tensors[f"encoder.w{i}"] for i in range(n_layers)]
        biases = [tensors[f"encoder.b{i}"] for i in range(n_layers)]
        head = LinearHead(w=tensors["head.w"], b=tensors["head.b"])
        phi = None
        if "phi_l.w" in tensors:
            phi = SharedClassifiers(
                phi_l=LinearHead(w=tensors["phi_l.w"], b=tensors["phi_l.b"]),
                phi_h=LinearHead(w=tensors["phi_h.w"], b=tensors["phi_h.b"]),
            )
        return cls(
            modality=_MODALITY_NAME[code],
            encoder=MlpEncoder(weights, biases),
            head=head,
            phi=phi,
        )
