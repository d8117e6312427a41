"""Three-layer ReLU MLP with softmax cross-entropy and exact manual backprop.

Model parameters live in one flat float64 vector. A manifest maps
contiguous segments of that vector to per-layer (weight | bias) matrices,
so optimizers stay purely elementwise and diagnostics can recover the
natural layer shapes. All functions here are pure; identical inputs give
bit-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths [d_in, h1, h2, d_out]; hidden ReLU, softmax output."""

    layer_dims: tuple[int, int, int, int]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) != 4:
            raise ConfigError(f"layer_dims must have length 4, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ConfigError(f"layer_dims entries must all be >= 1, got {dims}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def num_params(self) -> int:
        d = self.layer_dims
        return sum(d[i] * d[i + 1] + d[i + 1] for i in range(3))


@dataclass(frozen=True)
class Segment:
    """One contiguous slice of the flat parameter vector."""

    layer: int
    kind: str  # "weight" or "bias"
    rows: int
    cols: int
    offset: int

    @property
    def size(self) -> int:
        return self.rows * self.cols


def build_manifest(spec: MlpSpec) -> tuple[Segment, ...]:
    """Segments in layer order, weight before bias, gap-free offsets."""
    segments = []
    offset = 0
    dims = spec.layer_dims
    for layer in range(3):
        fan_in, fan_out = dims[layer], dims[layer + 1]
        segments.append(Segment(layer, "weight", fan_in, fan_out, offset))
        offset += fan_in * fan_out
        segments.append(Segment(layer, "bias", 1, fan_out, offset))
        offset += fan_out
    return tuple(segments)


@dataclass
class ParamVector:
    """Flat float64 parameter vector plus its segment manifest."""

    values: np.ndarray
    manifest: tuple[Segment, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        extent = 0
        for seg in self.manifest:
            if seg.offset != extent:
                raise ConfigError(
                    f"manifest segment {seg.layer}/{seg.kind} at offset {seg.offset}"
                    f" leaves a gap or overlap (expected offset {extent})"
                )
            extent += seg.size
        if self.values.shape != (extent,):
            raise ConfigError(
                f"parameter vector has length {self.values.size},"
                f" manifest covers {extent}"
            )

    @property
    def dim(self) -> int:
        return self.values.size

    def segment(self, seg: Segment) -> np.ndarray:
        """View of one segment reshaped to (rows, cols); no copy."""
        return self.values[seg.offset : seg.offset + seg.size].reshape(seg.rows, seg.cols)


@dataclass(frozen=True)
class Batch:
    """A mini-batch: features (B, d_in) and integer class labels (B,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ConfigError("batch features must be a (B, d) matrix with B >= 1")
        if self.labels.shape != (self.features.shape[0],):
            raise ConfigError("batch labels must be one integer per row")
        if self.labels.min() < 0:
            raise ConfigError("batch labels must be non-negative")

    @property
    def size(self) -> int:
        return self.features.shape[0]


def init_params(spec: MlpSpec, seed: int) -> ParamVector:
    """He-style initialization: weights ~ N(0, 2/fan_in), biases zero."""
    rng = np.random.default_rng(seed & ((1 << 64) - 1))
    manifest = build_manifest(spec)
    values = np.zeros(spec.num_params)
    for seg in manifest:
        if seg.kind == "weight":
            scale = np.sqrt(2.0 / seg.rows)
            block = scale * rng.standard_normal((seg.rows, seg.cols))
            values[seg.offset : seg.offset + seg.size] = block.reshape(-1)
    return ParamVector(values, manifest)


def _check_conformance(spec: MlpSpec, params: ParamVector, batch: Batch) -> None:
    if params.manifest != build_manifest(spec):
        raise ConfigError("parameter manifest does not match the model spec")
    if batch.features.shape[1] != spec.layer_dims[0]:
        raise ConfigError(
            f"batch feature width {batch.features.shape[1]} != model input"
            f" width {spec.layer_dims[0]}"
        )
    if int(batch.labels.max()) >= spec.layer_dims[-1]:
        raise ConfigError(
            f"batch label {int(batch.labels.max())} out of range for"
            f" {spec.layer_dims[-1]} classes"
        )


def _forward(params: ParamVector, batch: Batch):
    w1, b1, w2, b2, w3, b3 = (params.segment(s) for s in params.manifest)
    z1 = batch.features @ w1 + b1[0]
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2 + b2[0]
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ w3 + b3[0]
    return z1, a1, z2, a2, logits


def _softmax(logits: np.ndarray) -> np.ndarray:
    # max-subtraction keeps exp() in range for any finite logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _mean_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(labels.size), labels]
    return float(np.mean(log_norm - picked))


def loss_and_grad(spec: MlpSpec, params: ParamVector, batch: Batch) -> tuple[float, ParamVector]:
    """Mean softmax cross-entropy over the batch and its exact gradient.

    The gradient shares the parameter manifest. Uses the mean (not sum)
    reduction, so duplicating every batch row changes nothing.
    """
    _check_conformance(spec, params, batch)
    z1, a1, z2, a2, logits = _forward(params, batch)
    loss = _mean_cross_entropy(logits, batch.labels)

    b = batch.size
    dz3 = _softmax(logits)
    dz3[np.arange(b), batch.labels] -= 1.0
    dz3 /= b

    w2, w3 = params.segment(params.manifest[2]), params.segment(params.manifest[4])
    grad = np.empty_like(params.values)
    out = ParamVector(grad, params.manifest)

    out.segment(params.manifest[4])[:] = a2.T @ dz3
    out.segment(params.manifest[5])[0] = dz3.sum(axis=0)
    dz2 = (dz3 @ w3.T) * (z2 > 0.0)
    out.segment(params.manifest[2])[:] = a1.T @ dz2
    out.segment(params.manifest[3])[0] = dz2.sum(axis=0)
    dz1 = (dz2 @ w2.T) * (z1 > 0.0)
    out.segment(params.manifest[0])[:] = batch.features.T @ dz1
    out.segment(params.manifest[1])[0] = dz1.sum(axis=0)
    return loss, out


def evaluate(spec: MlpSpec, params: ParamVector, batch: Batch) -> tuple[float, float]:
    """Mean cross-entropy loss and top-1 accuracy on the batch.

    Argmax ties break toward the lowest class index, so degenerate
    logits still give a deterministic accuracy.
    """
    _check_conformance(spec, params, batch)
    logits = _forward(params, batch)[4]
    loss = _mean_cross_entropy(logits, batch.labels)
    predictions = np.argmax(logits, axis=1)  # first maximum wins
    accuracy = float(np.mean(predictions == batch.labels))
    return loss, accuracy
