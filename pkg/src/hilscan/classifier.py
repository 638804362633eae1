"""Benign-vs-malicious classification of rendered payload chunks.

Features are class-occupancy histograms: the 64x64 image is cut into an
8x8 grid of cells and each cell contributes its five class fractions,
followed by the five global fractions (325 values, all in [0, 1]). A
logistic model over those features is trained by full-batch gradient
descent on mean cross-entropy, so identical data and config reproduce
identical parameters and warm-starting from saved parameters continues
training without losing earlier phases. An external image classifier can
be swapped in through a subprocess hook.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hilscan import binvis
from hilscan.errors import (
    DimensionMismatch,
    NonFiniteLoss,
    ProcessSpawnFailure,
    SchemaMismatch,
    SingleClassData,
    WrongImageSize,
)

IMAGE_SIDE = 64
CELL_SIDE = 8  # 8x8 grid of 8x8-pixel cells
N_CLASSES = 5
FEATURE_DIM = (IMAGE_SIDE // CELL_SIDE) ** 2 * N_CLASSES + N_CLASSES  # 325

MODEL_SCHEMA_VERSION = 1

LABEL_NORMAL = "normal"
LABEL_MALICIOUS = "malicious"


def extract_features(image):
    """325-dim feature vector of a 64x64 class image."""
    if image.side != IMAGE_SIDE:
        raise WrongImageSize(f"expected side {IMAGE_SIDE}, got {image.side}")
    from hilscan import kernels
    counts = np.asarray(kernels.tile_class_counts(image.classes, IMAGE_SIDE, CELL_SIDE),
                        dtype=np.float64).reshape(-1, N_CLASSES)
    cells = counts / (CELL_SIDE * CELL_SIDE)
    globals_ = counts.sum(axis=0) / (IMAGE_SIDE * IMAGE_SIDE)
    return np.concatenate([cells.ravel(), globals_])


@dataclass
class LabeledSet:
    """Feature matrix with labels; label 1 means malicious."""

    features: np.ndarray  # (n, FEATURE_DIM) float64
    labels: np.ndarray    # (n,) float64 of 0.0 / 1.0

    @classmethod
    def from_pairs(cls, pairs):
        feats, labels = [], []
        for vector, label in pairs:
            feats.append(np.asarray(vector, dtype=np.float64))
            labels.append(1.0 if label == LABEL_MALICIOUS else 0.0)
        return cls(np.array(feats, dtype=np.float64), np.array(labels, dtype=np.float64))

    @property
    def class_counts(self):
        malicious = int(self.labels.sum())
        return {LABEL_NORMAL: len(self.labels) - malicious, LABEL_MALICIOUS: malicious}


@dataclass
class TrainConfig:
    learning_rate: float = 0.5
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate cannot be negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class ModelParams:
    weights: np.ndarray
    bias: float
    trained_epochs: int = 0
    seed: int = 0

    def copy(self):
        return ModelParams(self.weights.copy(), self.bias, self.trained_epochs, self.seed)


@dataclass
class Prediction:
    p_malicious: float
    label: str
    threshold: float = 0.5


@dataclass
class PredictionUnavailable:
    """Per-item outcome when an external model line could not be used."""

    reason: str


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cross_entropy_loss(weights, bias, features, labels):
    """Mean binary cross-entropy of the logistic model on the data."""
    z = features @ weights + bias
    # log(1 + e^z) - y z, stable for either sign of z
    return float(np.mean(np.logaddexp(0.0, z) - labels * z))


def cross_entropy_gradient(weights, bias, features, labels):
    """Analytic gradient of cross_entropy_loss in (weights, bias)."""
    n = len(labels)
    residual = _sigmoid(features @ weights + bias) - labels
    return features.T @ residual / n, float(residual.mean())


def train(data, config=None, warm_start=None):
    """Fit the logistic model by full-batch gradient descent.

    Without warm_start the weights start at zero, so results depend only
    on data and config. With warm_start training continues exactly from
    the prior parameters. Divergence raises NonFiniteLoss carrying the
    last parameters that still had finite loss.
    """
    config = config or TrainConfig()
    X = np.asarray(data.features, dtype=np.float64)
    y = np.asarray(data.labels, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("training data must be a non-empty 2d feature matrix")
    counts = data.class_counts
    if counts[LABEL_NORMAL] == 0 or counts[LABEL_MALICIOUS] == 0:
        raise SingleClassData(f"both classes required, got {counts}")

    if warm_start is not None:
        if len(warm_start.weights) != X.shape[1]:
            raise DimensionMismatch(
                f"warm start has {len(warm_start.weights)} weights, data has {X.shape[1]} features")
        w = np.asarray(warm_start.weights, dtype=np.float64).copy()
        b = float(warm_start.bias)
        prior_epochs = warm_start.trained_epochs
    else:
        w = np.zeros(X.shape[1], dtype=np.float64)
        b = 0.0
        prior_epochs = 0

    last_finite = ModelParams(w.copy(), b, prior_epochs, config.seed)
    for epoch in range(config.epochs):
        loss = cross_entropy_loss(w, b, X, y)
        if not math.isfinite(loss):
            raise NonFiniteLoss(f"loss became non-finite at epoch {epoch}", params=last_finite)
        last_finite = ModelParams(w.copy(), b, prior_epochs + epoch, config.seed)
        grad_w, grad_b = cross_entropy_gradient(w, b, X, y)
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b

    if not (np.all(np.isfinite(w)) and math.isfinite(b)
            and math.isfinite(cross_entropy_loss(w, b, X, y))):
        raise NonFiniteLoss("training ended with non-finite parameters", params=last_finite)
    return ModelParams(w, b, prior_epochs + config.epochs, config.seed)


def predict(model, features, threshold=0.5):
    """Probability the features came from malicious traffic, plus label.

    A probability exactly at the threshold labels malicious: undecided
    traffic fails closed.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.shape != model.weights.shape:
        raise DimensionMismatch(
            f"feature vector has shape {x.shape}, model expects {model.weights.shape}")
    z = float(x @ model.weights + model.bias)
    p = float(_sigmoid(np.array([z]))[0])
    label = LABEL_MALICIOUS if p >= threshold else LABEL_NORMAL
    return Prediction(p, label, threshold)


def save_model(model):
    """Serialize to a JSON document; round-trips bit-for-bit."""
    return json.dumps({
        "schema_version": MODEL_SCHEMA_VERSION,
        "dim": len(model.weights),
        "weights": [float(v) for v in model.weights],
        "bias": float(model.bias),
        "trained_epochs": model.trained_epochs,
        "seed": model.seed,
    })


def load_model(document):
    if isinstance(document, (bytes, bytearray)):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SchemaMismatch(f"model document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaMismatch("model document must be a JSON object")
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaMismatch(
            f"unsupported model schema version {version!r}, expected {MODEL_SCHEMA_VERSION}")
    try:
        weights = np.asarray(doc["weights"], dtype=np.float64)
        bias = float(doc["bias"])
        dim = int(doc["dim"])
        trained_epochs = int(doc["trained_epochs"])
        seed = int(doc["seed"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"model document missing or malformed field: {exc}") from exc
    if weights.ndim != 1 or len(weights) != dim:
        raise SchemaMismatch(f"dim field says {dim}, document has {len(weights)} weights")
    if not (np.all(np.isfinite(weights)) and math.isfinite(bias)):
        raise SchemaMismatch("model parameters must be finite")
    return ModelParams(weights, bias, trained_epochs, seed)


@dataclass
class ExternalModel:
    """Descriptor for an external classifier process.

    The command is run once with the handoff directory appended as its
    final argument. The directory contains one PNG per image, named by
    zero-padded index; the process must print one probability per image
    to stdout, one line each, in index order.
    """

    command: list[str] = field(default_factory=list)
    timeout: float | None = 60.0


def external_model_hook(images, model, workdir=None, threshold=0.5):
    """Classify images through an external process.

    Returns one entry per image, in order: a Prediction, or a
    PredictionUnavailable for missing or malformed output lines.
    """
    if not model.command:
        raise ProcessSpawnFailure("external model has no command configured")
    images = list(images)
    own_dir = None
    if workdir is None:
        own_dir = tempfile.TemporaryDirectory(prefix="hilscan-ext-")
        workdir = own_dir.name
    try:
        for index, image in enumerate(images):
            binvis.write_image(image, "png", os.path.join(workdir, f"{index:06d}.png"))
        try:
            proc = subprocess.run(
                list(model.command) + [str(workdir)],
                capture_output=True, text=True, timeout=model.timeout, check=False)
        except (OSError, subprocess.SubprocessError) as exc:
            raise ProcessSpawnFailure(f"cannot run external model: {exc}") from exc
        lines = proc.stdout.splitlines()
        results = []
        for index in range(len(images)):
            if index >= len(lines):
                results.append(PredictionUnavailable("no output line"))
                continue
            line = lines[index].strip()
            try:
                p = float(line)
            except ValueError:
                results.append(PredictionUnavailable(f"malformed line {line!r}"))
                continue
            if not 0.0 <= p <= 1.0 or not math.isfinite(p):
                results.append(PredictionUnavailable(f"probability out of range: {line!r}"))
                continue
            label = LABEL_MALICIOUS if p >= threshold else LABEL_NORMAL
            results.append(Prediction(p, label, threshold))
        return results
    finally:
        if own_dir is not None:
            own_dir.cleanup()
