"""Input batches: synthetic Gaussian samples and IDX (MNIST-style) files.

IDX layout (all integers big-endian): a 4-byte magic (0x00000803 for
image tensors, 0x00000801 for label vectors), one 4-byte size per
dimension, then the raw unsigned bytes. Images are flattened to vectors
and standardized per sample to zero mean and unit variance, matching the
unit-variance input condition the mean-field recurrences assume; labels
become one-hot target rows.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IdxParseError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class SampleBatch:
    """A batch of inputs with optional targets and a provenance tag."""

    inputs: np.ndarray              # (T, M0)
    targets: np.ndarray | None      # (T, C) or None
    provenance: str

    @property
    def T(self) -> int:
        return self.inputs.shape[0]


def gaussian_batch(T: int, M0: int, seed: int, targets: np.ndarray | None = None,
                   ) -> SampleBatch:
    """T i.i.d. standard-Gaussian input vectors from a counter-based stream."""
    if T < 1 or M0 < 1:
        raise ValueError("need T >= 1 and M0 >= 1")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return SampleBatch(inputs=rng.standard_normal((T, M0)), targets=targets,
                       provenance=f"gaussian(seed={seed})")


def _read_be32(data: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(data):
        raise IdxParseError(f"truncated file while reading {what}", offset)
    return struct.unpack_from(">I", data, offset)[0]


def _read_idx(path, expected_magic: int, ndim: int, what: str) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = _read_be32(data, 0, f"{what} magic")
    if magic != expected_magic:
        raise IdxParseError(
            f"bad {what} magic 0x{magic:08x} (expected 0x{expected_magic:08x})", 0)
    dims = [_read_be32(data, 4 + 4 * i, f"{what} dimension {i}") for i in range(ndim)]
    start = 4 + 4 * ndim
    count = int(np.prod(dims))
    if len(data) - start < count:
        raise IdxParseError(
            f"truncated {what} payload: need {count} bytes, have {len(data) - start}",
            start)
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=start).reshape(dims)


def standardize_rows(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per row; constant rows map to zero vectors."""
    x = np.asarray(x, dtype=float)
    mu = x.mean(axis=1, keepdims=True)
    sd = x.std(axis=1, keepdims=True)
    out = np.where(sd > 0, (x - mu) / np.where(sd > 0, sd, 1.0), 0.0)
    return out


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def load_idx(images_path, labels_path, num_classes: int = 10) -> SampleBatch:
    """Parse an IDX image/label file pair into a standardized SampleBatch."""
    images = _read_idx(images_path, IMAGE_MAGIC, 3, "image")
    labels = _read_idx(labels_path, LABEL_MAGIC, 1, "label")
    if images.shape[0] != labels.shape[0]:
        raise IdxParseError(
            f"image count {images.shape[0]} != label count {labels.shape[0]}", 4)
    bad = np.nonzero(labels >= num_classes)[0]
    if bad.size:
        raise IdxParseError(
            f"label {int(labels[bad[0]])} out of range [0, {num_classes})",
            8 + int(bad[0]))
    flat = images.reshape(images.shape[0], -1)
    return SampleBatch(
        inputs=standardize_rows(flat),
        targets=one_hot(labels, num_classes),
        provenance=f"idx({Path(images_path).name}, {Path(labels_path).name})",
    )


def write_idx_images(path, images: np.ndarray) -> None:
    """Write a (N, rows, cols) uint8 array in IDX image format."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError("images must be (N, rows, cols)")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def write_batch_csv(batch: SampleBatch, path) -> None:
    """Audit export: one row per sample, inputs then (if present) targets."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = batch.inputs.shape[1]
        header = ["sample"] + [f"x{i}" for i in range(dim)]
        if batch.targets is not None:
            header += [f"y{k}" for k in range(batch.targets.shape[1])]
        writer.writerow(header)
        for t in range(batch.T):
            row = [t] + [repr(float(v)) for v in batch.inputs[t]]
            if batch.targets is not None:
                row += [repr(float(v)) for v in batch.targets[t]]
            writer.writerow(row)
