"""Sampling, exact forward/backward passes, and per-sample gradient batches.

Parameters are drawn layer-wise as W^l ~ N(0, sigma_w2[l]/M_{l-1}),
b^l ~ N(0, sigma_b2[l]) from a counter-based Philox stream, so ensembles
are reproducible and seeds can be fanned out to parallel workers without
coordination.

Flat parameter layout (used by gradient batches, training vectors and the
serialized container alike): layers in order 1..L, weights before biases,
weight matrices raveled row-major:

    [W^1.ravel(), b^1, W^2, b^2, ..., W^L, b^L]

Gradient batches stack one column per (output k, sample t) with column
index k*T + t, i.e. grouped output-major into C blocks of T columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .activations import get_activation
from .errors import NumericOverflowError
from .meanfield import NetworkShape, make_shape


@dataclass(frozen=True)
class ParameterSet:
    """One realization of all weights and biases for a NetworkShape."""

    shape: NetworkShape
    weights: tuple[np.ndarray, ...]   # W^l of shape (M_l, M_{l-1}), l = 1..L
    biases: tuple[np.ndarray, ...]    # b^l of shape (M_l,)
    seed: int | None = None


@dataclass(frozen=True)
class ActivationRecord:
    """Pre-/post-activations for a batch of inputs.

    pre[l-1] = u^l (T, M_l) for l = 1..L; post[l] = h^l (T, M_l) for
    l = 0..L-1 with h^0 the inputs; outputs = u^L (T, C).
    """

    pre: tuple[np.ndarray, ...]
    post: tuple[np.ndarray, ...]
    outputs: np.ndarray


@dataclass(frozen=True)
class GradientBatch:
    """B stacks the exact output gradients: B[:, k*T + t] = d f_k(t) / d theta."""

    B: np.ndarray
    P: int
    C: int
    T: int
    weight_rows: np.ndarray   # boolean mask selecting weight (non-bias) rows


def sample_network(shape: NetworkShape, seed: int) -> ParameterSet:
    """Draw one parameter realization; identical seeds give identical draws."""
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    weights, biases = [], []
    for l in range(shape.L):
        fan_in = shape.widths[l]
        fan_out = shape.widths[l + 1]
        weights.append(rng.normal(0.0, np.sqrt(shape.sigma_w2[l] / fan_in), (fan_out, fan_in)))
        biases.append(rng.normal(0.0, np.sqrt(shape.sigma_b2[l]), fan_out)
                      if shape.sigma_b2[l] > 0 else np.zeros(fan_out))
    return ParameterSet(shape, tuple(weights), tuple(biases), int(seed))


def forward(params: ParameterSet, inputs: np.ndarray) -> ActivationRecord:
    """Run the network on a (T, M_0) batch and keep every intermediate."""
    shape = params.shape
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x.shape[1] != shape.widths[0]:
        raise ValueError(f"expected input dimension {shape.widths[0]}, got {x.shape[1]}")
    pre, post = [], [x]
    h = x
    for l in range(shape.L):
        u = h @ params.weights[l].T + params.biases[l]
        if not np.all(np.isfinite(u)):
            raise NumericOverflowError(f"non-finite pre-activation at layer {l + 1}",
                                       layer=l + 1)
        pre.append(u)
        if l < shape.L - 1:
            h = shape.activations[l].fn(u)
            post.append(h)
    return ActivationRecord(tuple(pre), tuple(post), pre[-1])


def output_deltas(params: ParameterSet, record: ActivationRecord) -> tuple[np.ndarray, ...]:
    """Sensitivities d^l[k, t, i] = d f_k(t) / d u^l_i for every layer.

    The output layer is linear, so d^L is the identity across output
    units; lower layers follow the backpropagated chain.
    """
    shape = params.shape
    C = shape.C
    T = record.outputs.shape[0]
    deltas = [None] * shape.L
    deltas[shape.L - 1] = np.broadcast_to(np.eye(C)[:, None, :], (C, T, C)).copy()
    for l in range(shape.L - 1, 0, -1):
        dphi = shape.activations[l - 1].deriv(record.pre[l - 1])      # (T, M_l)
        deltas[l - 1] = (deltas[l] @ params.weights[l]) * dphi[None, :, :]
    return tuple(deltas)


def backward(params: ParameterSet, record: ActivationRecord) -> GradientBatch:
    """Assemble the full P x (C*T) gradient matrix B.

    Materializes all P*C*T entries; meant for small and medium networks
    (gradient checks, brute-force spectra, Fisher-Rao). The spectral module
    has a Gram-based path that never forms B for wide-network ensembles.
    """
    shape = params.shape
    deltas = output_deltas(params, record)
    C = shape.C
    T = record.outputs.shape[0]
    P = shape.param_count
    B = np.empty((P, C * T))
    weight_rows = np.zeros(P, dtype=bool)
    row = 0
    for l in range(shape.L):
        m_l, m_prev = shape.widths[l + 1], shape.widths[l]
        # dW^l_{ij} = d^l_i h^{l-1}_j, raveled row-major over (i, j)
        blk = np.einsum("kti,tj->ijkt", deltas[l], record.post[l])
        B[row:row + m_l * m_prev] = blk.reshape(m_l * m_prev, C * T)
        weight_rows[row:row + m_l * m_prev] = True
        row += m_l * m_prev
        B[row:row + m_l] = deltas[l].transpose(2, 0, 1).reshape(m_l, C * T)
        row += m_l
    return GradientBatch(B=B, P=P, C=C, T=T, weight_rows=weight_rows)


def loss_and_gradient(params: ParameterSet, inputs: np.ndarray,
                      targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared loss E = (1/2T) sum_t ||y(t) - f(t)||^2 and its flat gradient.

    Uses aggregated backprop (one error vector through the chain), so the
    cost matches a single forward/backward pass regardless of C.
    """
    shape = params.shape
    record = forward(params, inputs)
    y = np.atleast_2d(np.asarray(targets, dtype=float))
    f = record.outputs
    if y.shape != f.shape:
        raise ValueError(f"target shape {y.shape} != output shape {f.shape}")
    T = f.shape[0]
    err = f - y
    loss = 0.5 * float(np.sum(err * err)) / T
    if not np.isfinite(loss):
        raise NumericOverflowError("non-finite loss", layer=shape.L)

    grad_w = [None] * shape.L
    grad_b = [None] * shape.L
    d = err / T                                  # (T, C)
    for l in range(shape.L - 1, -1, -1):
        grad_w[l] = d.T @ record.post[l]
        grad_b[l] = d.sum(axis=0)
        if l > 0:
            d = (d @ params.weights[l]) * shape.activations[l - 1].deriv(record.pre[l - 1])
    flat = np.concatenate([np.concatenate([gw.ravel(), gb])
                           for gw, gb in zip(grad_w, grad_b)])
    return loss, flat


# ---------------------------------------------------------------------------
# flat-vector view and serialization


def params_to_vector(params: ParameterSet) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b])
                           for w, b in zip(params.weights, params.biases)])


def vector_to_params(vec: np.ndarray, shape: NetworkShape,
                     seed: int | None = None) -> ParameterSet:
    weights, biases = [], []
    pos = 0
    for l in range(shape.L):
        m_l, m_prev = shape.widths[l + 1], shape.widths[l]
        weights.append(vec[pos:pos + m_l * m_prev].reshape(m_l, m_prev).copy())
        pos += m_l * m_prev
        biases.append(vec[pos:pos + m_l].copy())
        pos += m_l
    if pos != vec.size:
        raise ValueError(f"vector length {vec.size} does not match shape ({pos} needed)")
    return ParameterSet(shape, tuple(weights), tuple(biases), seed)


def weight_row_mask(shape: NetworkShape) -> np.ndarray:
    """Boolean mask over the flat layout selecting weight entries."""
    mask = np.zeros(shape.param_count, dtype=bool)
    pos = 0
    for l in range(shape.L):
        m_l, m_prev = shape.widths[l + 1], shape.widths[l]
        mask[pos:pos + m_l * m_prev] = True
        pos += m_l * m_prev + m_l
    return mask


def save_params(params: ParameterSet, path) -> None:
    """Write a flat binary container (.npz) with a JSON shape header."""
    shape = params.shape
    header = {
        "widths": list(shape.widths),
        "base_width": shape.base_width,
        "sigma_w2": list(shape.sigma_w2),
        "sigma_b2": list(shape.sigma_b2),
        "activations": [a.name for a in shape.activations],
        "seed": params.seed,
    }
    np.savez(path, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             theta=params_to_vector(params))


def load_params(path) -> ParameterSet:
    with np.load(path) as archive:
        header = json.loads(archive["header"].tobytes().decode())
        theta = archive["theta"]
    shape = NetworkShape(
        widths=tuple(header["widths"]),
        base_width=int(header["base_width"]),
        sigma_w2=tuple(header["sigma_w2"]),
        sigma_b2=tuple(header["sigma_b2"]),
        activations=tuple(get_activation(name) for name in header["activations"]),
    )
    return vector_to_params(theta, shape, seed=header.get("seed"))


__all__ = [
    "ParameterSet", "ActivationRecord", "GradientBatch",
    "sample_network", "forward", "output_deltas", "backward",
    "loss_and_gradient", "params_to_vector", "vector_to_params",
    "weight_row_mask", "save_params", "load_params", "make_shape",
]
