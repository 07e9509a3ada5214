"""Macroscopic recurrences and closed-form eigenvalue statistics.

Wide random networks concentrate onto four layer-wise scalar sequences:

    qhat^l    = sum_i h_i^l(t)^2 / M_l          forward second moment
    qhat_st^l = sum_i h_i^l(s) h_i^l(t) / M_l   forward cross-sample overlap
    qtil^l    = sum_i d_i^l(t)^2                backward squared sensitivity
    qtil_st^l = sum_i d_i^l(s) d_i^l(t)         backward overlap

with d_i^l the derivative of the (linear) network output w.r.t. the layer-l
pre-activation. The forward pair evolves through Gaussian integrals of the
activation, the backward pair through integrals of its derivative, and
every Fisher-spectrum statistic this package predicts is a weighted sum of
their products:

    kappa1 = sum_l (alpha_{l-1}/alpha) qtil^l qhat^{l-1}
    kappa2 = sum_l (alpha_{l-1}/alpha) qtil_st^l qhat_st^{l-1}

    mean eigenvalue      C kappa1 / M
    second moment        C alpha ((T-1)/T kappa2^2 + kappa1^2 / T)
    max eigenvalue       alpha ((T-1)/T kappa2 + kappa1 / T) M
    critical step size   2 (1+mu) / max_eigenvalue

where M_l = alpha_l M and alpha = sum_{l=1}^{L-1} alpha_l alpha_{l-1}
(the parameter count is alpha M^2 to leading order).

Index conventions: qhat arrays run over l = 0..L-1 (inputs count as layer
0), q and qtil arrays over l = 1..L stored at offset l-1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .activations import Activation, get_activation
from .errors import CriticalRateUndefinedError, KernelDomainError, NumericOverflowError
from .quadrature import kernel_quad

_DOMAIN_SLACK = 32 * np.finfo(float).eps


# ---------------------------------------------------------------------------
# shapes and state


@dataclass(frozen=True)
class NetworkShape:
    """Architecture plus parameter-distribution hyperparameters.

    widths[0] is the input dimension, widths[-1] the output dimension C;
    hidden widths are widths[1:-1]. base_width is the reference M such
    that alpha_l = widths[l] / M; theory outputs are invariant to the
    choice, it only fixes the (kappa, M) factorization.

    sigma_w2[l] / sigma_b2[l] are the variances for layer l = 1..L
    (weights are N(0, sigma_w2[l]/M_{l-1}), biases N(0, sigma_b2[l])).
    activations[l-1] is the nonlinearity of hidden layer l; the output
    layer is linear.
    """

    widths: tuple[int, ...]
    base_width: int
    sigma_w2: tuple[float, ...]
    sigma_b2: tuple[float, ...]
    activations: tuple[Activation, ...]

    def __post_init__(self):
        L = self.L
        if L < 2:
            raise ValueError("need at least one hidden layer (L >= 2)")
        if any(w < 1 for w in self.widths):
            raise ValueError("all widths must be >= 1")
        if len(self.sigma_w2) != L or len(self.sigma_b2) != L:
            raise ValueError("need one (sigma_w2, sigma_b2) pair per layer")
        if any(s <= 0 for s in self.sigma_w2):
            raise ValueError("sigma_w2 must be > 0 in every layer")
        if any(s < 0 for s in self.sigma_b2):
            raise ValueError("sigma_b2 must be >= 0")
        if len(self.activations) != L - 1:
            raise ValueError("need one activation per hidden layer")
        if self.alpha <= 0:
            raise ValueError("alpha = sum alpha_l alpha_{l-1} must be positive")

    @property
    def L(self) -> int:
        return len(self.widths) - 1

    @property
    def C(self) -> int:
        return self.widths[-1]

    @property
    def alphas(self) -> np.ndarray:
        """alpha_0..alpha_{L-1} (input and hidden width coefficients)."""
        return np.asarray(self.widths[:-1], dtype=float) / self.base_width

    @property
    def alpha(self) -> float:
        al = self.alphas
        return float(np.sum(al[1:] * al[:-1]))

    @property
    def param_count(self) -> int:
        return sum(self.widths[l + 1] * (self.widths[l] + 1) for l in range(self.L))

    @property
    def uniform_sigma_w2(self) -> float:
        if len(set(self.sigma_w2)) != 1:
            raise ValueError("operation requires layer-uniform sigma_w2")
        return self.sigma_w2[0]


def make_shape(
    L: int,
    M: int,
    C: int,
    sigma_w2,
    sigma_b2,
    activation="relu",
    input_width: int | None = None,
    hidden_widths: Sequence[int] | None = None,
) -> NetworkShape:
    """Convenience constructor; uniform hidden widths M unless overridden."""
    hidden = tuple(hidden_widths) if hidden_widths is not None else (M,) * (L - 1)
    if len(hidden) != L - 1:
        raise ValueError(f"expected {L - 1} hidden widths, got {len(hidden)}")
    widths = (input_width if input_width is not None else M, *hidden, C)
    sw = tuple(sigma_w2) if isinstance(sigma_w2, (tuple, list)) else (float(sigma_w2),) * L
    sb = tuple(sigma_b2) if isinstance(sigma_b2, (tuple, list)) else (float(sigma_b2),) * L
    if isinstance(activation, (tuple, list)):
        acts = tuple(get_activation(a) for a in activation)
    else:
        acts = (get_activation(activation),) * (L - 1)
    return NetworkShape(tuple(int(w) for w in widths), int(M), sw, sb, acts)


@dataclass(frozen=True)
class MacroState:
    """The macroscopic sequences; see module docstring for index offsets."""

    qhat: np.ndarray      # l = 0..L-1
    q: np.ndarray         # l = 1..L  (stored at index l-1)
    qhat_st: np.ndarray   # l = 0..L-1
    q_st: np.ndarray      # l = 1..L
    qtil: np.ndarray | None = None      # l = 1..L
    qtil_st: np.ndarray | None = None   # l = 1..L


# ---------------------------------------------------------------------------
# activation kernels (closed form where available, quadrature otherwise)


def _validated(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 0) or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise KernelDomainError("kernel requires finite a >= 0")
    if np.any(np.abs(b) > a * (1.0 + _DOMAIN_SLACK)):
        raise KernelDomainError("kernel requires |b| <= a (correlation in [-1, 1])")
    return a, np.clip(b, -a, a)


def _corr(a, b):
    # |c| = 1 is a regular point of every closed form below (the erf forms
    # are never singular for |b| <= a, and sqrt/arcsin are finite at 1), so
    # clipping to exactly [-1, 1] loses nothing; clipping *inside* the
    # interval would, because d/dc arcsin diverges at the edge.
    return np.clip(np.divide(b, a, out=np.zeros_like(b), where=a > 0), -1.0, 1.0)


def kernel_I_phi(activation, a, b):
    """I_phi[a, b] = E[phi(U) phi(V)], Var U = Var V = a, Cov = b."""
    act = get_activation(activation)
    a, b = _validated(a, b)
    if not act.analytic:
        return kernel_quad(act.fn, a, b, act.critical_points)
    if act.name == "linear":
        out = b + 0.0
    elif act.name == "relu":
        c = _corr(a, b)
        out = a / (2 * np.pi) * (np.sqrt(1 - c * c) + c * (np.pi / 2) + c * np.arcsin(c))
    else:  # erf
        out = (2 / np.pi) * np.arctan(
            np.divide(2 * b, np.sqrt((1 + 2 * a) ** 2 - 4 * b * b)))
    return float(out) if np.ndim(out) == 0 else out


def kernel_I_phi_prime(activation, a, b):
    """I_{phi'}[a, b]: same Gaussian average with phi' in place of phi."""
    act = get_activation(activation)
    a, b = _validated(a, b)
    if not act.analytic:
        return kernel_quad(act.deriv, a, b, act.critical_points)
    if act.name == "linear":
        out = np.ones_like(a)
    elif act.name == "relu":
        c = _corr(a, b)
        out = (np.pi / 2 + np.arcsin(c)) / (2 * np.pi)
        # degenerate a = 0: phi'(0)^2 with the 0-at-0 derivative convention
        out = np.where(a == 0, 0.0, out)
    else:  # erf
        out = 4 / (np.pi * np.sqrt((1 + 2 * a) ** 2 - 4 * b * b))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# recurrences


def forward_recurrence(shape: NetworkShape, qhat0: float = 1.0,
                       qhat_st0: float = 0.0) -> MacroState:
    """Propagate (qhat, q, qhat_st, q_st) from layer 0 to L.

    Defaults correspond to unit-variance uncorrelated inputs; pass the
    empirical input second moment / mean pairwise overlap for other data.
    """
    if not (qhat0 >= abs(qhat_st0) >= 0):
        raise ValueError("need qhat0 >= |qhat_st0| >= 0")
    L = shape.L
    qhat = np.empty(L)
    qhat_st = np.empty(L)
    q = np.empty(L)
    q_st = np.empty(L)
    qhat[0], qhat_st[0] = qhat0, qhat_st0
    for l in range(L):                      # computes layer l+1 quantities
        q[l] = shape.sigma_w2[l] * qhat[l] + shape.sigma_b2[l]
        q_st[l] = shape.sigma_w2[l] * qhat_st[l] + shape.sigma_b2[l]
        if not (np.isfinite(q[l]) and np.isfinite(q_st[l])):
            raise NumericOverflowError(
                f"pre-activation variance overflowed at layer {l + 1}", layer=l + 1)
        if l + 1 < L:
            act = shape.activations[l]
            qhat[l + 1] = kernel_I_phi(act, q[l], q[l])
            qhat_st[l + 1] = kernel_I_phi(act, q[l], q_st[l])
            if not (np.isfinite(qhat[l + 1]) and np.isfinite(qhat_st[l + 1])):
                raise NumericOverflowError(
                    f"activation moment overflowed at layer {l + 1}", layer=l + 1)
    return MacroState(qhat=qhat, q=q, qhat_st=qhat_st, q_st=q_st)


def backward_recurrence(shape: NetworkShape, macro: MacroState) -> MacroState:
    """Fill (qtil, qtil_st) downward from the linear output boundary = 1."""
    L = shape.L
    qtil = np.empty(L)
    qtil_st = np.empty(L)
    qtil[L - 1] = qtil_st[L - 1] = 1.0      # index l-1 = L-1 holds layer L
    for l in range(L - 1, 0, -1):           # computes layer l from l+1
        act = shape.activations[l - 1]
        sw2_next = shape.sigma_w2[l]        # weights W^{l+1} carry sigma_w2[l+1]
        qtil[l - 1] = sw2_next * qtil[l] * kernel_I_phi_prime(act, macro.q[l - 1], macro.q[l - 1])
        qtil_st[l - 1] = sw2_next * qtil_st[l] * kernel_I_phi_prime(
            act, macro.q[l - 1], macro.q_st[l - 1])
        if not (np.isfinite(qtil[l - 1]) and np.isfinite(qtil_st[l - 1])):
            raise NumericOverflowError(
                f"backward moment overflowed at layer {l}", layer=l)
    return replace(macro, qtil=qtil, qtil_st=qtil_st)


def macro_state(shape: NetworkShape, qhat0: float = 1.0, qhat_st0: float = 0.0) -> MacroState:
    """Forward followed by backward recurrence."""
    return backward_recurrence(shape, forward_recurrence(shape, qhat0, qhat_st0))


# ---------------------------------------------------------------------------
# theory statistics


@dataclass(frozen=True)
class TheoryStats:
    """Closed-form predictions for the empirical Fisher spectrum."""

    kappa1: float
    kappa2: float
    mean_eig: float
    second_moment: float
    max_eig: float
    fisher_rao_upper: float
    fisher_rao_uniform: float
    critical_lr: float
    T: int
    mu: float
    # False in the exceptional kappa2 = 0 case (odd activation, no bias),
    # where second_moment / max_eig need subleading terms we do not carry.
    leading_order_reliable: bool = True


def _kappas(shape: NetworkShape, macro: MacroState) -> tuple[float, float]:
    if macro.qtil is None:
        raise ValueError("macro state is missing backward fields; run backward_recurrence")
    al = shape.alphas
    w = al / shape.alpha                      # alpha_{l-1}/alpha for l = 1..L
    kappa1 = float(np.sum(w * macro.qtil * macro.qhat))
    kappa2 = float(np.sum(w * macro.qtil_st * macro.qhat_st))
    return kappa1, kappa2


def theory_stats(shape: NetworkShape, macro: MacroState, T: int, mu: float = 0.0) -> TheoryStats:
    """Assemble all spectral predictions for T samples and momentum mu."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 <= mu < 1:
        raise ValueError("momentum must lie in [0, 1)")
    kappa1, kappa2 = _kappas(shape, macro)
    M, C, alpha = shape.base_width, shape.C, shape.alpha
    mix2 = (T - 1) / T * kappa2**2 + kappa1**2 / T
    mix1 = (T - 1) / T * kappa2 + kappa1 / T
    max_eig = alpha * mix1 * M
    if max_eig == 0.0:
        raise CriticalRateUndefinedError(
            "lambda_max = 0: critical learning rate undefined (degenerate network)")
    try:
        fr = fisher_rao_theory(shape, kappa1)
    except ValueError:  # per-layer sigma_w2: Fisher-Rao closed form unavailable
        fr = {"upper_bound": float("nan"), "uniform_width_value": float("nan")}
    return TheoryStats(
        kappa1=kappa1,
        kappa2=kappa2,
        mean_eig=C * kappa1 / M,
        second_moment=C * alpha * mix2,
        max_eig=max_eig,
        fisher_rao_upper=fr["upper_bound"],
        fisher_rao_uniform=fr["uniform_width_value"],
        critical_lr=2 * (1 + mu) / max_eig,
        T=int(T),
        mu=float(mu),
        leading_order_reliable=abs(kappa2) > 1e-12,
    )


def fisher_rao_theory(shape: NetworkShape, kappa1: float) -> dict:
    """Average Fisher-Rao norm of the weights: upper bound and uniform-width value."""
    sw2 = shape.uniform_sigma_w2
    al = shape.alphas
    upper = sw2 * (shape.alpha / float(al.min())) * shape.C * kappa1
    uniform = sw2 * (shape.L - 1) * shape.C * kappa1
    return {"upper_bound": upper, "uniform_width_value": uniform}


def eigencount_bound(stats: TheoryStats, shape: NetworkShape, k: float, T: int) -> float:
    """Markov bound on the number of eigenvalues >= k."""
    if k <= 0:
        raise ValueError("threshold k must be positive")
    return min(shape.alpha * stats.kappa1 * shape.C * shape.base_width / k,
               float(shape.C * T))


def high_dim_output_bounds(stats: TheoryStats, shape: NetworkShape) -> dict:
    """Interval predictions for output dimension C = O(M).

    The eigenvalue mean keeps its closed form; the second moment and
    maximum are only bracketed.
    """
    C, M, alpha = shape.C, shape.base_width, shape.alpha
    s, lmax = stats.second_moment, stats.max_eig
    return {
        "mean": stats.mean_eig,
        "s_range": (s, C * s),
        "lmax_range": (lmax, float(np.sqrt(alpha * C * s) * M)),
    }
