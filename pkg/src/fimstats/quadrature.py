"""Gaussian-measure quadrature for activation kernels.

Everything here computes expectations of the form

    E[f(u)]                u ~ N(0,1)                       (gauss_expect)
    I_phi[a,b] = E[phi(U) phi(V)],  (U,V) ~ N(0, [[a,b],[b,a]])   (kernel_quad)

The two-dimensional kernel is reduced to nested one-dimensional integrals
through the smoothing identity

    I_phi[a,b] = Int Dy  g(y) g(sign(b) y),
    g(y)       = Int Dx  phi( sqrt(a-|b|) x + sqrt(|b|) y ),

which holds because (sqrt(a-|b|)x + sqrt(|b|)y, sqrt(a-|b|)x' +- sqrt(|b|)y)
reproduces the required covariance. g is the Gaussian smoothing of phi, so
the outer integrand is smooth even when phi itself is kinked.

The quadrature rule is composite Gauss-Legendre on panels graded
geometrically toward the integrand's features: panels split *exactly* at
kinks and shrink toward sharp-but-smooth transition centers. Geometric
grading is scale-free, so one fixed panel template resolves features of
any width; this is what plain Gauss-Hermite cannot do (64-node GH leaves
~1e-2 errors on the ReLU kernels and ~4e-4 on erf at a ~ 10, versus
~1e-10 here).

The inner integral uses a translated template centered on the (single)
feature image, which makes the whole kernel evaluation batch over arrays
of (a, b) pairs with pure numpy broadcasting. Activations with two or
more critical points take a slower per-pair segmented path.
"""

from __future__ import annotations

import numpy as np

from .errors import KernelDomainError

SPAN = 8.5  # integration half-width in sds; N(0,1) tail mass ~ 1e-17
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# fraction of machine epsilon slack tolerated on the |b| <= a precondition
_DOMAIN_SLACK = 32 * np.finfo(float).eps


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilists' Gauss-Hermite rule: sum w_i f(x_i) ~ E[f(Z)], Z~N(0,1)."""
    x, w = np.polynomial.hermite.hermgauss(n)
    return x * np.sqrt(2.0), w / np.sqrt(np.pi)


def _one_sided_edges(h0: float, grow: float, hmax: float, span: float) -> np.ndarray:
    """Panel edges [0, ...] marching away from a feature with geometric growth."""
    edges = [0.0]
    w = h0
    while edges[-1] < span:
        edges.append(min(edges[-1] + w, span))
        w = min(w * grow, hmax)
    return np.asarray(edges)


def _graded_mesh(h0, grow, hmax, span, gl_n):
    """Symmetric composite GL mesh graded toward 0.

    Node/weight arrays satisfy nodes[::-1] == -nodes and weights[::-1] ==
    weights, which the kernel code exploits to evaluate g(-y) by reversal.
    """
    gx, gw = np.polynomial.legendre.leggauss(gl_n)
    e = _one_sided_edges(h0, grow, hmax, span)
    edges = np.concatenate([-e[::-1], e[1:]])
    lo, hi = edges[:-1], edges[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    nodes = (mid[:, None] + half[:, None] * gx).ravel()
    weights = (half[:, None] * gw).ravel()
    return nodes, weights


def _segmented_mesh(breaks, lo, hi, h0=1e-7, grow=2.0, hmax=1.5, gl_n=8):
    """Composite GL mesh on [lo, hi], split at `breaks`, graded toward each break."""
    gx, gw = np.polynomial.legendre.leggauss(gl_n)
    pts = sorted({lo, hi, *(float(b) for b in breaks if lo < b < hi)})
    all_edges = []
    for seg_lo, seg_hi in zip(pts[:-1], pts[1:]):
        length = seg_hi - seg_lo
        fwd = seg_lo + _one_sided_edges(h0, grow, hmax, length / 2.0)
        bwd = seg_hi - _one_sided_edges(h0, grow, hmax, length / 2.0)[::-1]
        all_edges.append(np.concatenate([fwd, bwd[1:]]))
    edges = np.concatenate(all_edges)
    lo_e, hi_e = edges[:-1], edges[1:]
    keep = hi_e > lo_e
    lo_e, hi_e = lo_e[keep], hi_e[keep]
    mid, half = 0.5 * (lo_e + hi_e), 0.5 * (hi_e - lo_e)
    return (mid[:, None] + half[:, None] * gx).ravel(), (half[:, None] * gw).ravel()


# outer y-mesh for well-separated correlations (1-|c| >= 1e-3)
_OUT_N, _OUT_W = _graded_mesh(5e-3, 2.0, 2.0, SPAN, 7)
# outer y-mesh for |c| -> 1; resolves feature scales down to sqrt(2*eps) ~ 2e-8
_DEEP_N, _DEEP_W = _graded_mesh(1e-9, 2.0, 2.0, SPAN, 8)
# inner x-mesh in the kink frame: node offsets relative to the feature image;
# must cover the N(0,1) support for feature positions clipped to |t| <= SPAN+1
_IN_N, _IN_W = _graded_mesh(2e-2, 2.0, 2.0, 2.0 * SPAN + 1.5, 7)
_OUT_GW = np.exp(-0.5 * _OUT_N**2) * _INV_SQRT_2PI * _OUT_W
_DEEP_GW = np.exp(-0.5 * _DEEP_N**2) * _INV_SQRT_2PI * _DEEP_W


def gauss_expect(f, breaks=(0.0,)) -> float:
    """E[f(u)] for u ~ N(0,1); `breaks` lists feature locations of f in u units."""
    nodes, weights = _segmented_mesh(breaks, -SPAN, SPAN)
    gw = np.exp(-0.5 * nodes**2) * _INV_SQRT_2PI * weights
    return float(np.dot(np.asarray(f(nodes), dtype=float), gw))


def _smoothed_mean(phi, sigma, mu, crit):
    """E_x[phi(sigma*x + mu)] batched over an array mu, single critical point.

    Integrates in the frame of the feature image t = (crit - mu)/sigma, so the
    node template splits exactly at the kink whatever mu is. Clipping t is
    safe: a feature more than SPAN+1 sds away lies outside the Gaussian
    support, and the clipped mesh still covers [-SPAN, SPAN].
    """
    sigma = np.asarray(sigma, dtype=float)
    t = np.clip((crit - mu) / sigma, -(SPAN + 1.0), SPAN + 1.0)
    x = t[..., None] + _IN_N
    gw = np.exp(-0.5 * x * x) * (_INV_SQRT_2PI * _IN_W)
    return np.sum(np.asarray(phi(sigma[..., None] * x + mu[..., None]), dtype=float) * gw,
                  axis=-1)


def _boundary_1d(phi, a, sign, crits):
    """I_phi[a, +-a] = E[phi(sqrt(a) u) phi(+-sqrt(a) u)] as a 1D integral."""
    ra = np.sqrt(a)
    breaks = {c / ra for c in crits} | {sign * c / ra for c in crits}
    nodes, weights = _segmented_mesh(breaks, -SPAN, SPAN)
    gw = np.exp(-0.5 * nodes**2) * _INV_SQRT_2PI * weights
    u = ra * nodes
    return float(np.dot(phi(u) * phi(sign * u), gw))


def _kernel_single_multi(phi, a, b, crits):
    """Segmented per-pair path for activations with several critical points."""
    sb = np.sqrt(abs(b))
    sigma = np.sqrt(a - abs(b))
    sign = 1.0 if b >= 0 else -1.0
    # outer features: smoothed images of every critical point, both factors
    centers = {c / sb for c in crits} | {sign * c / sb for c in crits} if sb > 0 else set()
    y, wy = _segmented_mesh(centers, -SPAN, SPAN)
    gy = np.exp(-0.5 * y * y) * _INV_SQRT_2PI * wy

    def g(mu_vec):
        out = np.empty_like(mu_vec)
        for i, m in enumerate(mu_vec):
            xs, wx = _segmented_mesh({(c - m) / sigma for c in crits}, -SPAN, SPAN)
            gw = np.exp(-0.5 * xs * xs) * _INV_SQRT_2PI * wx
            out[i] = np.dot(np.asarray(phi(sigma * xs + m), dtype=float), gw)
        return out

    g1 = g(sb * y)
    g2 = g1 if sign > 0 else g(-sb * y)
    return float(np.dot(g1 * g2, gy))


def kernel_quad(phi, a, b, critical_points=(0.0,)):
    """I_phi[a, b] by quadrature; a, b may be scalars or broadcastable arrays.

    Correctness relies only on phi being piecewise smooth with features at
    (or near) `critical_points` and square-integrable under the Gaussian.
    """
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shp = a_arr.shape
    a_arr = a_arr.reshape(-1).copy()
    b_arr = b_arr.reshape(-1).copy()
    if np.any(a_arr < 0) or not (np.all(np.isfinite(a_arr)) and np.all(np.isfinite(b_arr))):
        raise KernelDomainError("kernel requires finite inputs with a >= 0")
    over = np.abs(b_arr) > a_arr
    if np.any(over):
        if np.any(np.abs(b_arr[over]) > a_arr[over] * (1.0 + _DOMAIN_SLACK)):
            raise KernelDomainError(
                f"|b| <= a required (correlation out of [-1,1]); got a={a_arr[over][0]!r}, "
                f"b={b_arr[over][0]!r}")
        b_arr[over] = np.sign(b_arr[over]) * a_arr[over]  # rounding-level excess

    crits = tuple(critical_points)
    out = np.empty_like(a_arr)

    zero = a_arr == 0.0
    if zero.any():
        out[zero] = float(np.asarray(phi(np.zeros(1)), dtype=float)[0]) ** 2

    bound = (np.abs(b_arr) == a_arr) & ~zero
    for i in np.nonzero(bound)[0]:
        out[i] = _boundary_1d(phi, a_arr[i], 1.0 if b_arr[i] > 0 else -1.0, crits)

    live = ~zero & ~bound
    if live.any() and len(crits) > 1:
        for i in np.nonzero(live)[0]:
            out[i] = _kernel_single_multi(phi, a_arr[i], b_arr[i], crits)
        return float(out[0]) if shp == () else out.reshape(shp)

    c = np.zeros_like(a_arr)
    c[live] = b_arr[live] / a_arr[live]
    crit = crits[0] if crits else 0.0

    easy = live & (1.0 - np.abs(c) >= 1e-3)
    if easy.any():
        ae, be = a_arr[easy], b_arr[easy]
        sigma = np.sqrt(ae - np.abs(be))[:, None]
        mu = np.sqrt(np.abs(be))[:, None] * _OUT_N[None, :]
        g1 = _smoothed_mean(phi, sigma, mu, crit)
        # mesh symmetry: reversing nodes negates them, so g(-y) = reverse(g(y))
        g2 = np.where((be >= 0)[:, None], g1, g1[:, ::-1])
        out[easy] = np.sum(g1 * g2 * _OUT_GW[None, :], axis=-1)

    deep = live & ~easy
    for i in np.nonzero(deep)[0]:
        sigma = np.sqrt(a_arr[i] - abs(b_arr[i]))
        mu = np.sqrt(abs(b_arr[i])) * _DEEP_N
        g1 = _smoothed_mean(phi, np.full_like(mu, sigma), mu, crit)
        g2 = g1 if b_arr[i] >= 0 else g1[::-1]
        out[i] = np.dot(g1 * g2, _DEEP_GW)

    return float(out[0]) if shp == () else out.reshape(shp)


def kernel_gh(phi, a, b, n: int = 64) -> float:
    """Reference tensor-product Gauss-Hermite evaluation of I_phi[a, b].

    Kept for comparison: adequate for polynomial-like phi, but converges
    slowly on kinked or saturating activations (see module docstring).
    """
    a = float(a)
    b = float(b)
    if a == 0.0:
        return float(np.asarray(phi(np.zeros(1)), dtype=float)[0]) ** 2
    c = np.clip(b / a, -1.0, 1.0)
    z, w = gauss_hermite(n)
    u = np.sqrt(a) * z[:, None]
    v = np.sqrt(a) * (c * z[:, None] + np.sqrt(max(1.0 - c * c, 0.0)) * z[None, :])
    return float(np.einsum("i,j,ij->", w, w, np.asarray(phi(u) * phi(v), dtype=float)))
