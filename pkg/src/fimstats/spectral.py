"""Dual-Gram spectra and empirical Fisher statistics.

The empirical Fisher matrix F = B B^T / T is P x P, but its nonzero
spectrum equals that of the much smaller dual Gram F* = B^T B / T
(CT x CT), so every statistic here is computed from F*.

Two builders are provided:

  * build_dual_gram: the literal product from an explicit gradient batch;
    quadratic memory in P, for small/medium nets and oracle checks.
  * dual_gram_fast: never forms B. Writing column (k, t) of B layer-wise
    gives F*[(k,s),(k',t)] = sum_l (d_k^l(s).d_{k'}^l(t)) *
    (1 + h^{l-1}(s).h^{l-1}(t)), i.e. a sum of per-layer sensitivity Grams
    Hadamard-scaled by activation Grams (the +1 is the bias rows). Cost is
    O(L (CT)^2 M) time and O((CT)^2) memory, making 100-seed ensembles at
    M ~ 1000 take seconds.

Normalization: theory divides spectral sums by P = alpha M^2, dropping
O(M) bias and output-layer entries. Statistics are reported under both
the full parameter count (``*_raw``) and the theory normalization; the
difference is a measurable finite-size effect, not noise.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import netsim
from .data import gaussian_batch
from .meanfield import NetworkShape, TheoryStats, eigencount_bound, macro_state, theory_stats
from .netsim import GradientBatch, ParameterSet

# parameter seeds, input seeds and Fisher-Rao contraction seeds come from
# disjoint Philox key ranges
INPUT_SEED_OFFSET = 1 << 40
FR_SEED_OFFSET = 1 << 43


@dataclass(frozen=True)
class DualGram:
    """Symmetric PSD dual matrix (B^T B)/T with its provenance counts."""

    matrix: np.ndarray
    T: int
    C: int
    P: int

    @property
    def size(self) -> int:
        return self.C * self.T


@dataclass(frozen=True)
class EmpiricalStats:
    """Spectral statistics of one dual Gram realization.

    mean/second_moment use the supplied P; negative numerical eigenvalues
    are clamped to zero for max_eig and eigencounts but kept in the sums.
    """

    mean_eig: float
    second_moment: float
    max_eig: float
    eigencounts: dict[float, int]
    fisher_rao: float | None
    eigenvalues: np.ndarray = field(repr=False)


def build_dual_gram(batch: GradientBatch) -> DualGram:
    """Exact dual product from an explicit gradient batch, symmetrized."""
    if not np.all(np.isfinite(batch.B)):
        raise ValueError("gradient batch contains non-finite entries")
    X = batch.B.T @ batch.B / batch.T
    return DualGram(matrix=0.5 * (X + X.T), T=batch.T, C=batch.C, P=batch.P)


def dual_gram_fast(params: ParameterSet, record: netsim.ActivationRecord) -> DualGram:
    """Layer-wise Gram assembly of F*; equals build_dual_gram(backward(...))."""
    shape = params.shape
    C = shape.C
    T = record.outputs.shape[0]
    deltas = netsim.output_deltas(params, record)
    F = np.zeros((C * T, C * T))
    for l in range(shape.L):
        D = deltas[l].reshape(C * T, shape.widths[l + 1])
        H = record.post[l] @ record.post[l].T            # (T, T)
        F += (D @ D.T) * (1.0 + np.tile(H, (C, C)))
    F /= T
    return DualGram(matrix=0.5 * (F + F.T), T=T, C=C, P=shape.param_count)


def empirical_stats(gram: DualGram, P: int | None = None,
                    ks: tuple[float, ...] = (), fisher_rao: float | None = None,
                    ) -> EmpiricalStats:
    """Full symmetric eigendecomposition of F* and the derived statistics."""
    eig = np.linalg.eigvalsh(gram.matrix)
    P = gram.P if P is None else int(P)
    clamped = np.maximum(eig, 0.0)
    return EmpiricalStats(
        mean_eig=float(eig.sum()) / P,
        second_moment=float(np.sum(eig * eig)) / P,
        max_eig=float(clamped[-1]),
        eigencounts={float(k): int(np.count_nonzero(clamped >= k)) for k in ks},
        fisher_rao=fisher_rao,
        eigenvalues=eig,
    )


def fisher_rao_empirical(batch: GradientBatch, params: ParameterSet) -> float:
    """theta^T F theta over weight coordinates only, via ||B_w^T theta_w||^2 / T."""
    theta = netsim.params_to_vector(params)[batch.weight_rows]
    proj = batch.B[batch.weight_rows].T @ theta
    return float(proj @ proj) / batch.T


def fisher_rao_fast(params: ParameterSet, record: netsim.ActivationRecord,
                    contract_weights=None) -> float:
    """Gram-free evaluation of w^T F w over weight coordinates.

    w defaults to the network's own weights (the literal Fisher-Rao norm
    theta^T F theta). The closed-form average of the theory decouples the
    contracting weights from the ones inside F, so ensemble comparisons
    against it pass an independent draw via `contract_weights`; the
    same-theta norm exceeds the decoupled average by cross-layer
    covariance terms of the same order (e.g. exactly +2 sigma_w^4 for a
    one-hidden-layer linear net).
    """
    weights = params.weights if contract_weights is None else contract_weights
    deltas = netsim.output_deltas(params, record)
    C = params.shape.C
    T = record.outputs.shape[0]
    s = np.zeros((C, T))
    for l in range(params.shape.L):
        proj = record.post[l] @ weights[l].T             # (T, M_l)
        s += np.einsum("kti,ti->kt", deltas[l], proj)
    return float(np.sum(s * s)) / T


def brute_force_fim_check(batch: GradientBatch, rel_floor: float = 1e-6) -> dict:
    """Compare the nonzero spectra of F (P x P) and F* (CT x CT) directly.

    Guarded to small nets: refuses P > 256. Eigenvalues above
    rel_floor * lambda_max are treated as nonzero and matched pairwise.
    """
    if batch.P > 256:
        raise ValueError(f"brute-force check limited to P <= 256 (got {batch.P})")
    F = batch.B @ batch.B.T / batch.T
    eig_full = np.linalg.eigvalsh(0.5 * (F + F.T))[::-1]
    eig_dual = np.linalg.eigvalsh(build_dual_gram(batch).matrix)[::-1]
    lmax = max(eig_full[0], eig_dual[0], 0.0)
    rank_bound = min(batch.P, batch.C * batch.T)
    if lmax == 0.0:
        return {"max_rel_dev": 0.0, "n_nonzero": 0, "rank_bound": rank_bound,
                "lambda_max": 0.0}
    n_full = int(np.count_nonzero(eig_full > rel_floor * lmax))
    n_dual = int(np.count_nonzero(eig_dual > rel_floor * lmax))
    n = min(n_full, n_dual, rank_bound)
    rel = np.abs(eig_full[:n] - eig_dual[:n]) / eig_dual[:n]
    return {
        "max_rel_dev": float(rel.max()) if n else 0.0,
        "n_nonzero": n,
        "nonzero_count_mismatch": abs(n_full - n_dual),
        "rank_bound": rank_bound,
        "lambda_max": float(lmax),
    }


# ---------------------------------------------------------------------------
# ensemble protocol


@dataclass(frozen=True)
class SeedResult:
    """Per-seed row of the ensemble CSV."""

    seed: int
    M: int
    T: int
    C: int
    activation: str
    m_lambda: float          # trace / (alpha M^2), the theory normalization
    s_lambda: float
    m_lambda_raw: float      # divided by the full parameter count
    s_lambda_raw: float
    lambda_max: float
    fr_norm: float
    eigencounts: dict[float, int]


@dataclass
class EnsembleResult:
    shape: NetworkShape
    T: int
    theory: TheoryStats
    rows: list[SeedResult]
    ks: tuple[float, ...]

    def stat_matrix(self) -> np.ndarray:
        return np.array([[r.m_lambda, r.s_lambda, r.lambda_max, r.fr_norm]
                         for r in self.rows])

    def summary(self) -> dict:
        """Ensemble mean, sd and standard error against the theory columns."""
        stats = self.stat_matrix()
        mean = stats.mean(axis=0)
        sd = stats.std(axis=0, ddof=1) if len(self.rows) > 1 else np.zeros(4)
        se = sd / np.sqrt(len(self.rows))
        th = [self.theory.mean_eig, self.theory.second_moment,
              self.theory.max_eig, self.theory.fisher_rao_uniform]
        names = ["m_lambda", "s_lambda", "lambda_max", "fr_norm"]
        return {
            name: {"mean": float(mean[i]), "sd": float(sd[i]), "se": float(se[i]),
                   "theory": float(th[i])}
            for i, name in enumerate(names)
        }


def run_seed(shape: NetworkShape, T: int, seed: int,
             ks: tuple[float, ...] = ()) -> SeedResult:
    """One pipeline pass: sample -> forward -> Grams -> spectrum -> stats."""
    params = netsim.sample_network(shape, seed)
    batch = gaussian_batch(T, shape.widths[0], seed + INPUT_SEED_OFFSET)
    record = netsim.forward(params, batch.inputs)
    gram = dual_gram_fast(params, record)
    alpha_p = shape.alpha * shape.base_width**2
    st = empirical_stats(gram, P=int(round(alpha_p)), ks=ks)
    st_raw = (gram.matrix.trace() / shape.param_count,
              float(np.sum(st.eigenvalues**2)) / shape.param_count)
    contract = netsim.sample_network(shape, seed + FR_SEED_OFFSET)
    fr = fisher_rao_fast(params, record, contract_weights=contract.weights)
    return SeedResult(
        seed=seed, M=shape.base_width, T=T, C=shape.C,
        activation=shape.activations[0].name,
        m_lambda=st.mean_eig, s_lambda=st.second_moment,
        m_lambda_raw=float(st_raw[0]), s_lambda_raw=float(st_raw[1]),
        lambda_max=st.max_eig, fr_norm=fr, eigencounts=st.eigencounts,
    )


def run_ensemble(shape: NetworkShape, T: int, seeds, ks: tuple[float, ...] = (),
                 mu: float = 0.0, jobs: int = 1) -> EnsembleResult:
    """Independent per-seed pipelines; `jobs` > 1 fans seeds out to processes."""
    seeds = list(seeds)
    theory = theory_stats(shape, macro_state(shape), T=T, mu=mu)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(run_seed, [shape] * len(seeds), [T] * len(seeds),
                                 seeds, [ks] * len(seeds), chunksize=1))
    else:
        rows = [run_seed(shape, T, s, ks) for s in seeds]
    rows.sort(key=lambda r: r.seed)
    return EnsembleResult(shape=shape, T=T, theory=theory, rows=rows, ks=tuple(ks))


def markov_violations(result: EnsembleResult) -> list[tuple[int, float, int, float]]:
    """Seeds whose eigencounts exceed the Markov/CT bound; empty list = all good."""
    bad = []
    for row in result.rows:
        for k, count in row.eigencounts.items():
            bound = eigencount_bound(result.theory, result.shape, k, result.T)
            if count > bound + 1e-9:
                bad.append((row.seed, k, count, bound))
    return bad


def write_ensemble_csv(results: list[EnsembleResult], path) -> None:
    """One row per (ensemble, seed), with theory columns for side-by-side reads."""
    path = Path(path)
    ks = sorted({k for res in results for k in res.ks})
    fields = (["seed", "M", "T", "C", "activation",
               "m_lambda", "s_lambda", "lambda_max", "fr_norm",
               "m_lambda_raw", "s_lambda_raw"]
              + [f"count_ge_{k:g}" for k in ks]
              + ["theory_m_lambda", "theory_s_lambda", "theory_lambda_max",
                 "theory_fr_norm"] + [f"bound_ge_{k:g}" for k in ks])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for res in results:
            th = res.theory
            for row in res.rows:
                rec = {
                    "seed": row.seed, "M": row.M, "T": row.T, "C": row.C,
                    "activation": row.activation,
                    "m_lambda": row.m_lambda, "s_lambda": row.s_lambda,
                    "lambda_max": row.lambda_max, "fr_norm": row.fr_norm,
                    "m_lambda_raw": row.m_lambda_raw, "s_lambda_raw": row.s_lambda_raw,
                    "theory_m_lambda": th.mean_eig, "theory_s_lambda": th.second_moment,
                    "theory_lambda_max": th.max_eig, "theory_fr_norm": th.fisher_rao_uniform,
                }
                for k in ks:
                    rec[f"count_ge_{k:g}"] = row.eigencounts.get(k, "")
                    rec[f"bound_ge_{k:g}"] = eigencount_bound(th, res.shape, k, res.T)
                writer.writerow(rec)


def write_spectrum_csv(eigenvalues: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "eigenvalue"])
        for i, v in enumerate(np.sort(eigenvalues)[::-1]):
            writer.writerow([i, repr(float(v))])


def high_dim_check(shape: NetworkShape, T: int, seeds, jobs: int = 1) -> dict:
    """Empirical check of the C = O(M) interval predictions.

    Returns the ensemble means with standard errors next to the predicted
    mean and [lower, upper] brackets for the second moment and maximum.
    """
    from .meanfield import high_dim_output_bounds

    res = run_ensemble(shape, T, seeds, jobs=jobs)
    bounds = high_dim_output_bounds(res.theory, shape)
    stats = res.stat_matrix()
    mean = stats.mean(axis=0)
    se = (stats.std(axis=0, ddof=1) / np.sqrt(len(res.rows))
          if len(res.rows) > 1 else np.zeros(4))
    slack = 3 * se
    return {
        "mean_emp": float(mean[0]), "mean_se": float(se[0]), "mean_theory": bounds["mean"],
        "mean_ok": bool(abs(mean[0] - bounds["mean"]) <= max(slack[0], 1e-12)),
        "s_emp": float(mean[1]), "s_se": float(se[1]), "s_range": bounds["s_range"],
        "s_ok": bool(bounds["s_range"][0] - slack[1] <= mean[1]
                     <= bounds["s_range"][1] + slack[1]),
        "lmax_emp": float(mean[2]), "lmax_se": float(se[2]),
        "lmax_range": bounds["lmax_range"],
        "lmax_ok": bool(bounds["lmax_range"][0] - slack[2] <= mean[2]
                        <= bounds["lmax_range"][1] + slack[2]),
        "n_seeds": len(res.rows),
    }
