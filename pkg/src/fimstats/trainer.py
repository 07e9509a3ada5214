"""Momentum gradient descent, teacher-student runs, and (M, eta) sweeps.

The update rule is the classic heavy-ball step

    theta_{t+1} = theta_t - eta * dE/dtheta(theta_t) + mu (theta_t - theta_{t-1})

applied to the flat parameter vector, with theta_{-1} = theta_0. Around a
zero-loss minimum the iteration is stable only while eta * lambda <
2 (1 + mu) for every Fisher eigenvalue lambda, which is what ties these
experiments to the spectral predictions: the theoretical critical rate is
eta_c = 2 (1 + mu) / lambda_max with lambda_max from the mean-field
formulas evaluated at the initialization variances.

A run is flagged diverged as soon as its loss exceeds the configured
threshold (default 1000) or goes non-finite.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import netsim
from .data import SampleBatch, gaussian_batch
from .errors import NumericOverflowError
from .meanfield import NetworkShape, macro_state, theory_stats

_DATA_SEED_OFFSET = 1 << 41
_STUDENT_SEED_OFFSET = 1 << 42


@dataclass(frozen=True)
class TrainConfig:
    eta: float
    mu: float = 0.0
    steps: int = 100
    batch: int | None = None            # None = full batch
    divergence_threshold: float = 1000.0

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("learning rate must be nonnegative")
        if not 0 <= self.mu < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.steps < 1:
            raise ValueError("need at least one step")


@dataclass(frozen=True)
class TrainState:
    theta: np.ndarray
    theta_prev: np.ndarray
    step: int = 0


@dataclass(frozen=True)
class Trajectory:
    losses: np.ndarray        # loss before each step, plus the final point
    diverged: bool
    steps_run: int

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def gd_step(state: TrainState, config: TrainConfig, grad: np.ndarray) -> TrainState:
    """One exact heavy-ball update."""
    theta_next = state.theta - config.eta * grad + config.mu * (state.theta - state.theta_prev)
    return TrainState(theta=theta_next, theta_prev=state.theta, step=state.step + 1)


def _descend(theta0: np.ndarray, config: TrainConfig, loss_grad) -> Trajectory:
    """Run momentum GD from theta0; loss_grad(theta) -> (loss, grad)."""
    state = TrainState(theta=np.asarray(theta0, dtype=float).copy(),
                       theta_prev=np.asarray(theta0, dtype=float).copy())
    losses = []
    for step in range(config.steps):
        try:
            loss, grad = loss_grad(state.theta)
        except NumericOverflowError:
            losses.append(np.inf)
            return Trajectory(np.asarray(losses), True, step)
        losses.append(loss)
        if not np.isfinite(loss) or loss > config.divergence_threshold:
            return Trajectory(np.asarray(losses), True, step)
        state = gd_step(state, config, grad)
        if not np.all(np.isfinite(state.theta)):
            losses.append(np.inf)
            return Trajectory(np.asarray(losses), True, step + 1)
    try:
        final, _ = loss_grad(state.theta)
    except NumericOverflowError:
        final = np.inf
    losses.append(final)
    diverged = not np.isfinite(final) or final > config.divergence_threshold
    return Trajectory(np.asarray(losses), diverged, config.steps)


def quadratic_gd(lams, eta: float, mu: float, steps: int = 400,
                 delta0: float = 1.0) -> Trajectory:
    """Momentum GD on the diagonal quadratic E = sum_i lam_i theta_i^2 / 2.

    The reference model for the stability boundary: converges iff
    eta * max(lams) < 2 (1 + mu).
    """
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    config = TrainConfig(eta=eta, mu=mu, steps=steps, divergence_threshold=1e12)

    def loss_grad(theta):
        return 0.5 * float(lams @ (theta * theta)), lams * theta

    return _descend(np.full(lams.shape, delta0), config, loss_grad)


def teacher_student_run(shape: NetworkShape, seed_teacher: int, seed_student: int,
                        config: TrainConfig, T: int,
                        data_seed: int | None = None) -> Trajectory:
    """Full-batch training toward a random teacher's outputs.

    The teacher is a frozen draw from the same parameter distribution, so
    a zero-loss global minimum exists by construction and the student
    starts from an independent draw with the same variances.
    """
    teacher = netsim.sample_network(shape, seed_teacher)
    student = netsim.sample_network(shape, seed_student)
    batch = gaussian_batch(T, shape.widths[0],
                           data_seed if data_seed is not None else
                           seed_teacher + _DATA_SEED_OFFSET)
    targets = netsim.forward(teacher, batch.inputs).outputs

    def loss_grad(theta):
        params = netsim.vector_to_params(theta, shape)
        return netsim.loss_and_gradient(params, batch.inputs, targets)

    return _descend(netsim.params_to_vector(student), config, loss_grad)


def sgd_dataset_run(shape: NetworkShape, dataset: SampleBatch, config: TrainConfig,
                    epochs: int = 1, shuffle_seed: int = 0) -> Trajectory:
    """Minibatch SGD with momentum over a fixed dataset.

    config.batch sets the minibatch size (full batch when None); steps run
    for `epochs` passes with per-epoch deterministic shuffling, ignoring
    config.steps. Loss bookkeeping matches the batch runs (minibatch loss
    per step, full threshold checks).
    """
    if dataset.targets is None:
        raise ValueError("dataset batch has no targets")
    T = dataset.T
    bsize = config.batch or T
    rng = np.random.Generator(np.random.Philox(key=int(shuffle_seed)))
    student = netsim.sample_network(shape, shuffle_seed + _STUDENT_SEED_OFFSET)
    theta0 = netsim.params_to_vector(student)
    state = TrainState(theta=theta0.copy(), theta_prev=theta0.copy())
    losses = []
    steps_run = 0
    for _ in range(epochs):
        order = rng.permutation(T)
        for start in range(0, T - bsize + 1, bsize):
            idx = order[start:start + bsize]
            params = netsim.vector_to_params(state.theta, shape)
            try:
                loss, grad = netsim.loss_and_gradient(
                    params, dataset.inputs[idx], dataset.targets[idx])
            except NumericOverflowError:
                losses.append(np.inf)
                return Trajectory(np.asarray(losses), True, steps_run)
            losses.append(loss)
            if not np.isfinite(loss) or loss > config.divergence_threshold:
                return Trajectory(np.asarray(losses), True, steps_run)
            state = gd_step(state, config, grad)
            steps_run += 1
            if not np.all(np.isfinite(state.theta)):
                losses.append(np.inf)
                return Trajectory(np.asarray(losses), True, steps_run)
    return Trajectory(np.asarray(losses), False, steps_run)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepCell:
    M: int
    eta: float
    trial: int
    final_loss: float
    diverged: bool
    steps_run: int
    eta_c_theory: float


@dataclass
class SweepResult:
    Ms: list[int]
    etas: list[float]
    trials: int
    eta_c: dict[int, float]
    cells: list[SweepCell] = field(default_factory=list)
    divergence_threshold: float = 1000.0

    def cell_trials(self, M: int, eta: float) -> list[SweepCell]:
        return [c for c in self.cells if c.M == M and c.eta == eta]

    def mean_loss(self, M: int, eta: float) -> float:
        """Trial-averaged final loss; non-finite trials push the mean to inf."""
        vals = [c.final_loss for c in self.cell_trials(M, eta)]
        return float(np.mean(vals)) if vals else float("nan")

    def cell_diverged(self, M: int, eta: float) -> bool:
        return self.mean_loss(M, eta) > self.divergence_threshold

    def boundary(self, M: int) -> float:
        """Empirical divergence boundary: geometric midpoint between the
        largest non-diverged eta and the first diverged eta above it."""
        flags = [(eta, self.cell_diverged(M, eta)) for eta in sorted(self.etas)]
        last_ok = None
        for eta, bad in flags:
            if bad and last_ok is not None:
                return float(np.sqrt(last_ok * eta))
            if not bad:
                last_ok = eta
        if last_ok is None:
            return float(sorted(self.etas)[0])
        return float("inf")  # nothing diverged

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["M", "eta", "trial", "final_loss", "diverged",
                             "steps_run", "eta_c_theory"])
            for c in self.cells:
                writer.writerow([c.M, repr(c.eta), c.trial, repr(c.final_loss),
                                 int(c.diverged), c.steps_run, repr(c.eta_c_theory)])

    def plot_data(self, path) -> None:
        """Loss matrix (eta x M, trial means) plus the eta_c curve, as JSON."""
        etas = sorted(self.etas)
        grid = [[self.mean_loss(M, eta) for M in self.Ms] for eta in etas]
        payload = {
            "M": list(self.Ms),
            "eta": etas,
            "mean_final_loss": [[v if np.isfinite(v) else None for v in row]
                                for row in grid],
            "eta_c": [self.eta_c[M] for M in self.Ms],
            "boundary": [self.boundary(M) if np.isfinite(self.boundary(M)) else None
                         for M in self.Ms],
            "divergence_threshold": self.divergence_threshold,
        }
        Path(path).write_text(json.dumps(payload, indent=2))


def _sweep_cell(shape: NetworkShape, eta: float, mu: float, steps: int,
                threshold: float, T: int, seed0: int, trial: int) -> SweepCell:
    config = TrainConfig(eta=eta, mu=mu, steps=steps, divergence_threshold=threshold)
    base = seed0 + 100003 * shape.base_width + 101 * trial
    traj = teacher_student_run(shape, base, base + _STUDENT_SEED_OFFSET, config, T)
    final = traj.final_loss if np.isfinite(traj.final_loss) else float("inf")
    return SweepCell(M=shape.base_width, eta=eta, trial=trial, final_loss=final,
                     diverged=traj.diverged, steps_run=traj.steps_run, eta_c_theory=np.nan)


def sweep(shapes: dict[int, NetworkShape], etas, T: int, mu: float = 0.9,
          steps: int = 100, trials: int = 5, threshold: float = 1000.0,
          seed0: int = 0, jobs: int = 1, qhat_st0: float = 0.0) -> SweepResult:
    """Grid of teacher-student runs over widths and learning rates.

    Teacher/student/data seeds are fixed per (M, trial), shared across the
    eta axis so rate comparisons see identical problems. eta_c_theory is
    evaluated at the initialization variances for each M.
    """
    etas = [float(e) for e in etas]
    Ms = sorted(shapes)
    eta_c = {}
    for M in Ms:
        st = theory_stats(shapes[M], macro_state(shapes[M], qhat_st0=qhat_st0), T=T, mu=mu)
        eta_c[M] = st.critical_lr
    tasks = [(shapes[M], eta, trial) for M in Ms for eta in etas for trial in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(
                _sweep_cell,
                [t[0] for t in tasks], [t[1] for t in tasks],
                [mu] * len(tasks), [steps] * len(tasks), [threshold] * len(tasks),
                [T] * len(tasks), [seed0] * len(tasks), [t[2] for t in tasks],
                chunksize=1))
    else:
        cells = [_sweep_cell(sh, eta, mu, steps, threshold, T, seed0, trial)
                 for sh, eta, trial in tasks]
    cells = [replace(c, eta_c_theory=eta_c[c.M]) for c in cells]
    return SweepResult(Ms=Ms, etas=etas, trials=trials, eta_c=eta_c, cells=cells,
                       divergence_threshold=threshold)
