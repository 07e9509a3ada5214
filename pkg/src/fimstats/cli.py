"""Command-line front end: theory | spectrum | sweep | verify.

Configuration is a flat JSON object per subcommand, schema-checked before
any computation (unknown keys are rejected), with --set KEY=VALUE
overrides. All artifacts are plain CSV/JSON written under --out.

    fimstats theory   --config cfg.json [--set M=2048]
    fimstats spectrum --config cfg.json --out results/ --jobs 4
    fimstats sweep    --config cfg.json --out results/
    fimstats verify                      # built-in oracle suites, exit 0 iff green
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import netsim, spectral, trainer
from .activations import get_activation
from .errors import ConfigError, FimstatsError
from .meanfield import (NetworkShape, eigencount_bound, high_dim_output_bounds,
                        kernel_I_phi, kernel_I_phi_prime, macro_state, make_shape,
                        theory_stats)

# schema: key -> (caster, default); _REQUIRED means the key must be present
_REQUIRED = object()


def _num_list(v):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"expected a list, got {v!r}")
    return [float(x) for x in v]


def _int_list(v):
    if not isinstance(v, (list, tuple)):
        raise ConfigError(f"expected a list, got {v!r}")
    return [int(x) for x in v]


_SHAPE_KEYS = {
    "L": (int, _REQUIRED),
    "C": (int, 1),
    "sigma_w2": (float, _REQUIRED),
    "sigma_b2": (float, _REQUIRED),
    "activation": (str, "relu"),
    "input_width": (lambda v: None if v is None else int(v), None),
}

_SCHEMAS = {
    "theory": {
        **_SHAPE_KEYS,
        "M": (int, _REQUIRED),
        "T": (int, 100),
        "mu": (float, 0.0),
        "qhat0": (float, 1.0),
        "qhat_st0": (float, 0.0),
        "ks": (_num_list, [1.0, 10.0, 100.0]),
    },
    "spectrum": {
        **_SHAPE_KEYS,
        "M_list": (_int_list, _REQUIRED),
        "T": (int, 100),
        "T_list": (lambda v: None if v is None else _int_list(v), None),
        "mu": (float, 0.0),
        "seeds": (int, 100),
        "ks": (_num_list, [1.0, 10.0, 100.0]),
        "dump_spectra": (bool, False),
    },
    "sweep": {
        **_SHAPE_KEYS,
        "M_list": (_int_list, _REQUIRED),
        "T": (int, 100),
        "mu": (float, 0.9),
        "steps": (int, 100),
        "trials": (int, 5),
        "eta_min": (float, 1e-4),
        "eta_max": (float, 10.0),
        "eta_points": (int, 20),
        "divergence_threshold": (float, 1000.0),
        "data": (str, "gaussian"),          # "gaussian" or "idx"
        "idx_images": (lambda v: v, None),
        "idx_labels": (lambda v: v, None),
        "minibatch": (lambda v: None if v is None else int(v), None),
        "epochs": (int, 1),
        "qhat_st0": (float, 0.0),
        "seed0": (int, 0),
    },
    "verify": {},
}


def parse_config(name: str, raw: dict) -> dict:
    schema = _SCHEMAS[name]
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config key(s) for '{name}': {sorted(unknown)}")
    cfg = {}
    for key, (cast, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = cast(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from exc
        elif default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        else:
            cfg[key] = default
    return cfg


def load_config(path: str | None, sets: list[str], name: str) -> dict:
    raw = {}
    if path:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    for item in sets or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            raw[key] = json.loads(value)
        except json.JSONDecodeError:
            raw[key] = value
    return parse_config(name, raw)


def _shape_from_cfg(cfg: dict, M: int) -> NetworkShape:
    return make_shape(L=cfg["L"], M=M, C=cfg["C"], sigma_w2=cfg["sigma_w2"],
                      sigma_b2=cfg["sigma_b2"], activation=cfg["activation"],
                      input_width=cfg["input_width"])


def _outdir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_theory(args) -> int:
    cfg = load_config(args.config, args.set, "theory")
    shape = _shape_from_cfg(cfg, cfg["M"])
    macro = macro_state(shape, qhat0=cfg["qhat0"], qhat_st0=cfg["qhat_st0"])
    stats = theory_stats(shape, macro, T=cfg["T"], mu=cfg["mu"])
    bounds = {f"count_ge_{k:g}": eigencount_bound(stats, shape, k, cfg["T"])
              for k in cfg["ks"]}
    payload = {
        "config": cfg,
        "kappa1": stats.kappa1, "kappa2": stats.kappa2,
        "mean_eig": stats.mean_eig, "second_moment": stats.second_moment,
        "max_eig": stats.max_eig, "critical_lr": stats.critical_lr,
        "fisher_rao_upper": stats.fisher_rao_upper,
        "fisher_rao_uniform": stats.fisher_rao_uniform,
        "leading_order_reliable": stats.leading_order_reliable,
        "eigencount_bounds": bounds,
        "macro": {
            "qhat": macro.qhat.tolist(), "qhat_st": macro.qhat_st.tolist(),
            "q": macro.q.tolist(), "q_st": macro.q_st.tolist(),
            "qtil": macro.qtil.tolist(), "qtil_st": macro.qtil_st.tolist(),
        },
    }
    if cfg["activation"] == "tanh":
        payload["note"] = ("tanh kernels use numerical quadrature; erf is the "
                           "closed-form sigmoid-shaped alternative")
    print(f"{'quantity':<22s} value")
    for key in ("kappa1", "kappa2", "mean_eig", "second_moment", "max_eig",
                "critical_lr", "fisher_rao_upper", "fisher_rao_uniform"):
        print(f"{key:<22s} {payload[key]:.8g}")
    if not stats.leading_order_reliable:
        print("warning: kappa2 ~ 0 (odd activation, no bias); second_moment and "
              "max_eig need subleading terms and are unreliable at leading order")
    out = _outdir(args) / "theory.json"
    out.write_text(json.dumps(payload, indent=2))
    print(f"wrote {out}")
    return 0


def cmd_spectrum(args) -> int:
    cfg = load_config(args.config, args.set, "spectrum")
    out = _outdir(args)
    t_values = cfg["T_list"] or [cfg["T"]]
    ks = tuple(cfg["ks"])
    seed_base = args.seed or 0
    seeds = list(range(seed_base, seed_base + cfg["seeds"]))
    results = []
    summary = {}
    for M in cfg["M_list"]:
        shape = _shape_from_cfg(cfg, M)
        for T in t_values:
            res = spectral.run_ensemble(shape, T, seeds, ks=ks, mu=cfg["mu"],
                                        jobs=args.jobs)
            results.append(res)
            summary[f"M={M},T={T}"] = res.summary()
            bad = spectral.markov_violations(res)
            if bad:
                summary[f"M={M},T={T}"]["markov_violations"] = bad
    csv_path = out / "ensemble.csv"
    spectral.write_ensemble_csv(results, csv_path)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    if cfg["dump_spectra"]:
        for res in results:
            for seed in [r.seed for r in res.rows]:
                params = netsim.sample_network(res.shape, seed)
                batch = data_mod.gaussian_batch(res.T, res.shape.widths[0],
                                                seed + spectral.INPUT_SEED_OFFSET)
                record = netsim.forward(params, batch.inputs)
                gram = spectral.dual_gram_fast(params, record)
                eig = np.linalg.eigvalsh(gram.matrix)
                spectral.write_spectrum_csv(
                    eig, out / f"spectrum_M{res.shape.base_width}_T{res.T}_seed{seed}.csv")
    for key, stats in summary.items():
        if "markov_violations" in stats:
            print(f"{key}: MARKOV BOUND VIOLATED")
        line = ", ".join(f"{name}: {v['mean']:.4g} (theory {v['theory']:.4g})"
                         for name, v in stats.items() if isinstance(v, dict))
        print(f"{key}: {line}")
    print(f"wrote {csv_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.set, "sweep")
    out = _outdir(args)
    etas = np.geomspace(cfg["eta_min"], cfg["eta_max"], cfg["eta_points"]).tolist()
    shapes = {M: _shape_from_cfg(cfg, M) for M in cfg["M_list"]}
    if args.dry_run:
        print(json.dumps({"M": cfg["M_list"], "eta": etas,
                          "trials": cfg["trials"], "data": cfg["data"]}, indent=2))
        return 0
    if cfg["data"] == "gaussian":
        result = trainer.sweep(shapes, etas, T=cfg["T"], mu=cfg["mu"],
                               steps=cfg["steps"], trials=cfg["trials"],
                               threshold=cfg["divergence_threshold"],
                               seed0=cfg["seed0"], jobs=args.jobs,
                               qhat_st0=cfg["qhat_st0"])
    elif cfg["data"] == "idx":
        if not (cfg["idx_images"] and cfg["idx_labels"]):
            raise ConfigError("data='idx' requires idx_images and idx_labels paths")
        dataset = data_mod.load_idx(cfg["idx_images"], cfg["idx_labels"],
                                    num_classes=cfg["C"])
        result = _dataset_sweep(shapes, etas, dataset, cfg)
    else:
        raise ConfigError(f"unknown data source {cfg['data']!r}")
    result.to_csv(out / "sweep.csv")
    result.plot_data(out / "plot_data.json")
    boundary = {str(M): {"eta_c_theory": result.eta_c[M],
                         "eta_boundary": (result.boundary(M)
                                          if np.isfinite(result.boundary(M)) else None)}
                for M in result.Ms}
    (out / "boundary.json").write_text(json.dumps(boundary, indent=2))
    for M in result.Ms:
        print(f"M={M}: eta_c={result.eta_c[M]:.4e} boundary={result.boundary(M):.4e}")
    print(f"wrote {out / 'sweep.csv'}")
    return 0


def _dataset_sweep(shapes, etas, dataset, cfg) -> trainer.SweepResult:
    """Minibatch-SGD grid over a fixed dataset (one run per cell per trial)."""
    Ms = sorted(shapes)
    corr = _mean_pairwise_correlation(dataset.inputs) if cfg["qhat_st0"] == 0.0 else cfg["qhat_st0"]
    eta_c = {}
    for M in Ms:
        st = theory_stats(shapes[M], macro_state(shapes[M], qhat_st0=corr),
                          T=dataset.T, mu=cfg["mu"])
        eta_c[M] = st.critical_lr
    cells = []
    for M in Ms:
        for eta in etas:
            for trial in range(cfg["trials"]):
                config = trainer.TrainConfig(
                    eta=float(eta), mu=cfg["mu"], steps=cfg["steps"],
                    batch=cfg["minibatch"], divergence_threshold=cfg["divergence_threshold"])
                traj = trainer.sgd_dataset_run(shapes[M], dataset, config,
                                               epochs=cfg["epochs"],
                                               shuffle_seed=cfg["seed0"] + trial)
                final = traj.final_loss if np.isfinite(traj.final_loss) else float("inf")
                cells.append(trainer.SweepCell(
                    M=M, eta=float(eta), trial=trial, final_loss=final,
                    diverged=traj.diverged, steps_run=traj.steps_run,
                    eta_c_theory=eta_c[M]))
    return trainer.SweepResult(Ms=Ms, etas=[float(e) for e in etas],
                               trials=cfg["trials"], eta_c=eta_c, cells=cells,
                               divergence_threshold=cfg["divergence_threshold"])


def _mean_pairwise_correlation(x: np.ndarray, max_samples: int = 512) -> float:
    """Mean off-diagonal overlap <x(s), x(t)>/M0 over a subsample."""
    sub = x[:max_samples]
    g = sub @ sub.T / x.shape[1]
    n = g.shape[0]
    return float((g.sum() - np.trace(g)) / (n * (n - 1)))


def cmd_verify(args) -> int:
    """Self-contained oracle suites; prints one PASS/FAIL line per suite."""
    from scipy.special import erf as _erf

    rng = np.random.default_rng(args.seed or 0)
    ok = True

    def report(name, good, detail=""):
        nonlocal ok
        ok &= bool(good)
        print(f"[{'PASS' if good else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))

    # kernel closed forms vs quadrature
    a = rng.uniform(1e-3, 10.0, 100)
    b = rng.uniform(-1.0, 1.0, 100) * a
    from .quadrature import kernel_quad
    worst = 0.0
    for act in ("erf", "relu", "linear"):
        phi = get_activation(act)
        worst = max(worst,
                    np.abs(kernel_I_phi(act, a, b)
                           - kernel_quad(phi.fn, a, b, phi.critical_points)).max(),
                    np.abs(kernel_I_phi_prime(act, a, b)
                           - kernel_quad(phi.deriv, a, b, phi.critical_points)).max())
    report("kernel analytic vs quadrature < 1e-8", worst < 1e-8, f"max dev {worst:.2e}")

    # gradient batches vs central finite differences
    worst = 0.0
    for act in ("erf", "relu", "linear", "tanh", "leaky-relu:0.2"):
        shape = make_shape(L=3, M=8, C=2, sigma_w2=1.5, sigma_b2=0.2, activation=act)
        params = netsim.sample_network(shape, 7)
        x = rng.standard_normal((3, 8))
        batch = netsim.backward(params, netsim.forward(params, x))
        worst = max(worst, _fd_worst(shape, params, x, batch))
    report("backprop vs finite differences < 1e-5", worst < 1e-5, f"max rel {worst:.2e}")

    # F vs F* nonzero spectra
    shape = make_shape(L=3, M=6, C=2, sigma_w2=1.2, sigma_b2=0.3, activation="erf")
    params = netsim.sample_network(shape, 3)
    x = rng.standard_normal((12, 6))
    rep = spectral.brute_force_fim_check(netsim.backward(params, netsim.forward(params, x)))
    report("F vs F* spectra agree < 1e-9", rep["max_rel_dev"] < 1e-9,
           f"max rel {rep['max_rel_dev']:.2e}")

    # momentum stability boundary on the quadratic model
    good = True
    for lam in (0.5, 2.0, 10.0):
        for mu in (0.0, 0.5, 0.9):
            for frac in (0.8, 1.2):
                eta = frac * 2 * (1 + mu) / lam
                traj = trainer.quadratic_gd([lam], eta, mu, steps=4000)
                conv = abs(traj.losses[-1]) < 1e-6
                good &= conv == (frac < 1.0)
    report("momentum stability boundary eta*lam < 2(1+mu)", good)

    print("verify:", "ALL PASS" if ok else "FAILURES")
    return 0 if ok else 1


def _fd_worst(shape, params, x, batch, step: float = 1e-5) -> float:
    theta0 = netsim.params_to_vector(params)
    C, T = batch.C, x.shape[0]
    scale = np.abs(batch.B).max()
    worst = 0.0
    for row in range(theta0.size):
        tp = theta0.copy(); tp[row] += step
        tm = theta0.copy(); tm[row] -= step
        fp = netsim.forward(netsim.vector_to_params(tp, shape), x).outputs
        fm = netsim.forward(netsim.vector_to_params(tm, shape), x).outputs
        fd = (fp - fm).T.reshape(C * T) / (2 * step)
        worst = max(worst, np.abs(fd - batch.B[row]).max() / scale)
    return worst


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fimstats", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("theory", cmd_theory), ("spectrum", cmd_spectrum),
                     ("sweep", cmd_sweep), ("verify", cmd_verify)):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[], metavar="K=V",
                       help="override a config key (JSON-parsed value)")
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        if name == "sweep":
            p.add_argument("--dry-run", action="store_true",
                           help="print the grid without executing")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (FimstatsError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
