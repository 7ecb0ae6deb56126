"""Command-line entry point: experiments, training, attacks and evaluation.

Every command reads its parameters from (highest precedence first) command
line flags, an optional ``--config`` file (JSON object or ``key=value``
lines) and built-in defaults.  Outputs are CSV files; ``--plot`` adds an SVG
line plot next to them when matplotlib is installed.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence, 4 I/O or
parse error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import trapezoid

from .attacks import AttackConfig, AttackKind, evaluate, perturb
from .core import AbramConfig, chaos_experiment, constant_family, longtime_experiment, run_abram
from .errors import ConfigError, DivergenceError, InvalidInputError, ParseError, PreconditionError
from .geometry import Ball
from .models import (Dataset, ModelParams, load_checkpoint, load_csv, load_mnist_subset, make_blobs,
                     make_prototypes, mlp, save_checkpoint, save_csv)
from .oracle import AdversarialDensity
from .potentials import coupled_quadratic_1d, shifted_quadratic_1d, zero_potential
from .sampler import effective_gamma
from .stats import fit_loglog  # noqa: F401  re-exported for rate fitting from the CLI module
from .training import TrainConfig, train

log = logging.getLogger("abram")


# config parsing -------------------------------------------------------------

def _floats(v):
    if isinstance(v, (list, tuple)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(",") if x.strip())


def _ints(v):
    if isinstance(v, (list, tuple)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(",") if x.strip())


def _strs(v):
    if isinstance(v, (list, tuple)):
        return tuple(str(x) for x in v)
    return tuple(x.strip() for x in str(v).split(",") if x.strip())


def _is_none(v):
    return v is None or str(v).lower() in ("", "none", "null")


def _opt_float(v):
    return None if _is_none(v) else float(v)


def _opt_int(v):
    return None if _is_none(v) else int(v)


@dataclass(frozen=True)
class Opt:
    default: object
    parse: object
    help: str = ""


def _data_opts(split, n):
    return {
        "data": Opt("prototypes", str, "prototypes | blobs | mnist:<dir> | <file.csv>"),
        "split": Opt(split, str, "train or test (selects synthetic seed / MNIST file)"),
        "n_samples": Opt(n, int, "number of examples"),
        "classes": Opt(3, int, "number of classes"),
        "data_seed": Opt(None, lambda v: None if v is None else int(v), "synthetic data seed"),
    }


_ATTACK_OPTS = {
    "epsilon": Opt(0.2, float, "attack radius"),
    "norm": Opt("linf", str, "l2 or linf"),
    "attack_gamma": Opt(1000.0, float, "inverse temperature of the Bayesian attacks"),
    "attack_h": Opt(0.1, float, "Langevin step of the Bayesian attacks"),
    "attack_steps": Opt(20, int, "Langevin steps of the Bayesian attacks"),
    "pgd_steps": Opt(20, int, "PGD iterations"),
    "pgd_step_size": Opt(None, _opt_float, "PGD step (default 2.5*epsilon/pgd_steps)"),
    "noise_mode": Opt("algorithm1", str, "algorithm1 or continuous"),
}

_TOY = {
    "potential": Opt("coupled_quadratic", str, "shifted_quadratic | coupled_quadratic | zero"),
    "shift": Opt(0.1, float, "offset c of the shifted quadratic"),
}

COMMANDS = {
    "density": {
        **_TOY,
        "potential": Opt("shifted_quadratic", str, _TOY["potential"].help),
        "gammas": Opt((0.1, 10.0, 1000.0), _floats, "comma-separated inverse temperatures"),
        "eps": Opt((0.025, 0.1, 0.4), _floats, "comma-separated ball radii"),
        "theta": Opt(0.0, float, "parameter value"),
        "nodes": Opt(None, _opt_int, "odd number of grid nodes (default: resolve the boundary layer)"),
    },
    "paths": {
        **_TOY,
        "gamma": Opt(10.0, float, "inverse temperature"),
        "n": Opt(50, int, "number of particles"),
        "eps": Opt(1.0, float, "ball radius"),
        "steps": Opt(1000, int, "outer steps J"),
        "inner_steps": Opt(10, int, "particle steps T per outer step"),
        "h": Opt(0.01, float, "step size"),
        "theta0": Opt(1.0, float, "initial parameter"),
        "noise_mode": Opt("continuous", str, "algorithm1 or continuous"),
        "snapshots": Opt(10, int, "density snapshots in the companion CSV"),
        "nodes": Opt(None, _opt_int, "odd number of snapshot grid nodes (default: automatic)"),
    },
    "chaos": {
        **_TOY,
        "gamma": Opt(30.0, float, "inverse temperature"),
        "eps": Opt(1.0, float, "ball radius"),
        "h": Opt(0.01, float, "step size"),
        "steps": Opt(100, int, "outer steps J"),
        "inner_steps": Opt(10, int, "particle steps T"),
        "theta0": Opt(1.0, float, "initial parameter"),
        "n_list": Opt((4, 8, 16, 32, 64, 128, 256), _ints, "particle counts"),
        "n_ref": Opt(4096, int, "reference particle count"),
        "repeats": Opt(200, int, "independent repeats"),
        "noise_mode": Opt("continuous", str, "algorithm1 or continuous"),
        "bootstrap": Opt(1000, int, "bootstrap resamples for the CI (0 disables)"),
    },
    "longtime": {
        **_TOY,
        "gamma": Opt(1.0, float, "inverse temperature"),
        "eps": Opt(1.0, float, "ball radius"),
        "n": Opt(2000, int, "number of particles"),
        "h": Opt(0.05, float, "step size"),
        "steps": Opt(200, int, "outer steps J"),
        "inner_steps": Opt(10, int, "particle steps T"),
        "theta0": Opt(1.0, float, "initial parameter"),
        "seeds": Opt(4, int, "independent runs averaged"),
        "noise_mode": Opt("continuous", str, "algorithm1 or continuous"),
        "bootstrap": Opt(1000, int, "bootstrap resamples for the CI (0 disables)"),
    },
    "train": {
        **_data_opts("train", 2000),
        "algorithm": Opt("minibatch", str, "abram | minibatch | fgsm-baseline | sgd"),
        "arch": Opt((784, 64, 3), _ints, "layer sizes"),
        "epochs": Opt(10, int, "passes over the data"),
        "batch_size": Opt(64, int, "mini-batch size / particle count"),
        "lr": Opt(0.1, float, "parameter step size"),
        "epsilon": Opt(0.2, float, "training attack radius"),
        "norm": Opt("linf", str, "l2 or linf"),
        "gamma": Opt(1.0, float, "inverse temperature"),
        "inner_steps": Opt(10, int, "particle steps per outer step"),
        "inner_h": Opt(None, _opt_float, "particle step (default 10*epsilon)"),
        "noise_mode": Opt("algorithm1", str, "algorithm1 or continuous"),
        "log": Opt(None, lambda v: v, "per-epoch accuracy CSV (default <out>.log.csv)"),
    },
    "attack": {
        **_data_opts("test", 1000),
        **_ATTACK_OPTS,
        "checkpoint": Opt(None, lambda v: v, "trained checkpoint (required)"),
        "attack": Opt("pgd", str, "none | fgsm | pgd | bayes_sample | bayes_mean"),
        "adv_out": Opt(None, lambda v: v, "optional CSV of perturbed inputs"),
    },
    "eval": {
        **_data_opts("test", 1000),
        **_ATTACK_OPTS,
        "checkpoint": Opt(None, lambda v: v, "trained checkpoint (required)"),
        "attacks": Opt(("none", "fgsm", "pgd", "bayes_sample", "bayes_mean"), _strs, "attacks to run"),
    },
}

DEFAULT_OUT = {"density": "density.csv", "paths": "paths.csv", "chaos": "chaos.csv",
               "longtime": "longtime.csv", "train": "model.ckpt", "attack": "attack.csv",
               "eval": "eval.csv"}

_COMMON = ("seed", "out", "threads")


def read_config_file(path) -> dict:
    """JSON object or ``key=value`` lines (``#`` comments allowed)."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return obj
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def resolve_config(command: str, flags: dict, file_values: dict | None = None) -> dict:
    """Merge flag values over file values over defaults and coerce types.

    ``flags`` maps keys to raw values, ``None`` meaning "not given".
    """
    opts = COMMANDS[command]
    file_values = dict(file_values or {})
    unknown = sorted(set(file_values) - set(opts) - set(_COMMON))
    if unknown:
        raise ConfigError(f"unknown config key(s) for {command!r}: {', '.join(unknown)}")
    cfg = {}
    for key, opt in opts.items():
        raw = flags.get(key)
        if raw is None:
            raw = file_values.get(key, opt.default)
        try:
            cfg[key] = opt.default if raw is None else opt.parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from None
    for key in _COMMON:
        cfg[key] = file_values.get(key)
    return cfg


def _u64(v):
    n = int(v)
    if not 0 <= n < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return n


# shared helpers -------------------------------------------------------------

def _potential(cfg):
    name = cfg["potential"]
    if name == "shifted_quadratic":
        return shifted_quadratic_1d(cfg["shift"])
    if name == "coupled_quadratic":
        return coupled_quadratic_1d()
    if name == "zero":
        return zero_potential(1)
    raise ConfigError(f"unknown potential {name!r}")


def _positive(cfg, *keys):
    for k in keys:
        v = cfg[k]
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ConfigError(f"{k} must be positive, got {v!r}")


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    path = Path(path)
    if path.parent != Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def _companion(out, suffix):
    out = Path(out)
    return out.with_name(f"{out.stem}_{suffix}{out.suffix or '.csv'}")


def _plot(path, series, xlabel, ylabel, logx=False, logy=False):
    try:
        import matplotlib
        matplotlib.use("Agg")
        matplotlib.rcParams["svg.hashsalt"] = "abram"  # stable element ids
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (x, y) in series.items():
        ax.plot(x, y, label=label, lw=1)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    if len(series) > 1 and len(series) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _load_data(cfg, seed_default=None) -> Dataset:
    src, split, n, classes = cfg["data"], cfg["split"], cfg["n_samples"], cfg["classes"]
    if split not in ("train", "test"):
        raise ConfigError("split must be 'train' or 'test'")
    if n < 1:
        raise ConfigError("n_samples must be >= 1")
    dseed = cfg["data_seed"]
    if dseed is None:
        dseed = 1 if split == "train" else 2
    if src == "prototypes":
        return make_prototypes(n, classes, 784, seed=dseed)
    if src == "blobs":
        per = -(-n // classes)
        return make_blobs(per, classes, 784, spread=1.0, seed=dseed).subset(slice(0, n))
    if src.startswith("mnist:"):
        return load_mnist_subset(src[len("mnist:"):], split, n, classes)
    data = load_csv(src)
    return data.subset(slice(0, min(n, len(data))))


def _attack_config(cfg, kind, seed, dim):
    if kind == "none":
        return None
    _positive(cfg, "epsilon", "attack_gamma", "attack_h")
    return AttackConfig(AttackKind(kind), Ball(cfg["epsilon"], cfg["norm"], dim), gamma=cfg["attack_gamma"],
                        h=cfg["attack_h"], steps=cfg["attack_steps"], seed=seed, pgd_steps=cfg["pgd_steps"],
                        pgd_step_size=cfg["pgd_step_size"], noise_mode=cfg["noise_mode"])


def _trapezoid_normalised(d):
    # the oracle normalises with Simpson weights; emitted columns are rescaled
    # so that a reader integrating the CSV with the trapezoid rule gets 1
    xs = d.nodes[:, 0]
    return xs, d.values / trapezoid(d.values, xs)


# commands -------------------------------------------------------------------

def cmd_density(cfg, seed, out, threads, plot):
    p = _potential(cfg)
    rows, series = [], {}
    for g in cfg["gammas"]:
        for e in cfg["eps"]:
            _positive({"eps": e}, "eps")
            d = AdversarialDensity(p, g, Ball(e), [cfg["theta"]], grid=cfg["nodes"])
            xs, vals = _trapezoid_normalised(d)
            rows.extend((_fmt(g), _fmt(e), _fmt(x), _fmt(v)) for x, v in zip(xs, vals))
            series[f"gamma={g:g}, eps={e:g}"] = (xs, vals)
    _write_csv(out, ("gamma", "eps", "xi", "density"), rows)
    if plot:
        _plot(Path(out).with_suffix(".svg"), series, "xi", "density")


def _abram_cfg(cfg, seed, n):
    _positive(cfg, "gamma", "eps", "h")
    return AbramConfig(gamma=cfg["gamma"], ball=Ball(cfg["eps"]), h=cfg["h"], n_particles=n,
                       inner_steps=cfg["inner_steps"], outer_steps=cfg["steps"],
                       noise_mode=cfg["noise_mode"], seed=seed, theta0=[cfg["theta0"]])


def cmd_paths(cfg, seed, out, threads, plot):
    p = _potential(cfg)
    acfg = _abram_cfg(cfg, seed, cfg["n"])
    res = run_abram(acfg, _ONE, constant_family(p), record_particles=True)
    J = acfg.outer_steps
    header = ["step", "theta"] + [f"particle_{i + 1}" for i in range(acfg.n_particles)]
    rows = ([str(j), _fmt(res.theta_path[j, 0])] + [_fmt(x) for x in res.particle_path[j, :, 0]]
            for j in range(J + 1))
    _write_csv(out, header, rows)
    k = max(1, cfg["snapshots"])
    checkpoints = sorted(set(int(round(s)) for s in np.linspace(0, J, k)))
    dens = AdversarialDensity(p, effective_gamma(acfg.gamma, acfg.noise_mode), acfg.ball, grid=cfg["nodes"])
    snap = []
    for j in checkpoints:
        d = dens.at(res.theta_path[j])
        snap.extend((str(j), _fmt(res.theta_path[j, 0]), _fmt(x), _fmt(v))
                    for x, v in zip(*_trapezoid_normalised(d)))
    _write_csv(_companion(out, "density"), ("step", "theta", "xi", "density"), snap)
    if plot:
        steps = np.arange(J + 1)
        _plot(Path(out).with_suffix(".svg"), {"theta": (steps, res.theta_path[:, 0])}, "step", "theta")


def _ci_text(ci):
    return "n/a" if ci is None else f"[{ci[0]:.4f}, {ci[1]:.4f}]"


def cmd_chaos(cfg, seed, out, threads, plot):
    p = _potential(cfg)
    acfg = _abram_cfg(cfg, seed, cfg["n_ref"])
    if cfg["repeats"] < 1 or min(cfg["n_list"]) < 1:
        raise ConfigError("repeats and every N must be >= 1")
    res = chaos_experiment(acfg, p, cfg["n_list"], cfg["n_ref"], cfg["repeats"], threads=threads,
                           bootstrap=cfg["bootstrap"])
    rows = [(str(r["N"]), _fmt(r["theta_gap"]), _fmt(r["w2_sq"]), _fmt(r["total"])) for r in res.table()]
    _write_csv(out, ("N", "theta_gap", "w2_sq", "total"), rows)
    if plot:
        _plot(Path(out).with_suffix(".svg"), {"total": (res.n_list, res.total.mean(axis=0))}, "N",
              "E|theta-theta_ref|^2 + W2^2", logx=True, logy=True)
    print(f"chaos: slope={res.slope:.4f} ci95={_ci_text(res.slope_ci)} "
          f"r2={res.r_squared:.4f} repeats={cfg['repeats']}")
    return res


def cmd_longtime(cfg, seed, out, threads, plot):
    p = _potential(cfg)
    acfg = _abram_cfg(cfg, seed, cfg["n"])
    if cfg["seeds"] < 1:
        raise ConfigError("seeds must be >= 1")
    res = longtime_experiment(acfg, p, seeds=cfg["seeds"], threads=threads, bootstrap=cfg["bootstrap"])
    rows = [(str(s), _fmt(t), _fmt(c)) for s, t, c in zip(res.steps, res.times, res.curve)]
    _write_csv(out, ("step", "time", "sq_error"), rows)
    if plot:
        _plot(Path(out).with_suffix(".svg"), {"|theta-theta*|^2": (res.times, res.curve)}, "time",
              "squared error", logy=True)
    print(f"longtime: eta={res.eta:.4f} ci95={_ci_text(res.eta_ci)} r2={res.r_squared:.4f} "
          f"theta_star={res.theta_star:.6f} fit_segment={res.segment[0]}..{res.segment[1]}")
    return res


def cmd_train(cfg, seed, out, threads, plot):
    data = _load_data(cfg)
    model = mlp(cfg["arch"])
    if model.input_dim != data.dim:
        raise ConfigError(f"arch input size {model.input_dim} does not match data dimension {data.dim}")
    if model.n_classes < data.n_classes:
        raise ConfigError("arch has fewer outputs than the data has classes")
    keys = ("algorithm", "epochs", "batch_size", "lr", "epsilon", "norm", "gamma", "inner_steps",
            "inner_h", "noise_mode")
    try:
        values = {k: cfg[k] for k in keys}
        if values["inner_h"] is None:
            values["inner_h"] = 10.0 * values["epsilon"]
        tcfg = TrainConfig(seed=seed, **values)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    res = train(model, data, tcfg)
    record = dict(values)
    record.update(data=cfg["data"], split=cfg["split"], n_samples=cfg["n_samples"])
    save_checkpoint(ModelParams(res.theta, model.descriptor(), 1, record, seed), out)
    log_path = cfg["log"] or Path(out).with_suffix(".log.csv")
    _write_csv(log_path, ("epoch", "accuracy", "n", "seed"),
               [(str(e + 1), _fmt(a), str(len(data)), str(seed)) for e, a in enumerate(res.epoch_accuracy)])
    if plot:
        _plot(Path(log_path).with_suffix(".svg"),
              {"accuracy": (np.arange(1, len(res.epoch_accuracy) + 1), res.epoch_accuracy)}, "epoch", "accuracy")
    return res


def _load_model(cfg):
    if cfg["checkpoint"] is None:
        raise ConfigError("checkpoint is required")
    ck = load_checkpoint(cfg["checkpoint"])
    return ck.model, ck.theta


def cmd_attack(cfg, seed, out, threads, plot):
    model, theta = _load_model(cfg)
    data = _load_data(cfg)
    attack = _attack_config(cfg, cfg["attack"], seed, data.dim)
    acc = evaluate(model, theta, data, attack, threads=threads)
    _write_csv(out, ("attack", "accuracy", "n", "seed"), [(cfg["attack"], _fmt(acc), str(len(data)), str(seed))])
    if cfg["adv_out"]:
        adv = perturb(model, theta, data.features, data.labels, attack)
        save_csv(Dataset(adv, data.labels, data.name, data.n_classes), cfg["adv_out"])
    print(f"{cfg['attack']}: accuracy={acc:.4f} n={len(data)}")
    return acc


def cmd_eval(cfg, seed, out, threads, plot):
    model, theta = _load_model(cfg)
    data = _load_data(cfg)
    rows = []
    for kind in cfg["attacks"]:
        acc = evaluate(model, theta, data, _attack_config(cfg, kind, seed, data.dim), threads=threads)
        rows.append((kind, _fmt(acc), str(len(data)), str(seed)))
        print(f"{kind}: accuracy={acc:.4f} n={len(data)}")
    _write_csv(out, ("attack", "accuracy", "n", "seed"), rows)
    return rows


class _OneDatum:
    features = np.zeros((1, 1))
    labels = np.zeros(1, dtype=np.int64)


_ONE = _OneDatum()

HANDLERS = {"density": cmd_density, "paths": cmd_paths, "chaos": cmd_chaos, "longtime": cmd_longtime,
            "train": cmd_train, "attack": cmd_attack, "eval": cmd_eval}


# entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abram", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        sp = sub.add_parser(name, help=f"run the {name} command")
        sp.add_argument("--config", help="JSON or key=value file; flags override it")
        sp.add_argument("--seed", help="unsigned 64-bit seed (default 0)")
        sp.add_argument("--out", help=f"output path (default {DEFAULT_OUT[name]})")
        sp.add_argument("--threads", help="worker threads (fallback: $ABRAM_THREADS, then 1)")
        sp.add_argument("--plot", action="store_true", help="also write an SVG line plot")
        sp.add_argument("-v", "--verbose", action="store_true")
        for key, opt in opts.items():
            default = ",".join(map(str, opt.default)) if isinstance(opt.default, tuple) else opt.default
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"{opt.help} (default {default})")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in COMMANDS[args.command]}
        cfg = resolve_config(args.command, flags, file_values)
        try:
            seed = _u64(args.seed if args.seed is not None else (cfg["seed"] if cfg["seed"] is not None else 0))
            raw_threads = next((v for v in (args.threads, os.environ.get("ABRAM_THREADS"), cfg["threads"])
                                if v is not None), 1)
            threads = int(raw_threads)
            if threads < 1:
                raise ValueError("threads must be >= 1")
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        out = args.out or cfg["out"] or DEFAULT_OUT[args.command]
        HANDLERS[args.command](cfg, seed, out, threads, args.plot)
    except DivergenceError as exc:
        print(f"abram: numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (ParseError, OSError) as exc:
        print(f"abram: I/O error: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, InvalidInputError, PreconditionError) as exc:
        print(f"abram: configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:  # enum values such as noise_mode or norm
        print(f"abram: configuration error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
