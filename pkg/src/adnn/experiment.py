"""End-to-end experiments: data, offline surrogate, sampling, diagnostics.

Configuration is a flat ``key = value`` text file. Every key has a default
that depends on ``example``; see :func:`example_defaults`.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, fields
from importlib import resources

import numpy as np

from . import nn
from .bayes import LogPosterior, StandardNormalPrior
from .field import RbfField, kl_build
from .mcmc import AdaptiveConfig, ProposalSpec, adaptive_run, rel_error, run_chain
from .pde import ForwardProblem, Grid, NoiseSpec, generate_data, sensor_grid, write_observation
from .surrogate import build_low_fidelity, save_surrogate

log = logging.getLogger(__name__)

EXAMPLES = ("rbf9", "rbf9_prior_truth", "kl_field")
METHODS = ("direct", "dnn", "adnn")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    example: str = "rbf9"
    method: str = "adnn"
    data_resolution: int = 63
    inversion_resolution: int = 31
    n_sensors_per_axis: int = 9
    noise_mode: str = "relative"
    noise_level: float = 0.05
    n_modes: int = 20
    length_scale: float = 0.1
    kl_variance: float = 1.0
    n_offline: int = 50
    lf_hidden: tuple = (40, 40, 40, 40)
    head_hidden: tuple = (50,)
    regularization: float = 0.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    offline_epochs: int = 5000
    online_epochs: int = 2000
    subchain_length: int = 1000
    max_iterations: int = 50
    tol: float = 0.1
    radius: float = 0.2
    n_local: int = 10
    refit_head_only: bool = False
    pool_local: bool = False
    indicator_ratio_flipped: bool = False
    chain_length: int = 50000
    step_sigma: float = 0.05
    burn_in: float = 0.4
    data_seed: int = 1
    offline_seed: int = 0
    seed: int = 0
    reference: str = "truth"
    kl_cache_dir: str = ""
    output_dir: str = "out"

    def validate(self):
        if self.example not in EXAMPLES:
            raise ConfigError(f"example: must be one of {EXAMPLES}, got {self.example!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method: must be one of {METHODS}, got {self.method!r}")
        if self.data_resolution <= self.inversion_resolution:
            raise ConfigError(
                "data_resolution: must exceed inversion_resolution to avoid an inverse crime"
            )
        if self.noise_mode not in ("relative", "absolute"):
            raise ConfigError(f"noise_mode: unknown mode {self.noise_mode!r}")
        if not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in: must lie in [0, 1)")
        positive = ("n_offline", "subchain_length", "max_iterations", "n_local", "chain_length",
                    "batch_size", "n_modes", "n_sensors_per_axis")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive")
        for name in ("tol", "radius", "step_sigma", "learning_rate", "length_scale", "kl_variance"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive")
        if self.example == "kl_field" and self.n_modes > self.inversion_resolution**2:
            raise ConfigError("n_modes: exceeds the number of grid nodes")
        return self

    @property
    def n_params(self):
        return self.n_modes if self.example == "kl_field" else 9

    def adaptive(self):
        return AdaptiveConfig(
            subchain_length=self.subchain_length,
            max_iterations=self.max_iterations,
            tol=self.tol,
            radius=self.radius,
            n_local=self.n_local,
            head_hidden=tuple(self.head_hidden),
            train=self.train_config(self.online_epochs),
            seed=self.seed,
            refit_head_only=self.refit_head_only,
            pool_local=self.pool_local,
            indicator_ratio_flipped=self.indicator_ratio_flipped,
        )

    def train_config(self, epochs):
        return nn.TrainConfig(
            learning_rate=self.learning_rate,
            regularization=self.regularization,
            batch_size=self.batch_size,
            epochs=epochs,
        )

    def digest(self):
        text = "\n".join(serialize_config(self, with_output=False))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def example_defaults(example):
    """Paper settings per example, on top of the dataclass defaults."""
    if example == "kl_field":
        return dict(
            noise_mode="absolute", noise_level=0.05, n_offline=100,
            lf_hidden=(150, 150, 150), head_hidden=(150,), regularization=1e-6, n_local=50,
            step_sigma=0.02,
        )
    if example in EXAMPLES:
        return {}
    raise ConfigError(f"example: must be one of {EXAMPLES}, got {example!r}")


# -- config text format -------------------------------------------------------

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_DEFAULT = ExperimentConfig()


def _convert(name, text):
    if name not in _FIELDS:
        raise ConfigError(f"{name}: unknown configuration key")
    proto = getattr(_DEFAULT, name)
    text = text.strip()
    try:
        if isinstance(proto, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(proto, int):
            return int(text)
        if isinstance(proto, float):
            return float(text)
        if isinstance(proto, tuple):
            return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_pairs(pairs):
    """Turn ``[(key, text), ...]`` into an ExperimentConfig with example defaults."""
    raw = {}
    for key, text in pairs:
        raw[key.strip()] = text
    example = raw.get("example", _DEFAULT.example).strip()
    values = dict(example_defaults(example))
    for key, text in raw.items():
        values[key] = _convert(key, text)
    return ExperimentConfig(**values).validate()


def parse_config(text, overrides=()):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs.append((key, value))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        pairs.append(tuple(item.split("=", 1)))
    return parse_pairs(pairs)


def serialize_config(cfg, with_output=True):
    lines = []
    for f in fields(cfg):
        if f.name == "output_dir" and not with_output:
            continue
        lines.append(f"{f.name} = {_format(getattr(cfg, f.name))}")
    return lines


def make_config(**kwargs):
    """Config for ``example`` with its defaults, then ``kwargs``."""
    example = kwargs.get("example", _DEFAULT.example)
    values = dict(example_defaults(example))
    values.update(kwargs)
    if "lf_hidden" in values:
        values["lf_hidden"] = tuple(values["lf_hidden"])
    if "head_hidden" in values:
        values["head_hidden"] = tuple(values["head_hidden"])
    return ExperimentConfig(**values).validate()


# -- setup --------------------------------------------------------------------

def load_truth(example, n_params):
    with resources.files("adnn.data").joinpath("truths.json").open() as f:
        z = json.load(f)[example]["z"]
    if len(z) < n_params:
        raise ConfigError(f"stored truth for {example} has only {len(z)} entries")
    return np.array(z[:n_params])


class Setup:
    """Everything derived from a config before sampling starts."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.sensors = sensor_grid(cfg.n_sensors_per_axis)
        if cfg.example == "kl_field":
            cache = cfg.kl_cache_dir or None
            self.field = kl_build(cfg.inversion_resolution, cfg.n_modes, cfg.length_scale,
                                  cfg.kl_variance, cache_dir=cache)
        else:
            self.field = RbfField()
        self.problem = ForwardProblem(Grid(cfg.inversion_resolution), self.field, self.sensors)
        self.fine = ForwardProblem(Grid(cfg.data_resolution), self.field, self.sensors)
        self.prior = StandardNormalPrior(cfg.n_params)
        self.z_true = load_truth(cfg.example, cfg.n_params)
        self.observation, self.clean_data = generate_data(
            self.fine, self.z_true, NoiseSpec(cfg.noise_mode, cfg.noise_level),
            cfg.data_seed, self.problem.grid,
        )
        self.nodes = self.problem.grid.nodes
        self._log_kappa = _log_kappa_map(self.field, self.nodes)

    def log_kappa(self, Z):
        return self._log_kappa(Z)

    def true_kappa(self):
        return np.exp(self.log_kappa(self.z_true))


def _log_kappa_map(field, nodes):
    if isinstance(field, RbfField):
        kappa = field.bind(nodes)
        return lambda Z: np.log(kappa(Z))
    return field.bind_log(nodes)


# -- diagnostics --------------------------------------------------------------

class RunningMoments:
    """Welford accumulator over rows of a 2-D array stream."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self.m2 = None

    def update(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.mean is None:
            self.mean = np.zeros(X.shape[1])
            self.m2 = np.zeros(X.shape[1])
        for x in X:
            self.n += 1
            d = x - self.mean
            self.mean += d / self.n
            self.m2 += d * (x - self.mean)

    @property
    def std(self):
        return np.sqrt(self.m2 / self.n)


def summarize(samples, burn_in, log_kappa, reference=None, chunk=1000):
    """Posterior mean and std of kappa and log kappa after discarding burn-in.

    ``log_kappa`` maps a batch of z rows to log-permeability at the grid
    nodes. Standard deviations use the 1/n (population) normalization.
    """
    samples = np.atleast_2d(samples)
    kept = samples[int(math.floor(burn_in * len(samples))):]
    if len(kept) == 0:
        raise ValueError("no samples left after burn-in")
    k_acc, p_acc = RunningMoments(), RunningMoments()
    for start in range(0, len(kept), chunk):
        p = log_kappa(kept[start:start + chunk])
        p_acc.update(p)
        k_acc.update(np.exp(p))
    out = {
        "n_kept": len(kept),
        "kappa_mean": k_acc.mean,
        "kappa_std": k_acc.std,
        "log_kappa_mean": p_acc.mean,
        "log_kappa_std": p_acc.std,
    }
    if reference is not None:
        out["rel_error"] = rel_error(k_acc.mean, reference)
    return out


# -- running ------------------------------------------------------------------

@dataclass
class RunResult:
    samples: np.ndarray
    accepted: np.ndarray
    iteration: np.ndarray
    depth: np.ndarray
    summary: dict
    metrics: dict
    store: object = None
    surrogate: object = None


def execute(cfg, setup=None, surrogate=None):
    """Run one configured method in memory; nothing is written."""
    setup = setup or Setup(cfg)
    problem, prior, obs = setup.problem, setup.prior, setup.observation
    proposal = ProposalSpec(cfg.step_sigma)
    z0 = np.zeros(cfg.n_params)
    start = problem.eval_count
    store = None
    offline = 0

    if cfg.method != "direct" and surrogate is None:
        surrogate = build_low_fidelity(
            problem, prior, cfg.n_offline, tuple(cfg.lf_hidden),
            cfg.train_config(cfg.offline_epochs), seed=cfg.offline_seed,
        )
        offline = problem.eval_count - start
    online_start = problem.eval_count

    rng = np.random.default_rng(cfg.seed)
    if cfg.method == "direct":
        lp = LogPosterior(prior, obs, problem)
        samples, accepted = run_chain(lp, z0, cfg.chain_length, proposal, rng)
        iteration = np.zeros(len(samples), dtype=int)
        depth = np.full(len(samples), -1)
    elif cfg.method == "dnn":
        lp = LogPosterior(prior, obs, surrogate.predict)
        samples, accepted = run_chain(lp, z0, cfg.chain_length, proposal, rng)
        iteration = np.zeros(len(samples), dtype=int)
        depth = np.zeros(len(samples), dtype=int)
    else:
        store = adaptive_run(problem, obs, prior, surrogate, proposal, cfg.adaptive(), z0)
        samples, accepted, iteration, depth = store.samples, store.accepted, store.iteration, store.depth
    online = problem.eval_count - online_start

    reference = _reference(cfg, setup)
    summary = summarize(samples, cfg.burn_in, setup.log_kappa, reference)
    metrics = {
        "example": cfg.example,
        "method": cfg.method,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "offline_seed": cfg.offline_seed,
        "data_seed": cfg.data_seed,
        "rel_error": summary["rel_error"],
        "reference": cfg.reference,
        "acceptance_rate": float(np.mean(accepted[1:])) if len(accepted) > 1 else 0.0,
        "n_samples": int(len(samples)),
        "evals": {
            "data_generation": setup.fine.eval_count,
            "offline": offline,
            "online": online,
            "total": setup.fine.eval_count + offline + online,
        },
    }
    if store is not None:
        metrics["n_refinements"] = store.n_refinements
        metrics["final_depth"] = int(store.surrogate.depth)
        surrogate = store.surrogate
    return RunResult(samples, accepted, iteration, depth, summary, metrics, store, surrogate)


def _reference(cfg, setup):
    if cfg.reference == "truth":
        return setup.true_kappa()
    M = cfg.inversion_resolution
    ref = np.loadtxt(cfg.reference, delimiter=",", comments="#")
    if ref.shape != (M, M):
        raise ConfigError(f"reference: expected an {M}x{M} matrix in {cfg.reference}")
    return ref.ravel()


def run_experiment(cfg):
    """Execute and write all artifacts under ``cfg.output_dir``."""
    result = execute(cfg)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    tag = f"# config_hash={cfg.digest()} seed={cfg.seed} offline_seed={cfg.offline_seed} data_seed={cfg.data_seed}"
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write("\n".join(serialize_config(cfg)) + "\n")
    write_samples(os.path.join(out, "samples.csv"), result, tag)
    if result.store is not None:
        write_refinements(os.path.join(out, "refinements.csv"), result.store, tag)
    if result.surrogate is not None:
        save_surrogate(result.surrogate, os.path.join(out, "surrogate.txt"))
    write_fields(out, result.summary, cfg.inversion_resolution, tag,
                 log_fields=cfg.example == "kl_field")
    with open(os.path.join(out, "metrics.json"), "w") as f:
        json.dump(result.metrics, f, indent=2, sort_keys=True)
    return result


def write_samples(path, result, tag):
    n = result.samples.shape[1]
    with open(path, "w", newline="") as f:
        f.write(tag + "\n")
        w = csv.writer(f)
        w.writerow([f"z_{i + 1}" for i in range(n)] + ["iteration", "accepted", "surrogate_depth"])
        for z, it, acc, d in zip(result.samples, result.iteration, result.accepted, result.depth):
            w.writerow([repr(float(v)) for v in z] + [int(it), int(acc), int(d)])


def read_samples(path):
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(line for line in f if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    n = sum(h.startswith("z_") for h in header)
    return np.array([[float(v) for v in r[:n]] for r in body])


def write_refinements(path, store, tag):
    with open(path, "w", newline="") as f:
        f.write(tag + "\n")
        w = csv.writer(f)
        w.writerow(["outer_iter", "err", "triggered", "evals_total"])
        for e in store.events:
            w.writerow([e.iteration, repr(float(e.err)), int(e.triggered),
                        e.evals_total - store.initial_evals])


def write_fields(out, summary, M, tag, log_fields=False):
    names = ["kappa_mean", "kappa_std"] + (["log_kappa_mean", "log_kappa_std"] if log_fields else [])
    for name in names:
        np.savetxt(os.path.join(out, f"{name}.csv"), summary[name].reshape(M, M),
                   delimiter=",", fmt="%.17g", header=tag[2:])


def write_data(cfg):
    setup = Setup(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    obs = setup.observation
    obs.meta["config_hash"] = cfg.digest()
    obs.meta["example"] = cfg.example
    write_observation(obs, os.path.join(cfg.output_dir, "data.csv"))
    return setup


def train_offline(cfg):
    setup = Setup(cfg)
    model = build_low_fidelity(
        setup.problem, setup.prior, cfg.n_offline, tuple(cfg.lf_hidden),
        cfg.train_config(cfg.offline_epochs), seed=cfg.offline_seed,
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    save_surrogate(model, os.path.join(cfg.output_dir, "surrogate.txt"))
    return model, setup.problem.eval_count


def with_changes(cfg, **changes):
    return dataclasses.replace(cfg, **changes).validate()
