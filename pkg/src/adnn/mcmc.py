"""Random-walk Metropolis-Hastings and the adaptive multi-fidelity sampler."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import nn
from .bayes import LogPosterior
from .surrogate import HEAD_HIDDEN, ONLINE_EPOCHS, LocalBall, refine

log = logging.getLogger(__name__)


class DegenerateIndicatorError(ZeroDivisionError):
    pass


class RefinementError(RuntimeError):
    def __init__(self, iteration, cause):
        self.iteration = iteration
        super().__init__(f"surrogate refinement failed at outer iteration {iteration}: {cause}")


@dataclass
class ProposalSpec:
    """Symmetric Gaussian random walk; ``step_sigma`` scalar or per-coordinate."""

    step_sigma: float | np.ndarray = 0.1

    def __post_init__(self):
        if np.any(np.asarray(self.step_sigma) <= 0):
            raise ValueError("step_sigma must be positive")

    def propose(self, z, rng):
        return z + self.step_sigma * rng.standard_normal(z.shape)


class Step(NamedTuple):
    state: np.ndarray
    accepted: bool
    log_density: float


def _finite_or_neg_inf(value):
    value = float(value)
    return value if math.isfinite(value) else -math.inf


def safe_log_density(log_density, z):
    try:
        return _finite_or_neg_inf(log_density(z))
    except (FloatingPointError, OverflowError, ValueError, ArithmeticError):
        return -math.inf


def accept(log_ratio, rng):
    """Metropolis test on a log ratio; consumes exactly one uniform."""
    u = rng.uniform()
    return log_ratio >= 0 or (u > 0 and math.log(u) < log_ratio)


def mh_step(log_density, current, proposal, rng, current_log_density=None):
    """One Metropolis-Hastings transition with a symmetric proposal.

    A non-finite density at the candidate is treated as -inf and rejected.
    """
    current = np.asarray(current, dtype=float)
    if current_log_density is None:
        current_log_density = safe_log_density(log_density, current)
    candidate = proposal.propose(current, rng)
    cand_lp = safe_log_density(log_density, candidate)
    ratio = cand_lp - current_log_density if cand_lp > -math.inf else -math.inf
    if accept(ratio, rng):
        return Step(candidate, True, cand_lp)
    return Step(current, False, current_log_density)


def run_chain(log_density, z0, n_states, proposal, rng):
    """Plain MH chain of ``n_states`` states, the first being ``z0``.

    The density is evaluated once at ``z0`` and once per proposal, so a chain
    over a high-fidelity posterior costs exactly ``n_states`` solves.
    Returns ``(samples, accepted)``.
    """
    z = np.asarray(z0, dtype=float)
    lp = safe_log_density(log_density, z)
    samples = np.empty((n_states, z.size))
    accepted = np.zeros(n_states, dtype=bool)
    samples[0] = z
    for k in range(1, n_states):
        z, accepted[k], lp = mh_step(log_density, z, proposal, rng, lp)
        samples[k] = z
    return samples, accepted


@dataclass
class Selection:
    z_tilde: np.ndarray
    f_high: np.ndarray
    beta: float
    chose_minus: bool


def refinement_select(lp_high, z_minus, z_plus, rng, flipped=False):
    """Pick the point at which to test the surrogate.

    ``beta = min(1, post(z_minus) / post(z_plus))`` under the high-fidelity
    posterior, and ``z_minus`` is chosen when ``s < beta``. With ``flipped``
    the ratio is inverted (``post(z_plus) / post(z_minus)``) and ``s < beta``
    selects ``z_plus``. Costs two high-fidelity solves; the forward output at
    the chosen point is returned for reuse.
    """
    lp_minus, f_minus = lp_high.evaluate(z_minus)
    lp_plus, f_plus = lp_high.evaluate(z_plus)
    lp_minus, lp_plus = _finite_or_neg_inf(lp_minus), _finite_or_neg_inf(lp_plus)
    if flipped:
        log_ratio = lp_plus - lp_minus
    else:
        log_ratio = lp_minus - lp_plus
    if math.isnan(log_ratio):
        log_ratio = -math.inf
    beta = math.exp(min(0.0, log_ratio))
    s = rng.uniform()
    first = s < beta
    chose_minus = first != flipped
    if chose_minus:
        return Selection(np.asarray(z_minus, dtype=float), f_minus, beta, True)
    return Selection(np.asarray(z_plus, dtype=float), f_plus, beta, False)


def error_indicator(f_high, f_low):
    """Max-norm relative mismatch |f_high - f_low|_inf / |f_high|_inf."""
    f_high = np.asarray(f_high, dtype=float)
    f_low = np.asarray(f_low, dtype=float)
    if f_high.shape != f_low.shape:
        raise ValueError(f"shape mismatch {f_high.shape} vs {f_low.shape}")
    denom = np.max(np.abs(f_high))
    if denom == 0:
        raise DegenerateIndicatorError("high-fidelity output is identically zero")
    return float(np.max(np.abs(f_high - f_low)) / denom)


def rel_error(field, reference):
    """|field - reference|_inf / |reference|_inf."""
    field = np.asarray(field, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if field.shape != reference.shape:
        raise ValueError(f"field shapes differ: {field.shape} vs {reference.shape}")
    denom = np.max(np.abs(reference))
    if denom == 0:
        raise ZeroDivisionError("reference field is identically zero")
    return float(np.max(np.abs(field - reference)) / denom)


@dataclass
class AdaptiveConfig:
    subchain_length: int = 1000
    max_iterations: int = 50
    tol: float = 0.1
    radius: float = 0.2
    n_local: int = 10
    head_hidden: tuple = HEAD_HIDDEN
    train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(epochs=ONLINE_EPOCHS))
    seed: int = 0
    refit_head_only: bool = False
    pool_local: bool = False
    indicator_ratio_flipped: bool = False

    def __post_init__(self):
        if self.subchain_length < 2:
            raise ValueError("subchain_length must be at least 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.n_local < 2:
            raise ValueError("n_local must be at least 2")


@dataclass
class RefinementEvent:
    iteration: int
    z_tilde: np.ndarray
    err: float
    triggered: bool
    n_local: int
    evals_total: int


@dataclass
class ChainStore:
    samples: np.ndarray
    accepted: np.ndarray
    iteration: np.ndarray
    depth: np.ndarray
    events: list
    evals_per_iteration: np.ndarray
    surrogate: object = None
    initial_evals: int = 0
    final_evals: int = 0

    @property
    def n_refinements(self):
        return sum(e.triggered for e in self.events)

    @property
    def online_evals(self):
        return self.final_evals - self.initial_evals

    @property
    def acceptance_rate(self):
        return float(self.accepted.mean())


def adaptive_run(problem, observation, prior, surrogate, proposal, cfg, z0):
    """Adaptive multi-fidelity Metropolis-Hastings.

    Each outer iteration runs ``m - 1`` surrogate-posterior steps, proposes
    one more candidate, tests the surrogate at a point chosen between the
    last state and the candidate with two high-fidelity solves, refines on a
    local ball if the relative error exceeds ``tol``, then accepts or rejects
    the candidate under the current surrogate. The total cost is
    ``2 * max_iterations + n_local * refinements`` high-fidelity solves.
    """
    rng = np.random.default_rng(cfg.seed)
    m, I = cfg.subchain_length, cfg.max_iterations
    lp_high = LogPosterior(prior, observation, problem)
    model = surrogate

    n = len(np.atleast_1d(z0))
    samples = np.empty((I * m, n))
    accepted = np.zeros(I * m, dtype=bool)
    iteration = np.repeat(np.arange(1, I + 1), m)
    depth = np.empty(I * m, dtype=int)
    evals = np.empty(I, dtype=int)
    events = []
    start_evals = problem.eval_count

    z = np.asarray(z0, dtype=float)
    for it in range(I):
        lp_low = LogPosterior(prior, observation, model.predict)
        lp = safe_log_density(lp_low, z)
        row = it * m
        before = problem.eval_count
        for k in range(m - 1):
            z, accepted[row + k], lp = mh_step(lp_low, z, proposal, rng, lp)
            samples[row + k] = z
            depth[row + k] = model.depth
        assert problem.eval_count == before, "surrogate subchain touched the solver"

        z_star = proposal.propose(z, rng)
        sel = refinement_select(lp_high, z, z_star, rng, cfg.indicator_ratio_flipped)
        try:
            err = error_indicator(sel.f_high, model.predict(sel.z_tilde))
        except DegenerateIndicatorError:
            log.warning("iteration %d: zero high-fidelity output, skipping refinement", it + 1)
            err = math.nan
        triggered = err > cfg.tol
        if triggered:
            ball = LocalBall(sel.z_tilde, cfg.radius)
            try:
                model = refine(
                    model, problem, ball, cfg.n_local, cfg.head_hidden, cfg.train, rng,
                    refit_head_only=cfg.refit_head_only, pool_local=cfg.pool_local,
                )
            except nn.DivergenceError as e:
                raise RefinementError(it + 1, e) from e
            lp_low = LogPosterior(prior, observation, model.predict)
            lp = safe_log_density(lp_low, z)
        events.append(RefinementEvent(it + 1, sel.z_tilde, err, bool(triggered),
                                      cfg.n_local if triggered else 0, problem.eval_count))

        lp_star = safe_log_density(lp_low, z_star)
        ok = accept(lp_star - lp if lp_star > -math.inf else -math.inf, rng)
        if ok:
            z = z_star
        samples[row + m - 1] = z
        accepted[row + m - 1] = ok
        depth[row + m - 1] = model.depth
        evals[it] = problem.eval_count - start_evals
        log.debug("iteration %d: err=%.4g refined=%s depth=%d", it + 1, err, triggered, model.depth)

    return ChainStore(samples, accepted, iteration, depth, events, evals, model,
                      start_evals, problem.eval_count)
