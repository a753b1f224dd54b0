"""Unnormalized log densities over the parameter vector z."""

from __future__ import annotations

import numpy as np


class StandardNormalPrior:
    """i.i.d. N(0, 1) on every coordinate."""

    kind = "standard_normal_iid"

    def __init__(self, dim):
        self.dim = int(dim)

    def sample(self, rng, size=None):
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.standard_normal(shape)

    def __call__(self, z):
        return log_prior(self, z)


def log_prior(prior, z):
    """-0.5 |z|^2, additive constant fixed at zero."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != prior.dim:
        raise ValueError(f"expected {prior.dim} parameters, got {z.shape[-1]}")
    return -0.5 * float(z @ z)


def log_likelihood(obs, prediction):
    """Gaussian log-likelihood with the observation's known sigma, unnormalized."""
    prediction = np.asarray(prediction, dtype=float)
    if prediction.shape != obs.data.shape:
        raise ValueError(f"prediction of length {prediction.size}, data of length {obs.data.size}")
    r = (obs.data - prediction) / obs.noise_sigma
    return -0.5 * float(r @ r)


class LogPosterior:
    """log L(z | d, forward) + log prior(z).

    ``forward`` is any callable z -> predicted data: a ForwardProblem for the
    high-fidelity posterior, a surrogate's ``predict`` for the approximate one.
    """

    def __init__(self, prior, observation, forward):
        self.prior = prior
        self.observation = observation
        self.forward = forward

    def evaluate(self, z):
        """Return ``(log_posterior, prediction)``."""
        y = self.forward(z)
        return log_likelihood(self.observation, y) + log_prior(self.prior, z), y

    def __call__(self, z):
        return self.evaluate(z)[0]


def log_posterior(lp, z):
    return lp(z)
