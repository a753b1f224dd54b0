"""Prior-trained network surrogates and their composite multi-fidelity refinements.

A :class:`LowFidelityModel` is a single network fit to forward-model runs at
prior draws. :meth:`refine` wraps any model in a :class:`CompositeModel`
whose head network reads ``(z, base(z))`` and is trained on a handful of
high-fidelity runs inside a max-norm ball. Refining a composite nests it
further, so a depth-k model evaluates k+1 networks.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import nn

LOW_FIDELITY_HIDDEN = (40, 40, 40, 40)
HEAD_HIDDEN = (50,)
OFFLINE_EPOCHS = 5000
ONLINE_EPOCHS = 2000


class SurrogateModel:
    n_params: int
    n_obs: int
    depth: int

    def predict(self, z):
        raise NotImplementedError

    def __call__(self, z):
        return self.predict(z)


class LowFidelityModel(SurrogateModel):
    depth = 0

    def __init__(self, net, x_scaler, y_scaler):
        self.net = net
        self.x_scaler = x_scaler
        self.y_scaler = y_scaler
        self.n_params = net.dims[0]
        self.n_obs = net.dims[-1]

    def predict(self, z):
        return self.y_scaler.inverse(nn.forward(self.net, self.x_scaler.transform(z)))

    @property
    def networks(self):
        return [(self.net, self.x_scaler, self.y_scaler)]


class CompositeModel(SurrogateModel):
    """Head network over the concatenation of z and the base prediction."""

    def __init__(self, base, head, x_scaler, y_scaler, local_inputs=None, local_targets=None):
        if head.dims[0] != base.n_params + base.n_obs:
            raise nn.ShapeError(
                f"head input width {head.dims[0]} != {base.n_params} + {base.n_obs}"
            )
        self.base = base
        self.head = head
        self.x_scaler = x_scaler
        self.y_scaler = y_scaler
        self.n_params = base.n_params
        self.n_obs = head.dims[-1]
        self.depth = base.depth + 1
        # high-fidelity pairs the head was trained on (for pooling/refitting)
        self.local_inputs = local_inputs
        self.local_targets = local_targets

    def predict(self, z):
        z = np.asarray(z, dtype=float)
        x = np.concatenate([z, self.base.predict(z)], axis=-1)
        return self.y_scaler.inverse(nn.forward(self.head, self.x_scaler.transform(x)))

    @property
    def networks(self):
        return self.base.networks + [(self.head, self.x_scaler, self.y_scaler)]


def predict(model, z):
    return model.predict(z)


@dataclass
class LocalBall:
    """Max-norm ball ``{z : |z - center|_inf <= radius}``."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    def sample(self, rng, size):
        """Uniform draws; componentwise uniform on the box."""
        return self.center + rng.uniform(-self.radius, self.radius, (size, len(self.center)))

    def contains(self, z):
        return bool(np.max(np.abs(np.asarray(z) - self.center)) <= self.radius)


def fit_network(inputs, targets, hidden, cfg, init_seed, zero_output=False):
    """Standardize, initialize and train; returns ``(net, x_scaler, y_scaler)``."""
    xs = nn.Standardizer.fit(inputs)
    ys = nn.Standardizer.fit(targets)
    data = nn.TrainingSet(xs.transform(inputs), ys.transform(targets))
    dims = [data.inputs.shape[1], *hidden, data.targets.shape[1]]
    net = nn.Network.initialize(dims, init_seed, zero_output)
    return nn.train(net, data, cfg), xs, ys


def build_low_fidelity(problem, prior, n_train, hidden=LOW_FIDELITY_HIDDEN, cfg=None, seed=0,
                       workers=1):
    """Train a network on ``n_train`` prior draws pushed through ``problem``.

    Costs exactly ``n_train`` high-fidelity solves. The training pairs are
    kept on the model as ``train_inputs`` / ``train_targets``.
    """
    if n_train < 2:
        raise ValueError("need at least two training points")
    cfg = cfg or nn.TrainConfig(epochs=OFFLINE_EPOCHS)
    rng = np.random.default_rng(seed)
    Z = prior.sample(rng, n_train)
    Y = problem.evaluate_many(Z, workers=workers)
    net, xs, ys = fit_network(Z, Y, hidden, cfg, int(rng.integers(2**32)))
    model = LowFidelityModel(net, xs, ys)
    model.train_inputs, model.train_targets = Z, Y
    return model


def refine(model, problem, ball, Q, head_hidden=HEAD_HIDDEN, cfg=None, rng=None,
           refit_head_only=False, pool_local=False, zero_output=False, workers=1):
    """One pass of composite multi-fidelity correction on a local ball.

    Draws ``Q`` uniform points in ``ball``, runs the high-fidelity model on
    them, and trains a fresh head on ``((z, model(z)), f_high(z))``. The
    default nests: the returned composite has ``model`` as its base.

    ``refit_head_only`` instead replaces the top head of a composite, training
    on its old local data plus the new points; ``pool_local`` keeps nesting
    but adds all earlier local data to the new head's training set.
    """
    if Q < 2:
        raise ValueError("need at least two refinement points")
    rng = np.random.default_rng(rng)
    cfg = cfg or nn.TrainConfig(epochs=ONLINE_EPOCHS)
    Z = ball.sample(rng, Q)
    Y = problem.evaluate_many(Z, workers=workers)

    base = model
    Z_all, Y_all = Z, Y
    if isinstance(model, CompositeModel) and (refit_head_only or pool_local):
        if refit_head_only:
            base = model.base
        Z_all = np.vstack([model.local_inputs, Z])
        Y_all = np.vstack([model.local_targets, Y])

    X = np.hstack([Z_all, base.predict(Z_all)])
    seeds = rng.integers(2**32, size=2)
    head_cfg = dataclasses.replace(cfg, rng_seed=int(seeds[0]))
    head, xs, ys = fit_network(X, Y_all, head_hidden, head_cfg, int(seeds[1]), zero_output)
    return CompositeModel(base, head, xs, ys, Z_all, Y_all)


# -- serialization -----------------------------------------------------------

def dump_surrogate(model):
    """Text lines: ``depth: k`` then k+1 network blocks, base first."""
    lines = [f"depth: {model.depth}"]
    for net, xs, ys in model.networks:
        lines.extend(nn.dump_network(net, xs, ys))
    return lines


def load_surrogate(lines):
    if isinstance(lines, str):
        lines = lines.splitlines()
    header = lines[0].strip()
    if not header.startswith("depth:"):
        raise ValueError(f"bad surrogate header {header!r}")
    depth = int(header.split(":")[1])
    net, xs, ys, pos = nn.load_network(lines, 1)
    model = LowFidelityModel(net, xs, ys)
    for _ in range(depth):
        head, xs, ys, pos = nn.load_network(lines, pos)
        model = CompositeModel(model, head, xs, ys)
    return model


def save_surrogate(model, path):
    with open(path, "w") as f:
        f.write("\n".join(dump_surrogate(model)) + "\n")


def read_surrogate(path):
    with open(path) as f:
        return load_surrogate(f.read())
