"""Local differential privacy primitives.

Clients hide two things per item: whether they visited it (randomized response
on the visit bit) and the gradient they computed from their rating (clipping
followed by Laplace noise).  The server un-biases the aggregate.

Privacy accounting
------------------
``epsilon`` is split into ``epsilon_y`` for the visit bit and ``epsilon_g``
for the gradient.  Randomized response with flip mass ``p = 2 / (e^eps_y + 1)``
has worst-case output ratio ``(1 - p/2) / (p/2) = e^eps_y``.  A clipped
``d``-vector has L1 sensitivity ``2 * clip_bound * d``, so Laplace noise of
scale ``2 * clip_bound * d / epsilon_g`` gives ``epsilon_g``-LDP.  One report
per item per round is sent; over ``k`` rounds sequential composition bounds
the total loss at ``k * epsilon`` (see :meth:`NoiseConfig.total_budget`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._validation import (
    check_positive,
    check_positive_int,
    check_probability,
)
from .exceptions import InvalidArgumentError


def calibrate_flip(epsilon_y):
    """Flip mass ``p`` for which randomized response is ``epsilon_y``-LDP."""
    epsilon_y = float(epsilon_y)
    if math.isnan(epsilon_y) or epsilon_y < 0:
        raise InvalidArgumentError(f"epsilon_y must be >= 0, got {epsilon_y}")
    if math.isinf(epsilon_y):
        return 0.0
    return 2.0 / (math.exp(epsilon_y) + 1.0)


@dataclass(frozen=True)
class NoiseConfig:
    """Privacy parameters for one experiment.

    ``epsilon=inf`` is the noiseless limit: no bit flips and no Laplace noise.
    ``clip_bound=inf`` disables clipping.
    """

    epsilon: float
    dim: int
    epsilon_split: float = 0.5
    clip_bound: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        check_positive(self.epsilon, "epsilon", allow_inf=True)
        check_positive_int(self.dim, "dim")
        if not 0.0 < float(self.epsilon_split) < 1.0:
            raise InvalidArgumentError(
                f"epsilon_split must lie strictly inside (0, 1), got {self.epsilon_split}"
            )
        check_positive(self.clip_bound, "clip_bound", allow_inf=True)

    @classmethod
    def noiseless(cls, dim, seed=None):
        return cls(epsilon=math.inf, dim=dim, clip_bound=math.inf, seed=seed)

    @property
    def is_noiseless(self):
        return math.isinf(self.epsilon)

    @property
    def epsilon_y(self):
        return self.epsilon * self.epsilon_split

    @property
    def epsilon_g(self):
        return self.epsilon * (1.0 - self.epsilon_split)

    @property
    def flip_prob(self):
        return calibrate_flip(self.epsilon_y)

    @property
    def laplace_scale(self):
        if self.is_noiseless:
            return 0.0
        scale = 2.0 * self.clip_bound * self.dim / self.epsilon_g
        if math.isinf(scale):
            raise InvalidArgumentError("finite epsilon needs a finite clip_bound")
        return scale

    def total_budget(self, rounds):
        """Sequential-composition bound over ``rounds`` rounds."""
        return self.epsilon * rounds


class NoisedReport(NamedTuple):
    item_index: int
    y_star: int
    g_star: np.ndarray


class ClientReports:
    """All of one client's reports for a round, one per item in item order.

    Behaves as a read-only sequence of :class:`NoisedReport`; the array views
    ``y_star`` (n,) and ``g_star`` (n, d) are what the server aggregates.
    """

    __slots__ = ("y_star", "g_star")

    def __init__(self, y_star, g_star):
        y_star = np.asarray(y_star, dtype=np.int8)
        g_star = np.asarray(g_star, dtype=float)
        if g_star.ndim != 2 or len(y_star) != len(g_star):
            raise InvalidArgumentError("y_star must be (n,) and g_star (n, d)")
        y_star.setflags(write=False)
        g_star.setflags(write=False)
        self.y_star = y_star
        self.g_star = g_star

    def __len__(self):
        return len(self.y_star)

    def __getitem__(self, j):
        if not -len(self) <= j < len(self):
            raise IndexError(j)
        j %= len(self)
        return NoisedReport(j, int(self.y_star[j]), self.g_star[j])

    def __iter__(self):
        return (self[j] for j in range(len(self)))


def randomized_response(y, p, rng):
    """Output 0 w.p. ``p/2``, 1 w.p. ``p/2``, else the input bit.

    ``y`` may be a bit or an array of bits; the output has the same shape.
    """
    p = check_probability(p)
    y = np.asarray(y)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("randomized_response expects bits")
    out = _flip(y, p, rng)
    return int(out) if out.ndim == 0 else out


def _flip(y, p, rng):
    u = rng.random(y.shape)
    out = y.astype(np.int8)
    out[u < p] = 1
    out[u < p / 2] = 0
    return out


def clip_gradient(g, delta):
    delta = check_positive(delta, "delta", allow_inf=True)
    return np.clip(np.asarray(g, dtype=float), -delta, delta)


def laplace_perturb(g, b, rng):
    """Add i.i.d. Laplace(0, ``b``) noise to every component of ``g``."""
    b = float(b)
    if not b > 0 or math.isinf(b):
        raise InvalidArgumentError(f"Laplace scale must be finite and > 0, got {b}")
    g = np.asarray(g, dtype=float)
    return g + rng.laplace(0.0, b, size=g.shape)


def local_item_gradients(items, ratings, u, V):
    """Per-item ``g_ij = -2 u_i (r_ij - u_i^T v_j)`` and visit bits for one user.

    Unvisited items get a zero gradient.  Returns ``(y, G)`` with shapes (n,)
    and (n, d).
    """
    n = V.shape[1]
    y = np.zeros(n, dtype=np.int8)
    G = np.zeros((n, len(u)))
    if len(items):
        items = np.asarray(items, dtype=np.int64)
        y[items] = 1
        resid = np.asarray(ratings, dtype=float) - u @ V[:, items]
        G[items] = -2.0 * resid[:, None] * u[None, :]
    return y, G


def client_report(user_ratings, u, V, config, rng):
    """Noised reports for every item, visited or not.

    ``user_ratings`` is ``(items, ratings)`` for one user.  The random stream is
    consumed in a fixed order: visit bits first, then gradient noise.
    """
    u = np.asarray(u, dtype=float)
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != len(u):
        raise InvalidArgumentError(f"u has d={len(u)} but V has shape {V.shape}")
    if V.shape[0] != config.dim:
        raise InvalidArgumentError(f"NoiseConfig.dim={config.dim} but factors have d={len(u)}")
    items, ratings = user_ratings
    y, G = local_item_gradients(items, ratings, u, V)
    if not math.isinf(config.clip_bound):
        np.clip(G, -config.clip_bound, config.clip_bound, out=G)
    y_star = _flip(y, config.flip_prob, rng)
    b = config.laplace_scale
    g_star = G if b == 0 else G + rng.laplace(0.0, b, size=G.shape)
    return ClientReports(y_star, g_star)


def debias_weights(y_star, p):
    """``(y* - p/2) / (1 - p)``, whose expectation is the true visit bit."""
    p = check_probability(p)
    if p >= 1.0:
        raise InvalidArgumentError("debiasing is undefined for p = 1")
    return (np.asarray(y_star, dtype=float) - p / 2.0) / (1.0 - p)


def debias_aggregate_batch(y_star, g_star, p):
    """Debiased mean over clients for every item at once.

    ``y_star`` is (clients, n) and ``g_star`` is (clients, n, d); the clients
    axis is reduced in the given order.  Returns (n, d).
    """
    y_star = np.asarray(y_star)
    g_star = np.asarray(g_star, dtype=float)
    if len(y_star) == 0:
        raise InvalidArgumentError("no reports to aggregate")
    w = debias_weights(y_star, p)
    return np.sum(w[..., None] * g_star, axis=0) / len(y_star)


def debias_aggregate(reports, p):
    """Debiased average gradient for one item from one report per client."""
    reports = list(reports)
    if not reports:
        raise InvalidArgumentError("no reports to aggregate")
    if len({r.item_index for r in reports}) != 1:
        raise InvalidArgumentError("all reports must refer to the same item")
    y = np.array([r.y_star for r in reports])
    g = np.stack([np.asarray(r.g_star, dtype=float) for r in reports])
    return debias_aggregate_batch(y[:, None], g[:, None, :], p)[0]
