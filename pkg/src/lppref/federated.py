"""Simulated client/server training under local differential privacy.

Each round the server broadcasts the item factors, every client updates its
own user factor from its clean data and uploads one noised report per item,
and the server applies the debiased aggregate to the item factors.  User
factors never leave the clients; the server only ever sees
:class:`~lppref.ldp.ClientReports`.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_preference_matrix
from .exceptions import DivergenceError, EmptyDataError, InvalidArgumentError
from .ldp import NoiseConfig, client_report, debias_aggregate_batch
from .mf import FactorModel, MatrixFactorization, loss, project_columns

logger = logging.getLogger(__name__)

DIAGNOSTIC_FIELDS = ("round", "mean_aggregate_norm", "loss_if_noiseless_mode")


@dataclass
class ClientState:
    user_index: int
    items: np.ndarray
    ratings: np.ndarray
    factor: np.ndarray
    rng: np.random.Generator


@dataclass
class ServerState:
    V: np.ndarray
    round: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class Snapshot:
    """What every client receives at the start of a round.

    Besides the item factors the server publishes the round's learning rate
    and the user-side hyperparameters, so that clients can update locally.
    """

    V: np.ndarray
    n_users: int
    round: int
    gamma: float
    lambda_u: float = 0.0
    max_norm: float | None = None
    U: np.ndarray | None = None


def _frozen_copy(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


def broadcast(server, n_users, gamma, lambda_u=0.0, max_norm=None, U=None):
    """Immutable snapshot of the server model for the coming round.

    ``U`` is only passed in noiseless comparison runs.
    """
    return Snapshot(
        V=_frozen_copy(server.V),
        n_users=int(n_users),
        round=server.round,
        gamma=float(gamma),
        lambda_u=float(lambda_u),
        max_norm=max_norm,
        U=None if U is None else _frozen_copy(U),
    )


def client_round(client, snapshot, config):
    """Local user-factor step followed by noised item reports.

    The local step is the user update of full-batch MF with the data term
    divided by the total number of users.  Reports are computed against the
    updated factor.
    """
    u = np.asarray(client.factor, dtype=float)
    V = snapshot.V
    if V.shape[0] != len(u):
        raise InvalidArgumentError(
            f"client {client.user_index} has d={len(u)} but snapshot has d={V.shape[0]}"
        )
    items, ratings = client.items, client.ratings
    if len(items):
        Vj = V[:, items]
        grad = -(2.0 / snapshot.n_users) * (Vj @ (ratings - u @ Vj))
    else:
        grad = np.zeros_like(u)
    u_new = u - snapshot.gamma * (grad + 2.0 * snapshot.lambda_u * u)
    if snapshot.max_norm is not None:
        norm = math.sqrt(u_new @ u_new)
        if norm > snapshot.max_norm:
            u_new *= snapshot.max_norm / norm
    if not np.isfinite(u_new).all():
        raise DivergenceError(
            f"non-finite user factor at index {client.user_index}", index=("user", client.user_index)
        )
    return u_new, client_report((items, ratings), u_new, V, config, client.rng)


def server_round(server, reports, config, gamma, lambda_v=0.0, max_norm=None):
    """Apply the debiased aggregate of ``reports`` (one entry per client, in client order)."""
    if not reports:
        raise EmptyDataError("server received no reports")
    y_star = np.stack([r.y_star for r in reports])
    g_star = np.stack([r.g_star for r in reports])
    if g_star.shape[1:] != server.V.T.shape:
        raise InvalidArgumentError(
            f"reports have shape {g_star.shape[1:]} but V is {server.V.shape}"
        )
    agg = debias_aggregate_batch(y_star, g_star, config.flip_prob).T
    V = server.V
    V1 = project_columns(V - gamma * (agg + 2.0 * lambda_v * V), max_norm)
    bad = ~np.all(np.isfinite(V1), axis=0)
    if bad.any():
        j = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"non-finite item factor at index {j}", index=("item", j))
    norm = float(np.mean(np.linalg.norm(agg, axis=0)))
    return ServerState(V=V1, round=server.round + 1, history=server.history + [norm])


@dataclass
class TrainResult:
    model: FactorModel
    diagnostics: list


def make_clients(R, U, seed):
    """One client per user, each with an independent stream spawned from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(R.n_users)
    dense_order = np.argsort(R.users, kind="stable")
    users, items, ratings = R.users[dense_order], R.items[dense_order], R.ratings[dense_order]
    bounds = np.searchsorted(users, np.arange(R.n_users + 1))
    return [
        ClientState(
            user_index=i,
            items=items[bounds[i] : bounds[i + 1]].copy(),
            ratings=ratings[bounds[i] : bounds[i + 1]].copy(),
            factor=np.array(U[:, i], dtype=float),
            rng=np.random.default_rng(streams[i]),
        )
        for i in range(R.n_users)
    ]


def train(R, model, config, seed=None, callback=None):
    """Run ``model.k`` federated rounds starting from ``model``.

    Client noise streams derive from ``seed`` (falling back to
    ``config.seed``).  The returned model carries the server's ``V`` and the
    client factors gathered out-of-band for evaluation.
    """
    R = check_preference_matrix(R)
    if R.shape != (model.n_users, model.n_items):
        raise InvalidArgumentError("matrix and model shapes differ")
    if config.dim != model.d:
        raise InvalidArgumentError(f"NoiseConfig.dim={config.dim} but model has d={model.d}")
    model = dataclasses.replace(model, normalization="users")
    clients = make_clients(R, model.U, config.seed if seed is None else seed)
    server = ServerState(V=np.array(model.V, dtype=float))
    diagnostics = []
    for t in range(model.k):
        gamma = model.gamma(t)
        snapshot = broadcast(server, R.n_users, gamma, model.lambda_u, model.max_norm)
        reports = []
        for client in clients:
            client.factor, rep = client_round(client, snapshot, config)
            reports.append(rep)
        server = server_round(server, reports, config, gamma, model.lambda_v, model.max_norm)
        current = model.with_factors(np.column_stack([c.factor for c in clients]), server.V)
        row = {
            "round": server.round,
            "mean_aggregate_norm": server.history[-1],
            "loss_if_noiseless_mode": loss(R, current) if config.is_noiseless else None,
        }
        diagnostics.append(row)
        if callback is not None:
            callback(t, current)
    final = model.with_factors(np.column_stack([c.factor for c in clients]), server.V)
    return TrainResult(final, diagnostics)


def write_diagnostics(path, diagnostics):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DIAGNOSTIC_FIELDS)
        writer.writeheader()
        for row in diagnostics:
            writer.writerow({k: "" if row.get(k) is None else row[k] for k in DIAGNOSTIC_FIELDS})


class LDPMatrixFactorization(MatrixFactorization):
    """Matrix factorization trained by the simulated LDP federation.

    Takes every parameter of :class:`MatrixFactorization` plus the privacy
    budget.  ``epsilon=float("inf")`` together with ``clip_bound=float("inf")``
    reproduces the centralized estimator with ``normalization="users"``.

    Attributes
    ----------
    diagnostics_ : list of dict
        Per-round aggregate norms (and clean loss in the noiseless limit).
    loss_curve_ : list of float
        Clean training loss after each round, computed out-of-band.
    """

    def __init__(
        self,
        n_components=3,
        lambda_u=1e-3,
        lambda_v=1e-3,
        gamma0=1.0,
        decay=0.0,
        n_rounds=200,
        init_scale=0.1,
        normalization="users",
        max_norm=None,
        random_state=None,
        epsilon=0.01,
        epsilon_split=0.5,
        clip_bound=1.0,
    ):
        super().__init__(
            n_components=n_components,
            lambda_u=lambda_u,
            lambda_v=lambda_v,
            gamma0=gamma0,
            decay=decay,
            n_rounds=n_rounds,
            init_scale=init_scale,
            normalization=normalization,
            max_norm=max_norm,
            random_state=random_state,
        )
        self.epsilon = epsilon
        self.epsilon_split = epsilon_split
        self.clip_bound = clip_bound

    def noise_config(self):
        return NoiseConfig(
            epsilon=self.epsilon,
            dim=self.n_components,
            epsilon_split=self.epsilon_split,
            clip_bound=self.clip_bound,
        )

    def fit(self, X, y=None):
        R = check_preference_matrix(X)
        if self.normalization != "users":
            raise InvalidArgumentError("the federated aggregate only supports normalization='users'")
        init_seed, noise_seed = self._seeds()
        model = self._initial_model(R, init_seed)
        self.loss_curve_ = []
        result = train(
            R,
            model,
            self.noise_config(),
            seed=noise_seed,
            callback=lambda t, m: self.loss_curve_.append(loss(R, m)),
        )
        self.model_ = result.model
        self.diagnostics_ = result.diagnostics
        self.n_users_, self.n_items_ = R.shape
        return self
