"""Matrix factorization of binary location-privacy preferences.

The ratings matrix ``R`` (users x items) is approximated by ``U.T @ V`` where
``U`` is ``d x m`` and ``V`` is ``d x n``.  Training is full-batch gradient
descent on the regularized squared error over observed cells.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import (
    check_finite_matrix,
    check_nonnegative,
    check_positive,
    check_positive_int,
    check_preference_matrix,
    check_random_state,
)
from .exceptions import DivergenceError, EmptyDataError, InvalidArgumentError

NORMALIZATIONS = ("ratings", "users")


@dataclass(frozen=True, eq=False)
class PreferenceMatrix:
    """Sparse binary ratings.

    Entries are stored as three parallel arrays.  ``users[k], items[k]`` is an
    observed cell with rating ``ratings[k]``; every other cell is unobserved
    (its visit indicator is 0).
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple | None = None
    item_labels: tuple | None = None

    def __post_init__(self):
        check_positive_int(self.n_users, "n_users")
        check_positive_int(self.n_items, "n_items")
        users = np.asarray(self.users, dtype=np.int64).reshape(-1)
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        ratings = np.asarray(self.ratings, dtype=float).reshape(-1)
        if not (len(users) == len(items) == len(ratings)):
            raise InvalidArgumentError("users, items and ratings must have equal length")
        if len(users):
            if users.min() < 0 or users.max() >= self.n_users:
                raise InvalidArgumentError("user index out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise InvalidArgumentError("item index out of range")
        if not np.all((ratings == 0) | (ratings == 1)):
            raise InvalidArgumentError("ratings must be exactly 0 or 1")
        flat = users * self.n_items + items
        if len(np.unique(flat)) != len(flat):
            raise InvalidArgumentError("duplicate (user, item) entry")
        if self.user_ids is not None and len(self.user_ids) != self.n_users:
            raise InvalidArgumentError("user_ids length must equal n_users")
        if self.item_labels is not None and len(self.item_labels) != self.n_items:
            raise InvalidArgumentError("item_labels length must equal n_items")
        # canonical row-major order so dense views and iteration are stable
        order = np.argsort(flat, kind="stable")
        for name, arr in (("users", users), ("items", items), ("ratings", ratings)):
            arr = arr[order]
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_dense(cls, X, user_ids=None, item_labels=None):
        """Build from an array where NaN means unobserved."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.size == 0:
            raise InvalidArgumentError(f"expected a nonempty 2-D array, got shape {X.shape}")
        users, items = np.nonzero(~np.isnan(X))
        return cls(X.shape[0], X.shape[1], users, items, X[users, items], user_ids, item_labels)

    @classmethod
    def from_entries(cls, n_users, n_items, entries, **kwargs):
        """Build from an iterable of ``(user, item, rating)`` triples."""
        entries = list(entries)
        if entries:
            users, items, ratings = map(np.asarray, zip(*entries))
        else:
            users = items = ratings = np.zeros(0)
        return cls(n_users, n_items, users, items, ratings, **kwargs)

    @property
    def n_ratings(self):
        """Number of observed cells (``M``)."""
        return len(self.ratings)

    @property
    def shape(self):
        return (self.n_users, self.n_items)

    def to_dense(self):
        out = np.full(self.shape, np.nan)
        out[self.users, self.items] = self.ratings
        return out

    def observed_mask(self):
        """Visit indicators ``y`` as a 0/1 float matrix."""
        y = np.zeros(self.shape)
        y[self.users, self.items] = 1.0
        return y

    def rating_matrix(self):
        """Ratings with unobserved cells set to 0."""
        r = np.zeros(self.shape)
        r[self.users, self.items] = self.ratings
        return r

    def user_entries(self, i):
        sel = self.users == i
        return self.items[sel], self.ratings[sel]

    def item_entries(self, j):
        sel = self.items == j
        return self.users[sel], self.ratings[sel]

    def select(self, mask):
        """Keep only the entries where ``mask`` (aligned with the entry arrays) is true."""
        mask = np.asarray(mask, dtype=bool)
        return dataclasses.replace(
            self, users=self.users[mask], items=self.items[mask], ratings=self.ratings[mask]
        )

    def __iter__(self):
        return iter(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    def __repr__(self):
        return f"PreferenceMatrix(n_users={self.n_users}, n_items={self.n_items}, M={self.n_ratings})"


def learning_rate(gamma0, decay, t):
    """``gamma0 / (1 + decay * t)`` for round index ``t`` (0-based)."""
    return gamma0 / (1.0 + decay * t)


def project_columns(A, max_norm):
    """Scale each column of ``A`` back onto the L2 ball of radius ``max_norm``."""
    if max_norm is None:
        return A
    norms = np.linalg.norm(A, axis=0)
    scale = np.minimum(1.0, max_norm / np.maximum(norms, np.finfo(float).tiny))
    return A * scale


@dataclass(frozen=True, eq=False)
class FactorModel:
    """User and item factors plus the hyperparameters that drive training.

    ``normalization`` chooses the divisor of the data term: ``"ratings"``
    divides by the number of observed cells, ``"users"`` by the number of
    users (the divisor the federated aggregate uses).
    """

    U: np.ndarray
    V: np.ndarray
    lambda_u: float = 0.0
    lambda_v: float = 0.0
    gamma0: float = 0.1
    decay: float = 0.0
    k: int = 100
    normalization: str = "ratings"
    max_norm: float | None = None

    def __post_init__(self):
        U = np.array(self.U, dtype=float, copy=True)
        V = np.array(self.V, dtype=float, copy=True)
        if U.ndim != 2 or V.ndim != 2 or U.shape[0] != V.shape[0]:
            raise InvalidArgumentError(
                f"U and V must be d x m and d x n with equal d, got {U.shape} and {V.shape}"
            )
        check_nonnegative(self.lambda_u, "lambda_u")
        check_nonnegative(self.lambda_v, "lambda_v")
        check_nonnegative(self.gamma0, "gamma0")
        check_nonnegative(self.decay, "decay")
        check_positive_int(self.k, "k", minimum=0)
        if self.normalization not in NORMALIZATIONS:
            raise InvalidArgumentError(f"normalization must be one of {NORMALIZATIONS}")
        if self.max_norm is not None:
            check_positive(self.max_norm, "max_norm")
        U.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def d(self):
        return self.U.shape[0]

    @property
    def n_users(self):
        return self.U.shape[1]

    @property
    def n_items(self):
        return self.V.shape[1]

    def gamma(self, t):
        return learning_rate(self.gamma0, self.decay, t)

    def scores(self):
        """Dense ``U.T @ V``."""
        return self.U.T @ self.V

    def with_factors(self, U=None, V=None):
        return dataclasses.replace(
            self, U=self.U if U is None else U, V=self.V if V is None else V
        )


def init_model(m, n, d, seed=None, scale=0.1, **hyper):
    """Draw ``U`` and ``V`` i.i.d. uniform on ``[-scale, scale]``.

    The generator draws ``U`` first, then ``V``, so the result depends only on
    ``seed`` and the shapes.
    """
    m = check_positive_int(m, "m")
    n = check_positive_int(n, "n")
    d = check_positive_int(d, "d")
    scale = check_nonnegative(scale, "scale")
    rng = check_random_state(seed)
    U = rng.uniform(-scale, scale, size=(d, m))
    V = rng.uniform(-scale, scale, size=(d, n))
    return FactorModel(U, V, **hyper)


def _check_shapes(R, model):
    if R.shape != (model.n_users, model.n_items):
        raise InvalidArgumentError(
            f"matrix is {R.shape} but model factors are for {(model.n_users, model.n_items)}"
        )


def _divisor(R, normalization):
    if normalization == "ratings":
        if R.n_ratings == 0:
            raise EmptyDataError("no observed ratings")
        return R.n_ratings
    if normalization == "users":
        return R.n_users
    raise InvalidArgumentError(f"normalization must be one of {NORMALIZATIONS}")


def loss(R, model, normalization=None):
    """Regularized mean squared error over observed cells."""
    R = check_preference_matrix(R)
    _check_shapes(R, model)
    if R.n_ratings == 0:
        raise EmptyDataError("loss is undefined without observed ratings")
    c = _divisor(R, normalization or model.normalization)
    pred = np.einsum("ij,ij->j", model.U[:, R.users], model.V[:, R.items])
    data = np.sum((R.ratings - pred) ** 2) / c
    reg = model.lambda_u * np.sum(model.U**2) + model.lambda_v * np.sum(model.V**2)
    return float(data + reg)


def residuals(R, model):
    """Dense ``y * (r - U.T V)``: the residual on observed cells, 0 elsewhere."""
    y = R.observed_mask()
    return y * (R.rating_matrix() - model.U.T @ model.V)


def grad_u(R, model, i, normalization=None):
    """Data-term gradient for user ``i`` (regularization excluded)."""
    R = check_preference_matrix(R)
    _check_shapes(R, model)
    if not 0 <= i < R.n_users:
        raise InvalidArgumentError(f"user index {i} out of range [0, {R.n_users})")
    items, ratings = R.user_entries(i)
    if len(items) == 0:
        return np.zeros(model.d)
    c = _divisor(R, normalization or model.normalization)
    u = model.U[:, i]
    Vj = model.V[:, items]
    return -(2.0 / c) * Vj @ (ratings - u @ Vj)


def grad_v(R, model, j, normalization=None):
    """Data-term gradient for item ``j`` (regularization excluded)."""
    R = check_preference_matrix(R)
    _check_shapes(R, model)
    if not 0 <= j < R.n_items:
        raise InvalidArgumentError(f"item index {j} out of range [0, {R.n_items})")
    users, ratings = R.item_entries(j)
    if len(users) == 0:
        return np.zeros(model.d)
    c = _divisor(R, normalization or model.normalization)
    v = model.V[:, j]
    Ui = model.U[:, users]
    return -(2.0 / c) * Ui @ (ratings - v @ Ui)


def _check_finite(A, kind):
    bad = ~np.all(np.isfinite(A), axis=0)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"non-finite {kind} factor at index {idx}", index=(kind, idx))


def _gd_round(y, r, c, model, t):
    gamma = model.gamma(t)
    U, V = model.U, model.V

    E = y * (r - U.T @ V)
    gU = -(2.0 / c) * (V @ E.T)
    U1 = project_columns(U - gamma * (gU + 2.0 * model.lambda_u * U), model.max_norm)
    _check_finite(U1, "user")

    E = y * (r - U1.T @ V)
    gV = -(2.0 / c) * (U1 @ E)
    V1 = project_columns(V - gamma * (gV + 2.0 * model.lambda_v * V), model.max_norm)
    _check_finite(V1, "item")
    return model.with_factors(U1, V1)


def sgd_round(R, model, t):
    """One full-batch round: every ``u_i`` from the round-start model, then every ``v_j``.

    Item gradients are taken at the updated ``U`` so that the centralized round
    matches the federated protocol in which clients report against their fresh
    local factor.
    """
    R = check_preference_matrix(R)
    _check_shapes(R, model)
    if not 0 <= t < model.k:
        raise InvalidArgumentError(f"round index {t} outside schedule of {model.k} rounds")
    c = _divisor(R, model.normalization)
    return _gd_round(R.observed_mask(), R.rating_matrix(), c, model, t)


def fit_gd(R, model, callback=None):
    """Run ``model.k`` rounds of :func:`sgd_round`; ``callback(t, model)`` after each."""
    R = check_preference_matrix(R)
    _check_shapes(R, model)
    c = _divisor(R, model.normalization)
    y, r = R.observed_mask(), R.rating_matrix()
    for t in range(model.k):
        model = _gd_round(y, r, c, model, t)
        if callback is not None:
            callback(t, model)
    return model


def predict(model, i, j):
    if not (0 <= i < model.n_users and 0 <= j < model.n_items):
        raise InvalidArgumentError(f"index ({i}, {j}) out of range")
    return float(model.U[:, i] @ model.V[:, j])


def binarize(predictions):
    """Threshold at the mean of all entries; ties go to 1 (Positive)."""
    predictions = check_finite_matrix(predictions, "predictions")
    theta = predictions.mean()
    return (predictions >= theta).astype(np.int8)


class MatrixFactorization(BaseEstimator):
    """Non-private matrix factorization estimator.

    Parameters
    ----------
    n_components : int
        Latent dimension ``d``.
    lambda_u, lambda_v : float
        L2 penalties on user and item factors.
    gamma0, decay : float
        Learning-rate schedule ``gamma0 / (1 + decay * t)``.
    n_rounds : int
        Number of full-batch rounds ``k``.
    init_scale : float
        Half-width of the uniform initialization.
    normalization : {"ratings", "users"}
        Divisor of the squared-error term.
    max_norm : float or None
        If set, every factor column is projected onto this L2 ball after its update.
    random_state : int, SeedSequence or None
        Seed for the initialization.

    Attributes
    ----------
    model_ : FactorModel
    loss_curve_ : list of float
        Training loss after each round.
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
        normalization="ratings",
        max_norm=None,
        random_state=None,
    ):
        self.n_components = n_components
        self.lambda_u = lambda_u
        self.lambda_v = lambda_v
        self.gamma0 = gamma0
        self.decay = decay
        self.n_rounds = n_rounds
        self.init_scale = init_scale
        self.normalization = normalization
        self.max_norm = max_norm
        self.random_state = random_state

    def _seeds(self):
        # child 0 draws the factors, child 1 is reserved for client noise
        ss = self.random_state
        if not isinstance(ss, np.random.SeedSequence):
            ss = np.random.SeedSequence(ss)
        return ss.spawn(2)

    def _initial_model(self, R, init_seed):
        return init_model(
            R.n_users,
            R.n_items,
            self.n_components,
            seed=init_seed,
            scale=self.init_scale,
            lambda_u=self.lambda_u,
            lambda_v=self.lambda_v,
            gamma0=self.gamma0,
            decay=self.decay,
            k=self.n_rounds,
            normalization=self.normalization,
            max_norm=self.max_norm,
        )

    def fit(self, X, y=None):
        R = check_preference_matrix(X)
        if R.n_ratings == 0:
            raise EmptyDataError("cannot fit without observed ratings")
        init_seed, _ = self._seeds()
        model = self._initial_model(R, init_seed)
        self.loss_curve_ = []
        self.model_ = fit_gd(R, model, lambda t, m: self.loss_curve_.append(loss(R, m)))
        self.n_users_, self.n_items_ = R.shape
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def decision_function(self, X=None):
        """Real-valued scores ``U.T V`` for every (user, item) cell."""
        self._check_fitted()
        if X is not None:
            R = check_preference_matrix(X)
            if R.shape != (self.n_users_, self.n_items_):
                raise InvalidArgumentError("X must have the shape seen during fit")
        return self.model_.scores()

    def predict(self, X=None):
        """Binary preferences, thresholded at the mean score."""
        return binarize(self.decision_function(X))

    def score(self, X, y=None):
        """Fraction of observed cells of ``X`` predicted correctly."""
        R = check_preference_matrix(X)
        pred = self.predict(R)
        return float(np.mean(pred[R.users, R.items] == R.ratings))
