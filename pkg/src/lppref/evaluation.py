"""Cross-validated evaluation of plain and LDP matrix factorization.

One repetition draws a fresh 10-fold partition of the users.  For each fold
the test users lose ``unknown_rate`` of their ratings, a model is trained on
everything else, the score matrix is binarized at its mean, and the hidden
cells are tallied.  Counts are pooled over the folds of a repetition.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from ._validation import check_granularity, check_positive_int, check_random_state, check_unknown_rate
from .dataset import Corpus
from .exceptions import EmptyDataError, InvalidArgumentError
from .federated import LDPMatrixFactorization
from .mf import MatrixFactorization, PreferenceMatrix, binarize

logger = logging.getLogger(__name__)

METRICS = ("fpr", "recall", "reconstruction_rate")
AXES = ("time", "epsilon", "unknown_rate")
MODES = ("plain", "ldp")
CURVE_FIELDS = (
    "axis_value",
    "fpr_plain",
    "fpr_ldp",
    "recall_plain",
    "recall_ldp",
    "recon_plain",
    "recon_ldp",
    "n_excluded",
)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidArgumentError("confusion counts must be nonnegative")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


def confusion(true_bits, predicted_bits):
    t = np.asarray(true_bits).astype(bool).ravel()
    p = np.asarray(predicted_bits).astype(bool).ravel()
    if t.shape != p.shape:
        raise InvalidArgumentError("true and predicted bits differ in length")
    return ConfusionCounts(
        tp=int(np.sum(t & p)),
        fp=int(np.sum(~t & p)),
        tn=int(np.sum(~t & ~p)),
        fn=int(np.sum(t & ~p)),
    )


# Undefined metrics come back as None, never as 0.
def fpr(c):
    denom = c.tn + c.fp
    return None if denom == 0 else c.fp / denom


def recall(c):
    denom = c.tp + c.fn
    return None if denom == 0 else c.tp / denom


def reconstruction_rate(c):
    return None if c.total == 0 else (c.tp + c.tn) / c.total


def kfold_split(users, folds=10, rng=None):
    """Partition ``users`` (a count or a sequence) into ``folds`` test folds."""
    users = np.arange(users) if np.isscalar(users) else np.asarray(users)
    folds = check_positive_int(folds, "folds", minimum=2)
    if len(users) < folds:
        raise InvalidArgumentError(f"{len(users)} users cannot fill {folds} folds")
    rng = check_random_state(rng)
    parts = np.array_split(users[rng.permutation(len(users))], folds)
    return [
        (np.sort(np.concatenate(parts[:f] + parts[f + 1 :])), np.sort(parts[f]))
        for f in range(folds)
    ]


def n_hidden(n_ratings, unknown_rate):
    # the epsilon guards against 0.7 * 10 == 7.000000000000001
    return min(n_ratings, math.ceil(unknown_rate * n_ratings - 1e-9))


def mask_unknown(ratings, unknown_rate, rng=None):
    """Split the positions ``0..len(ratings)-1`` into visible and hidden.

    Exactly ``ceil(unknown_rate * len(ratings))`` positions are hidden,
    chosen uniformly.
    """
    unknown_rate = check_unknown_rate(unknown_rate)
    if unknown_rate == 1.0:
        warnings.warn("unknown_rate=1 hides every rating of the test users", stacklevel=2)
    n = len(ratings)
    rng = check_random_state(rng)
    hidden = np.sort(rng.choice(n, size=n_hidden(n, unknown_rate), replace=False))
    visible = np.setdiff1d(np.arange(n), hidden)
    return visible, hidden


@dataclass(frozen=True)
class ExperimentParams:
    """Everything one evaluation point depends on.

    Model defaults suit the synthetic corpora at desk scale; the
    ``normalization="users"`` default keeps the plain and LDP runs on the
    same objective so that they can be compared cell for cell.
    """

    time: int = 6
    epsilon: float = 0.01
    unknown_rate: float = 0.1
    mode: str = "plain"
    folds: int = 10
    n_components: int = 3
    lambda_u: float = 1e-3
    lambda_v: float = 1e-3
    gamma0: float = 1.0
    decay: float = 0.0
    n_rounds: int = 200
    init_scale: float = 0.1
    normalization: str = "users"
    max_norm: float | None = 1.0
    epsilon_split: float = 0.5
    clip_bound: float = 1.0
    score: str = "masked"

    def __post_init__(self):
        check_granularity(self.time)
        if not self.epsilon > 0:
            raise InvalidArgumentError(f"epsilon must be > 0, got {self.epsilon}")
        check_unknown_rate(self.unknown_rate)
        if self.mode not in MODES:
            raise InvalidArgumentError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.score not in ("masked", "full"):
            raise InvalidArgumentError("score must be 'masked' or 'full'")

    def estimator(self, random_state=None):
        common = dict(
            n_components=self.n_components,
            lambda_u=self.lambda_u,
            lambda_v=self.lambda_v,
            gamma0=self.gamma0,
            decay=self.decay,
            n_rounds=self.n_rounds,
            init_scale=self.init_scale,
            normalization=self.normalization,
            max_norm=self.max_norm,
            random_state=random_state,
        )
        if self.mode == "plain":
            return MatrixFactorization(**common)
        return LDPMatrixFactorization(
            epsilon=self.epsilon,
            epsilon_split=self.epsilon_split,
            clip_bound=self.clip_bound,
            **common,
        )

    def coordinates(self):
        return {"time": self.time, "epsilon": self.epsilon, "unknown_rate": self.unknown_rate}


@dataclass
class EvalReport:
    coordinates: dict
    mode: str
    repetitions: int
    raw: dict = field(default_factory=dict)
    counts: list = field(default_factory=list)

    def _defined(self, metric):
        return [v for v in self.raw[metric] if v is not None]

    def mean(self, metric):
        vals = self._defined(metric)
        return float(np.mean(vals)) if vals else None

    def sem(self, metric):
        vals = self._defined(metric)
        if len(vals) < 2:
            return None
        return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))

    def n_excluded(self, metric=None):
        metrics = METRICS if metric is None else (metric,)
        return sum(self.repetitions - len(self._defined(m)) for m in metrics)

    @property
    def fpr(self):
        return self.mean("fpr")

    @property
    def recall(self):
        return self.mean("recall")

    @property
    def reconstruction_rate(self):
        return self.mean("reconstruction_rate")


def as_matrix(dataset, time, seed):
    if isinstance(dataset, PreferenceMatrix):
        return dataset
    if isinstance(dataset, Corpus):
        return dataset.to_matrix(time, seed=seed)
    raise InvalidArgumentError(f"expected a PreferenceMatrix or Corpus, got {type(dataset).__name__}")


def evaluate_fold(R, train_users, test_users, params, rng, model_seed):
    """Train on one fold and return the confusion counts for its scored cells."""
    hidden = np.zeros(R.n_ratings, dtype=bool)
    for i in test_users:
        pos = np.flatnonzero(R.users == i)
        if len(pos) == 0:
            continue
        _, hid = mask_unknown(R.ratings[pos], params.unknown_rate, rng)
        hidden[pos[hid]] = True
    train = R.select(~hidden)
    if train.n_ratings == 0:
        raise EmptyDataError("no training ratings left after masking")
    est = params.estimator(random_state=model_seed).fit(train)
    pred = binarize(est.decision_function())
    scored = hidden if params.score == "masked" else np.ones(R.n_ratings, dtype=bool)
    return confusion(R.ratings[scored], pred[R.users[scored], R.items[scored]])


def run_repetition(R, params, seed):
    """One full cross-validation pass; returns pooled counts."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    split_seed, mask_seed, model_seed = ss.spawn(3)
    splits = kfold_split(R.n_users, params.folds, np.random.default_rng(split_seed))
    mask_rng = np.random.default_rng(mask_seed)
    model_seeds = model_seed.spawn(len(splits))
    total = ConfusionCounts()
    for (train_users, test_users), ms in zip(splits, model_seeds):
        total = total + evaluate_fold(R, train_users, test_users, params, mask_rng, ms)
    return total


def _repetition_seeds(seed, repetitions):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    data_seed, rep_root = ss.spawn(2)
    return data_seed, rep_root.spawn(repetitions)


def run_experiment(dataset, params, repetitions=100, seed=None, n_jobs=1):
    """Evaluate ``params`` over ``repetitions`` independent cross-validations.

    The splits, masks and initializations depend on ``seed`` only, never on
    ``params.mode``, so a plain and an LDP run with the same seed are paired.
    ``dataset`` is a :class:`PreferenceMatrix` or a :class:`Corpus`; a corpus
    is joined at ``params.time``.
    """
    repetitions = check_positive_int(repetitions, "repetitions")
    data_seed, rep_seeds = _repetition_seeds(seed, repetitions)
    R = as_matrix(dataset, params.time, data_seed)
    if R.n_ratings == 0:
        raise EmptyDataError("dataset has no observed ratings")
    if n_jobs == 1:
        counts = [run_repetition(R, params, s) for s in rep_seeds]
    else:
        counts = Parallel(n_jobs=n_jobs)(delayed(run_repetition)(R, params, s) for s in rep_seeds)
    raw = {
        "fpr": [fpr(c) for c in counts],
        "recall": [recall(c) for c in counts],
        "reconstruction_rate": [reconstruction_rate(c) for c in counts],
    }
    report = EvalReport(params.coordinates(), params.mode, repetitions, raw, counts)
    for m in METRICS:
        if report.n_excluded(m):
            logger.info("%s undefined in %d of %d repetitions", m, report.n_excluded(m), repetitions)
    return report


def sweep(dataset, axis, values, fixed_params=None, repetitions=100, seed=None, n_jobs=1):
    """One :func:`run_experiment` per value of ``axis``, all with the same seed."""
    if axis not in AXES:
        raise InvalidArgumentError(f"axis must be one of {AXES}, got {axis!r}")
    fixed_params = fixed_params or ExperimentParams()
    return [
        run_experiment(
            dataset,
            dataclasses.replace(fixed_params, **{axis: v}),
            repetitions=repetitions,
            seed=seed,
            n_jobs=n_jobs,
        )
        for v in values
    ]


def _fmt(x):
    return "" if x is None else f"{x:.6g}"


def curve_rows(axis, plain_reports, ldp_reports):
    """Pair plain and LDP reports by position into metric-curve rows."""
    if len(plain_reports) != len(ldp_reports):
        raise InvalidArgumentError("plain and ldp sweeps must have the same length")
    rows = []
    for p, q in zip(plain_reports, ldp_reports):
        if p.coordinates[axis] != q.coordinates[axis]:
            raise InvalidArgumentError("plain and ldp sweeps are not aligned")
        rows.append(
            {
                "axis_value": p.coordinates[axis],
                "fpr_plain": p.fpr,
                "fpr_ldp": q.fpr,
                "recall_plain": p.recall,
                "recall_ldp": q.recall,
                "recon_plain": p.reconstruction_rate,
                "recon_ldp": q.reconstruction_rate,
                "n_excluded": p.n_excluded() + q.n_excluded(),
            }
        )
    return rows


def write_curve_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row[k] if k == "n_excluded" else _fmt(row[k]) for k in CURVE_FIELDS})


def read_curve_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_FIELDS:
            raise InvalidArgumentError(f"{path} is not a metric-curve file")
        return list(reader)


def format_table(rows, title=None):
    """Fixed-width text table; cells are shown exactly as given."""
    rows = [{k: ("" if row[k] is None else str(row[k])) for k in CURVE_FIELDS} for row in rows]
    widths = {k: max([len(k)] + [len(r[k]) for r in rows]) for k in CURVE_FIELDS}
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(k.rjust(widths[k]) for k in CURVE_FIELDS))
    lines.append("  ".join("-" * widths[k] for k in CURVE_FIELDS))
    for r in rows:
        lines.append("  ".join(r[k].rjust(widths[k]) for k in CURVE_FIELDS))
    return "\n".join(lines)
