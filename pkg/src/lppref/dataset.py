"""Building the (time-slot x category) preference matrix.

Two corpora are joined.  A trajectory corpus of check-ins says *where and
when* users went; a preference corpus says whether its (different) users
were willing to disclose a visit at a given time and category.  Trajectory
users are paired with sets of preference users whose combined ratings cover
every item, and each visited item inherits the set's rating.

Item order is slot-major: ``slot0`` for every category in
:data:`UNIFIED_CATEGORIES` order, then ``slot1``, and so on.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from ._validation import check_granularity, check_positive_int, check_random_state
from .exceptions import CategoryMappingError, CoverageError, EmptyDataError, InvalidArgumentError
from .mf import PreferenceMatrix

UNIFIED_CATEGORIES = ("Food and Drink", "Leisure", "Retail", "Residential", "Academic", "Library")
SOURCE_CATEGORIES = ("Community", "Entertainment", "Food", "Nightlife", "Outdoors", "Shopping", "Travel")

_DIRECT = {
    "Entertainment": "Leisure",
    "Food": "Food and Drink",
    "Nightlife": "Food and Drink",
    "Outdoors": "Leisure",
    "Shopping": "Retail",
    "Travel": "Leisure",
}

CHECKIN_FIELDS = ("user_id", "timestamp", "place_id", "category", "subcategory")
PREF_FIELDS = ("user_id", "timestamp", "place_id", "category", "rating")
UNOBSERVED = "·"


@dataclass(frozen=True)
class CheckinRecord:
    user_id: str
    timestamp: datetime
    place_id: str
    category: str
    subcategory: str | None = None

    def __post_init__(self):
        if not self.category:
            raise InvalidArgumentError(f"check-in of {self.user_id} has an empty category")


@dataclass(frozen=True)
class PreferenceRecord:
    user_id: str
    timestamp: datetime
    place_id: str
    category: str
    rating: int

    def __post_init__(self):
        if self.category not in UNIFIED_CATEGORIES:
            raise CategoryMappingError(
                f"preference category {self.category!r} is not one of {UNIFIED_CATEGORIES}"
            )
        if self.rating not in (0, 1):
            raise InvalidArgumentError(f"rating must be 0 or 1, got {self.rating!r}")


@dataclass(frozen=True, order=True)
class ItemKey:
    slot_index: int
    category: str
    time_granularity: int

    def __post_init__(self):
        check_granularity(self.time_granularity)
        if not 0 <= self.slot_index < 24 // self.time_granularity:
            raise InvalidArgumentError(
                f"slot {self.slot_index} out of range for {self.time_granularity}-hour slots"
            )
        if self.category not in UNIFIED_CATEGORIES:
            raise CategoryMappingError(f"unknown unified category {self.category!r}")

    @property
    def label(self):
        return f"slot{self.slot_index}:{self.category}"


@dataclass(frozen=True)
class UserSet:
    """Preference users whose combined ratings cover every item.

    ``profile`` maps each item to the rating of the first member (in member
    order) who rated it.
    """

    member_user_ids: tuple
    profile: dict

    @property
    def covered_items(self):
        return frozenset(self.profile)


# --- individual steps -------------------------------------------------------


def filter_trajectory(records):
    """Keep check-ins at places visited by at least two distinct users."""
    records = list(records)
    visitors = defaultdict(set)
    for r in records:
        visitors[r.place_id].add(r.user_id)
    return [r for r in records if len(visitors[r.place_id]) >= 2]


def slotify(timestamp, time_granularity):
    """Index of the ``time_granularity``-hour slot of the day containing ``timestamp``."""
    g = check_granularity(time_granularity)
    return timestamp.hour // g


def unify_category(category, subcategory=None):
    """Map a trajectory-corpus category onto the preference-corpus vocabulary."""
    if category == "Community":
        if subcategory == "Home":
            return "Residential"
        if subcategory == "Library":
            return "Library"
        return "Academic"
    try:
        return _DIRECT[category]
    except KeyError:
        raise CategoryMappingError(
            f"cannot map category {category!r}; expected one of {SOURCE_CATEGORIES}"
        ) from None


def build_items(time_granularity):
    """Every (slot, category) item for the granularity, slot-major."""
    g = check_granularity(time_granularity)
    return [ItemKey(s, c, g) for s in range(24 // g) for c in UNIFIED_CATEGORIES]


def item_of(timestamp, category, time_granularity):
    return ItemKey(slotify(timestamp, time_granularity), category, time_granularity)


def preference_profiles(records, time_granularity):
    """Per preference user, the rating of every item they rated.

    A user with several records for one item keeps the most recent one.
    """
    latest = {}
    for order, r in enumerate(records):
        key = (r.user_id, item_of(r.timestamp, r.category, time_granularity))
        stamp = (r.timestamp, order)
        if key not in latest or stamp > latest[key][0]:
            latest[key] = (stamp, r.rating)
    profiles = defaultdict(dict)
    for (user, item), (_, rating) in latest.items():
        profiles[user][item] = rating
    return {u: dict(sorted(p.items())) for u, p in sorted(profiles.items())}


def missing_items(profiles, items):
    rated = set()
    for p in profiles.values():
        rated.update(p)
    return [it for it in items if it not in rated]


def build_user_sets(preference_users, items, rng, n_sets=1):
    """Draw ``n_sets`` covering user sets.

    For each set the whole pool is shuffled afresh and users are added in that
    order until the set covers ``items``.  ``preference_users`` maps user id
    to its item -> rating profile.
    """
    n_sets = check_positive_int(n_sets, "n_sets")
    items = list(items)
    missing = missing_items(preference_users, items)
    if missing:
        raise CoverageError([it.label for it in missing])
    rng = check_random_state(rng)
    pool = sorted(preference_users)
    needed = set(items)
    sets = []
    for _ in range(n_sets):
        members, profile = [], {}
        for idx in rng.permutation(len(pool)):
            user = pool[idx]
            members.append(user)
            for item, rating in preference_users[user].items():
                if item in needed:
                    profile.setdefault(item, rating)
            if len(profile) == len(needed):
                break
        sets.append(UserSet(tuple(members), {it: profile[it] for it in items}))
    return sets


def trajectory_visits(checkins, time_granularity):
    """Per trajectory user, the set of items they visited."""
    visits = defaultdict(set)
    for r in checkins:
        category = unify_category(r.category, r.subcategory)
        visits[r.user_id].add(item_of(r.timestamp, category, time_granularity))
    return visits


def merge(trajectory_users, user_sets, rng, items=None):
    """Assign each trajectory user a random user set and read off their ratings.

    ``trajectory_users`` maps user id to the items they visited (possibly
    none).  Only visited items become observed cells.
    """
    if not user_sets:
        raise InvalidArgumentError("merge needs at least one user set")
    if items is None:
        items = list(user_sets[0].profile)
    items = list(items)
    index = {it: j for j, it in enumerate(items)}
    user_ids = sorted(trajectory_users)
    if not user_ids:
        raise EmptyDataError("no trajectory users")
    rng = check_random_state(rng)
    choice = rng.integers(0, len(user_sets), size=len(user_ids))
    entries = []
    for i, user in enumerate(user_ids):
        profile = user_sets[choice[i]].profile
        for item in sorted(trajectory_users[user]):
            entries.append((i, index[item], profile[item]))
    return PreferenceMatrix.from_entries(
        len(user_ids),
        len(items),
        entries,
        user_ids=tuple(user_ids),
        item_labels=tuple(it.label for it in items),
    )


@dataclass(frozen=True)
class Corpus:
    """A trajectory corpus and a preference corpus, not yet joined."""

    checkins: tuple
    prefs: tuple

    def to_matrix(self, time_granularity, seed=None, n_sets=None):
        return build_preference_matrix(self.checkins, self.prefs, time_granularity, seed, n_sets)


def build_preference_matrix(checkins, prefs, time_granularity, seed=None, n_sets=None):
    """Run the whole join: filter, unify, slot, cover, merge.

    ``n_sets`` defaults to the number of preference users.  Trajectory users
    whose check-ins are all filtered out keep an empty row.
    """
    g = check_granularity(time_granularity)
    checkins = list(checkins)
    if not checkins:
        raise EmptyDataError("no check-ins")
    rng = check_random_state(seed)
    items = build_items(g)
    kept = filter_trajectory(checkins)
    visits = trajectory_visits(kept, g)
    trajectory_users = {r.user_id: visits.get(r.user_id, set()) for r in checkins}
    profiles = preference_profiles(prefs, g)
    if not profiles:
        raise EmptyDataError("no preference records")
    sets = build_user_sets(profiles, items, rng, n_sets or len(profiles))
    return merge(trajectory_users, sets, rng, items)


# --- CSV ---------------------------------------------------------------------


def _parse_time(text, where):
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        raise InvalidArgumentError(f"{where}: unparseable timestamp {text!r}") from None


def read_checkins(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, CHECKIN_FIELDS, path)
        for n, row in enumerate(reader, start=2):
            out.append(
                CheckinRecord(
                    row["user_id"],
                    _parse_time(row["timestamp"], f"{path}:{n}"),
                    row["place_id"],
                    row["category"],
                    row["subcategory"] or None,
                )
            )
    return out


def read_prefs(path):
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, PREF_FIELDS, path)
        for n, row in enumerate(reader, start=2):
            if row["rating"] not in ("0", "1"):
                raise InvalidArgumentError(f"{path}:{n}: rating must be 0 or 1, got {row['rating']!r}")
            out.append(
                PreferenceRecord(
                    row["user_id"],
                    _parse_time(row["timestamp"], f"{path}:{n}"),
                    row["place_id"],
                    row["category"],
                    int(row["rating"]),
                )
            )
    return out


def _check_header(found, expected, path):
    if found is None or tuple(found) != expected:
        raise InvalidArgumentError(f"{path}: expected header {','.join(expected)}, got {found}")


def write_checkins(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHECKIN_FIELDS)
        for r in records:
            w.writerow([r.user_id, r.timestamp.isoformat(), r.place_id, r.category, r.subcategory or ""])


def write_prefs(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREF_FIELDS)
        for r in records:
            w.writerow([r.user_id, r.timestamp.isoformat(), r.place_id, r.category, r.rating])


def write_matrix(path, R):
    """One row per user; cells are 0, 1 or a middle dot for unobserved."""
    labels = R.item_labels or tuple(f"item{j}" for j in range(R.n_items))
    users = R.user_ids or tuple(str(i) for i in range(R.n_users))
    dense = R.to_dense()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("user_id",) + tuple(labels))
        for uid, row in zip(users, dense):
            w.writerow([uid] + [UNOBSERVED if math.isnan(x) else str(int(x)) for x in row])


def read_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "user_id":
        raise InvalidArgumentError(f"{path}: missing header row")
    labels = tuple(rows[0][1:])
    users = tuple(r[0] for r in rows[1:])
    dense = np.array(
        [[np.nan if c == UNOBSERVED else float(c) for c in r[1:]] for r in rows[1:]], dtype=float
    ).reshape(len(users), len(labels))
    return PreferenceMatrix.from_dense(dense, user_ids=users, item_labels=labels)


# --- synthetic corpora -------------------------------------------------------

# unified category -> trajectory-corpus (category, subcategory) choices
_SOURCE_FOR = {
    "Food and Drink": (("Food", None), ("Nightlife", None)),
    "Leisure": (("Entertainment", None), ("Outdoors", None), ("Travel", None)),
    "Retail": (("Shopping", None),),
    "Residential": (("Community", "Home"),),
    "Academic": (("Community", "University"), ("Community", "School")),
    "Library": (("Community", "Library"),),
}

EPOCH = datetime(2011, 4, 23)


def synth_generate(
    m_users,
    granularity=6,
    density=0.5,
    seed=None,
    n_pref_users=20,
    truth_hours=6,
    rank=2,
    places_per_category=8,
):
    """Schema-compatible synthetic check-in and preference corpora.

    Preference users hold a rank-``rank`` latent taste; the bit for a
    ``truth_hours``-hour block and category is the sign of the taste against
    that item's latent vector.  Each preference user leaves one record per
    hour of the day and category, so the pool covers every item at every
    granularity.  Each trajectory user visits ``round(density * n_items)``
    distinct ``granularity``-hour items, drawn according to personal
    time-of-day and category habits, one check-in per item.
    """
    m_users = check_positive_int(m_users, "m_users")
    g = check_granularity(granularity)
    check_granularity(truth_hours)
    n_pref_users = check_positive_int(n_pref_users, "n_pref_users")
    if not 0.0 < density <= 1.0:
        raise InvalidArgumentError(f"density must lie in (0, 1], got {density}")
    rng = check_random_state(seed)
    n_blocks = 24 // truth_hours
    n_cat = len(UNIFIED_CATEGORIES)

    taste = rng.normal(size=(n_pref_users, rank))
    item_vec = rng.normal(size=(n_blocks, n_cat, rank))
    truth = (np.einsum("ur,bcr->ubc", taste, item_vec) >= 0).astype(int)

    prefs = []
    for u in range(n_pref_users):
        uid = f"p{u:04d}"
        for hour in range(24):
            for c, cat in enumerate(UNIFIED_CATEGORIES):
                stamp = EPOCH + timedelta(
                    days=int(rng.integers(7)), hours=hour, minutes=int(rng.integers(60))
                )
                place = f"{cat[:3].upper()}-{int(rng.integers(places_per_category)):03d}"
                prefs.append(PreferenceRecord(uid, stamp, place, cat, int(truth[u, hour // truth_hours, c])))

    items = build_items(g)
    n_visits = max(1, int(round(density * len(items))))
    n_slots = 24 // g
    checkins = []
    for u in range(m_users):
        uid = f"t{u:05d}"
        w = np.outer(rng.dirichlet(np.full(n_slots, 2.0)), rng.dirichlet(np.full(n_cat, 2.0))).ravel()
        chosen = np.sort(rng.choice(len(items), size=n_visits, replace=False, p=w / w.sum()))
        for j in chosen:
            item = items[j]
            cat, sub = _SOURCE_FOR[item.category][int(rng.integers(len(_SOURCE_FOR[item.category])))]
            stamp = EPOCH + timedelta(
                days=int(rng.integers(7)),
                hours=item.slot_index * g + int(rng.integers(g)),
                minutes=int(rng.integers(60)),
            )
            place = f"{cat[:3].upper()}{(sub or '')[:3].upper()}-{int(rng.integers(places_per_category)):03d}"
            checkins.append(CheckinRecord(uid, stamp, place, cat, sub))
    return checkins, prefs
