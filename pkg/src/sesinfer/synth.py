"""Synthetic populations with planted ground truth.

Everything the pipeline consumes can be generated here: a tweet stream,
profiles, census cells, a salary table with job titles, and expert
annotations. The planted truth (homes, bot kinds, classes) is returned
alongside so tests can check each stage against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .census import CensusCell, CensusIndex, validate_cell
from .corpus import GeoTweet
from .homeloc import LOCAL_UTC_OFFSET_H, MobilityTrace

T0 = 1_409_529_600  # 2014-09-01 00:00 UTC
DAY = 86_400
HOUR = 3_600

# expected filter reasons for each planted bot kind
BOT_REASONS = {
    "speed": ("speed",),
    "burst": ("burst",),
    "teleport": ("median_mobility", "speed"),
}


@dataclass
class SynthSpec:
    n_users: int = 1000
    class_priors: tuple[float, float] = (0.54, 0.46)
    signal_strength: float = 1.0
    # mobility
    night_home_fraction: float = 0.6
    day_home_fraction: float = 0.2
    commute_km: tuple[float, float] = (3.0, 15.0)
    points_per_user: tuple[int, int] = (20, 60)
    span_days: tuple[int, int] = (30, 120)
    bot_fraction: float = 0.0
    bot_kinds: tuple[str, ...] = ("speed", "burst")
    # census grid
    grid_shape: tuple[int, int] = (20, 25)
    grid_origin: tuple[float, float] = (45.70, 4.78)
    cell_size_deg: float = 0.01
    income_log_mean: tuple[float, float] = (9.85, 10.35)
    income_log_sd: float = 0.12
    # text
    tweets_per_user: tuple[int, int] = (30, 50)
    n_topics: int = 20
    words_per_topic: int = 40
    n_common_words: int = 60
    tweet_length: tuple[int, int] = (6, 12)
    retweet_rate: float = 0.1
    occupation_fraction: float = 0.25
    annotated_fraction: float = 0.2

    def __post_init__(self):
        if abs(sum(self.class_priors) - 1.0) > 1e-9 or min(self.class_priors) < 0:
            raise ValueError("class priors must be non-negative and sum to 1")
        if self.signal_strength < 0:
            raise ValueError("signal strength must be >= 0")
        if not 0 <= self.bot_fraction < 1:
            raise ValueError("bot_fraction must be in [0, 1)")
        unknown = set(self.bot_kinds) - set(BOT_REASONS)
        if unknown:
            raise ValueError(f"unknown bot kinds {sorted(unknown)}")


# --- census grid ------------------------------------------------------------------

def grid_cells(spec: SynthSpec, rng: np.random.Generator) -> tuple[list[CensusCell], np.ndarray]:
    """Square cells with lognormal decile vectors.

    Returns the cells and a (rows, cols) array with each cell's median income.
    The left half of the grid is poorer than the right half so classes can be
    planted by choosing home cells.
    """
    rows, cols = spec.grid_shape
    lat0, lon0 = spec.grid_origin
    s = spec.cell_size_deg
    z = np.array([-1.2816, -0.8416, -0.5244, -0.2533, 0.0, 0.2533, 0.5244, 0.8416, 1.2816])
    cells, medians = [], np.zeros((rows, cols))
    lo, hi = spec.income_log_mean
    for i in range(rows):
        for j in range(cols):
            mu = (lo if j < cols // 2 else hi) + rng.normal(0, spec.income_log_sd)
            deciles = np.round(np.exp(mu + 0.45 * z), 2)
            ring = [[lat0 + i * s, lon0 + j * s], [lat0 + i * s, lon0 + (j + 1) * s],
                    [lat0 + (i + 1) * s, lon0 + (j + 1) * s], [lat0 + (i + 1) * s, lon0 + j * s]]
            cells.append(validate_cell(f"{i:03d}{j:03d}", [ring], deciles.tolist()))
            medians[i, j] = deciles[4]
    return cells, medians


# --- mobility -----------------------------------------------------------------------

def _offset(point, km, bearing):
    lat, lon = point
    dlat = km / 111.2 * math.cos(bearing)
    dlon = km / (111.2 * math.cos(math.radians(lat))) * math.sin(bearing)
    return (lat + dlat, lon + dlon)


def _timestamps(rng, n, span_days, min_gap=20 * 60):
    """Sorted timestamps over ``span_days`` with at least ``min_gap`` seconds between them."""
    span = span_days * DAY
    raw = np.sort(rng.choice(span // min_gap, size=n, replace=False)) * min_gap
    return T0 + raw + rng.integers(0, 60, size=n)


def _local_hours(ts):
    return ((ts // HOUR) + LOCAL_UTC_OFFSET_H) % 24


def human_trace(rng, spec: SynthSpec, home, n_points=None):
    """Commuter trace: home at night, a jittered workplace by day.

    Only home visits repeat exactly; every other fix is a fresh location.
    """
    if n_points is None:
        n_points = int(rng.integers(*spec.points_per_user, endpoint=True))
    span = int(rng.integers(*spec.span_days, endpoint=True))
    ts = _timestamps(rng, n_points, span)
    work = _offset(home, rng.uniform(*spec.commute_km), rng.uniform(0, 2 * np.pi))
    hours = _local_hours(ts)
    pts = []
    for h in hours:
        u = rng.random()
        night = h >= 20 or h < 8
        if night and u < spec.night_home_fraction:
            p = home
        elif not night and u < spec.day_home_fraction:
            p = home
        elif not night and 9 <= h < 18 and u < spec.day_home_fraction + 0.5:
            p = _offset(work, rng.uniform(0.01, 0.3), rng.uniform(0, 2 * np.pi))
        else:
            p = _offset(home, rng.uniform(0.2, 5.0), rng.uniform(0, 2 * np.pi))
        pts.append(p)
    return np.column_stack([ts, np.array(pts)])


def bot_trace(rng, spec: SynthSpec, home, kind):
    pts = human_trace(rng, spec, home)
    if kind == "speed":
        # one 300 km excursion, reached within an hour and left an hour later
        k = len(pts) // 2
        t = pts[k - 1, 0] + HOUR
        far = _offset(home, 300.0, rng.uniform(0, 2 * np.pi))
        gap = pts[k, 0] - pts[k - 1, 0]
        if gap < 3 * HOUR:
            pts[k:, 0] += 3 * HOUR - gap
        pts = np.vstack([pts[:k], [[t, *far]], pts[k:]])
        pts[k + 1, 0] = t + HOUR
        pts[k + 1, 1:] = home
    elif kind == "burst":
        k = len(pts) // 2
        t = pts[k, 0]
        extra = np.array([[t, *pts[k, 1:]], [t + 1, *pts[k, 1:]], [t + 1, *pts[k, 1:]]])
        pts = np.vstack([pts, extra])
    elif kind == "teleport":
        cities = [home] + [_offset(home, rng.uniform(150, 400), rng.uniform(0, 2 * np.pi)) for _ in range(2)]
        for r in range(len(pts)):
            pts[r, 1:] = cities[r % 3] if r % 2 else home
            if r % 2:
                # hop ten minutes after the previous fix
                pts[r, 0] = pts[r - 1, 0] + 600
    else:
        raise ValueError(kind)
    return pts[np.argsort(pts[:, 0], kind="stable")]


def random_home(rng, spec: SynthSpec, cls: int | None = None):
    """Home point inside the grid; with ``cls`` the poorer/richer half is used."""
    rows, cols = spec.grid_shape
    lat0, lon0 = spec.grid_origin
    s = spec.cell_size_deg
    i = int(rng.integers(1, rows - 1))
    if cls is None:
        j = int(rng.integers(1, cols - 1))
    elif cls == 0:
        j = int(rng.integers(1, cols // 2))
    else:
        j = int(rng.integers(cols // 2, cols - 1))
    lat = round(lat0 + (i + rng.uniform(0.1, 0.9)) * s, 4)
    lon = round(lon0 + (j + rng.uniform(0.1, 0.9)) * s, 4)
    return (lat, lon)


@dataclass
class TracePopulation:
    traces: dict[str, MobilityTrace]
    homes: dict[str, tuple[float, float]]
    bots: dict[str, str]  # user -> bot kind
    index: CensusIndex


def generate_traces(spec: SynthSpec, seed: int) -> TracePopulation:
    """Mobility traces only (no text); bots are planted by ``spec.bot_fraction``."""
    rng = np.random.default_rng(seed)
    cells, _ = grid_cells(spec, rng)
    n_bots = int(round(spec.bot_fraction * spec.n_users))
    kinds = [spec.bot_kinds[k % len(spec.bot_kinds)] for k in range(n_bots)]
    bot_ids = set(rng.choice(spec.n_users, size=n_bots, replace=False).tolist())
    traces, homes, bots = {}, {}, {}
    kind_iter = iter(kinds)
    for u in range(spec.n_users):
        uid = f"u{u:05d}"
        home = random_home(rng, spec)
        if u in bot_ids:
            kind = next(kind_iter)
            pts = bot_trace(rng, spec, home, kind)
            bots[uid] = kind
        else:
            pts = human_trace(rng, spec, home)
        traces[uid] = MobilityTrace(uid, pts)
        homes[uid] = home
    return TracePopulation(traces, homes, bots, CensusIndex(cells))


# --- text, occupations, annotations ---------------------------------------------------

_CONSONANTS = "bcdfglmnprstv"
_VOWELS = "aeiou"

# (canonical title, regex patterns, class): class 0 salaries sit below class 1
OCCUPATIONS = (
    ("caissière", ("caissi[eè]re?",), 0),
    ("serveur", ("serveu(?:r|se)",), 0),
    ("agent d'entretien", (), 0),
    ("vendeur en magasin", ("vendeu(?:r|se)",), 0),
    ("aide soignante", ("aide[ -]soignante?",), 0),
    ("préparateur de commandes", (), 0),
    ("chauffeur livreur", ("chauffeur",), 0),
    ("employé administratif", (), 0),
    ("ingénieur logiciel", ("ing[ée]nieur (?:logiciel|informatique)",), 1),
    ("chef de projet informatique", (), 1),
    ("médecin généraliste", ("m[ée]decin",), 1),
    ("avocat d'affaires", ("avocate?",), 1),
    ("directeur commercial", ("directri?c?e?u?r commercial",), 1),
    ("architecte", ("architecte",), 1),
    ("consultant en stratégie", (), 1),
    ("pharmacien", ("pharmacien(?:ne)?",), 1),
)


def _pseudo_words(rng, n, taken):
    out = []
    while len(out) < n:
        k = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(k))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class SynthPopulation:
    tweets: list[GeoTweet]
    profiles: dict[str, dict]          # friends, followers, description
    cells: list[CensusCell]
    salary_table: object               # occupation.SalaryTable
    job_profiles: list                 # occupation.ProfileRecord
    overrides: dict[str, str]          # manual resolution of garbled titles
    annotations: dict[str, int]        # expert SES score 1..9
    classes: dict[str, int]            # planted class of every user
    homes: dict[str, tuple[float, float]]
    bots: dict[str, str]
    occupations: dict[str, str]        # planted occupation id of profiled users
    second_annotations: dict[str, int] = field(default_factory=dict)  # overlap rated twice
    topic_words: list[list[str]] = field(default_factory=list)
    topic_polarity: np.ndarray | None = None


def _noisy_title(rng, title, mode):
    if mode == "exact":
        return title.upper() if rng.random() < 0.3 else title
    if mode == "typo":
        # one substitution keeps the similarity at 1 - 1/len >= 0.9 for titles of 10+ chars
        i = int(rng.integers(len(title)))
        while title[i] == " ":
            i = int(rng.integers(len(title)))
        ch = "x" if title[i] != "x" else "z"
        return title[:i] + ch + title[i + 1:]
    return "".join(rng.permutation(list(title.replace(" ", "")))) + " senior"


def _tweet_text(rng, words, n_tokens):
    parts = list(words[:n_tokens])
    mentions = 0
    if rng.random() < 0.2:
        parts.insert(int(rng.integers(len(parts) + 1)), f"@ami{int(rng.integers(1000))}")
        mentions = 1
    if rng.random() < 0.1:
        parts.append(f"#tag{int(rng.integers(50))}")
    if rng.random() < 0.1:
        parts.append(f"https://t.co/{int(rng.integers(10**6)):06d}")
    return " ".join(parts), mentions


def synth_generate(spec: SynthSpec, seed: int) -> SynthPopulation:
    """Full synthetic population with planted classes.

    The class sets the home half of the census grid, the occupation pool,
    the expert score and the topic preferences: topic ``t`` has polarity
    ``s_t`` in {-1, +1} and a user of class ``c`` weights it by
    ``exp(signal_strength * s_t * (2c - 1) + noise)``. With zero signal the
    text carries no class information.
    """
    from .occupation import ProfileRecord, SalaryTable, SalaryTableEntry

    rng = np.random.default_rng(seed)
    cells, _ = grid_cells(spec, rng)
    taken: set[str] = set()
    topic_words = [_pseudo_words(rng, spec.words_per_topic, taken) for _ in range(spec.n_topics)]
    common = _pseudo_words(rng, spec.n_common_words, taken)
    polarity = np.where(rng.permutation(spec.n_topics) < spec.n_topics // 2, -1.0, 1.0)

    salaries = {}
    entries = []
    for k, (title, pats, cls) in enumerate(OCCUPATIONS):
        base = 21_000 if cls == 0 else 52_000
        sal = float(round(base * math.exp(rng.normal(0, 0.12)), -2))
        oid = str(101 + k)
        salaries[oid] = sal
        entries.append(SalaryTableEntry(oid, title, sal, pats))
    table = SalaryTable(entries)
    by_class = {c: [str(101 + k) for k, o in enumerate(OCCUPATIONS) if o[2] == c] for c in (0, 1)}

    n_bots = int(round(spec.bot_fraction * spec.n_users))
    bot_ids = set(rng.choice(spec.n_users, size=n_bots, replace=False).tolist())
    bot_kinds = iter([spec.bot_kinds[k % len(spec.bot_kinds)] for k in range(n_bots)])

    # exact class counts, so label fractions follow the priors up to rounding
    n_high = int(round(spec.class_priors[1] * spec.n_users))
    planted = rng.permutation(np.r_[np.zeros(spec.n_users - n_high, int), np.ones(n_high, int)])

    tweets, profiles, job_profiles = [], {}, []
    overrides, annotations, classes, homes, bots, occupations = {}, {}, {}, {}, {}, {}
    second: dict[str, int] = {}
    for u in range(spec.n_users):
        uid = f"u{u:05d}"
        cls = int(planted[u])
        classes[uid] = cls
        home = random_home(rng, spec, cls)
        homes[uid] = home
        if u in bot_ids:
            kind = next(bot_kinds)
            pts = bot_trace(rng, spec, home, kind)
            bots[uid] = kind
        else:
            pts = human_trace(rng, spec, home)

        logits = spec.signal_strength * polarity * (2 * cls - 1) + rng.normal(0, 0.5, spec.n_topics)
        w = np.exp(logits - logits.max())
        w /= w.sum()
        n_extra = max(0, int(rng.integers(*spec.tweets_per_user, endpoint=True)) - len(pts))
        span_end = int(pts[-1, 0]) if len(pts) else T0
        extra_ts = np.sort(rng.integers(T0, span_end + 1, size=n_extra))
        stamps = [(float(p[0]), (round(float(p[1]), 6), round(float(p[2]), 6))) for p in pts]
        stamps += [(float(t), None) for t in extra_ts]
        for ts, coords in stamps:
            t = int(rng.choice(spec.n_topics, p=w))
            n_tok = int(rng.integers(*spec.tweet_length, endpoint=True))
            topical = rng.random(n_tok) < 0.8
            words = [topic_words[t][int(rng.integers(spec.words_per_topic))] if tp
                     else common[int(rng.integers(len(common)))] for tp in topical]
            text, m = _tweet_text(rng, words, n_tok)
            tweets.append(GeoTweet(uid, ts, text, coords, mention_count=m, hashtag_count=int("#" in text)))
            if rng.random() < spec.retweet_rate:
                src = topic_words[int(rng.integers(spec.n_topics))]
                rt = "RT @src " + " ".join(src[int(rng.integers(spec.words_per_topic))] for _ in range(6))
                tweets.append(GeoTweet(uid, ts + 30.0, rt, None, is_retweet=True, mention_count=1))

        fav = int(np.argmax(w))
        desc = " ".join([topic_words[fav][int(rng.integers(spec.words_per_topic))] for _ in range(3)]
                        + [common[int(rng.integers(len(common)))]])
        profiles[uid] = {"friends": int(rng.lognormal(5.0, 1.0)),
                         "followers": int(rng.lognormal(4.5, 1.3)) if rng.random() > 0.03 else 0,
                         "description": desc}

        if rng.random() < spec.occupation_fraction:
            oid = by_class[cls][int(rng.integers(len(by_class[cls])))]
            occupations[uid] = oid
            title = table[oid].canonical_title
            r = rng.random()
            if r < 0.4:
                mode = "exact"
            elif r < 0.9 and len(title) >= 10:
                mode = "typo"
            else:
                mode = "garbled"
            job_profiles.append(ProfileRecord(uid, _noisy_title(rng, title, mode), (), desc))
            if mode == "garbled":
                overrides[uid] = oid
        if rng.random() < spec.annotated_fraction:
            score = int(np.clip(round(rng.normal(3.5 if cls == 0 else 6.8, 1.3)), 1, 9))
            annotations[uid] = score
            if rng.random() < 0.5:
                second[uid] = int(np.clip(score + rng.integers(-2, 3), 1, 9))

    tweets.sort(key=lambda t: (t.timestamp, t.user_id, t.text))
    return SynthPopulation(tweets, profiles, cells, table, job_profiles, overrides, annotations,
                           classes, homes, bots, occupations, second, topic_words, polarity)
