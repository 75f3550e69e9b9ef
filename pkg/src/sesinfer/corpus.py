"""Parsing, cleaning and tokenization of geotagged short-text records.

Records arrive as line-delimited JSON objects::

    {"user_id": "u1", "ts": 1420070400, "text": "...", "lat": 48.85,
     "lon": 2.35, "retweet": false, "place": false, "mentions": 0,
     "hashtags": 0}

``lat``/``lon`` are optional. Profiles are a CSV table with columns
``user_id, friends, followers, description``.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

logger = logging.getLogger(__name__)

__all__ = [
    "GeoTweet",
    "UserTimeline",
    "ParseStats",
    "parse_stream",
    "read_profiles",
    "clean_text",
    "tokenize",
    "extract_ngrams",
    "build_timelines",
    "load_emoticons",
]


@dataclass(frozen=True)
class GeoTweet:
    user_id: str
    timestamp: float
    text: str
    coordinates: tuple[float, float] | None = None
    is_retweet: bool = False
    is_place_tag: bool = False
    mention_count: int = 0
    hashtag_count: int = 0

    @property
    def has_gps(self) -> bool:
        """True for a genuine GPS fix (coordinates present, not a place tag)."""
        return self.coordinates is not None and not self.is_place_tag


@dataclass
class UserTimeline:
    """Cleaned, time-ordered tweets of one user.

    ``raw_tweet_count``, ``retweet_count`` and ``mention_count`` are taken
    before retweets are dropped; the user-level features need them.
    """

    user_id: str
    tweets: list[GeoTweet]
    profile_description: str = ""
    friends: int = 0
    followers: int = 0
    raw_tweet_count: int = 0
    retweet_count: int = 0
    mention_count: int = 0
    _tokens: list[list[str]] | None = field(default=None, repr=False, compare=False)

    def token_lists(self) -> list[list[str]]:
        """Tokens of each tweet, cleaned; cached after the first call."""
        if self._tokens is None:
            self._tokens = [tokenize(clean_text(t.text)) for t in self.tweets]
        return self._tokens

    def description_tokens(self) -> list[str]:
        return tokenize(clean_text(self.profile_description))


@dataclass
class ParseStats:
    lines: int = 0
    parsed: int = 0
    malformed: int = 0
    coords_dropped: int = 0

    @property
    def warnings(self) -> int:
        return self.malformed + self.coords_dropped


def _valid_coordinates(lat: float, lon: float) -> bool:
    return (
        math.isfinite(lat) and math.isfinite(lon)
        and -90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0
    )


def _parse_record(obj: Mapping, stats: ParseStats) -> GeoTweet:
    user_id = obj["user_id"]
    if not isinstance(user_id, str) or not user_id:
        raise ValueError("user_id must be a non-empty string")
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, (int, float)):
        raise ValueError("ts must be numeric")
    ts = float(ts)
    if not math.isfinite(ts) or ts <= 0:
        raise ValueError("ts must be finite and positive")
    text = obj.get("text", "")
    if not isinstance(text, str):
        raise ValueError("text must be a string")

    coords = None
    lat, lon = obj.get("lat"), obj.get("lon")
    if lat is not None and lon is not None:
        lat, lon = float(lat), float(lon)
        if _valid_coordinates(lat, lon):
            coords = (lat, lon)
        else:
            stats.coords_dropped += 1

    mentions = int(obj.get("mentions", 0))
    hashtags = int(obj.get("hashtags", 0))
    if mentions < 0 or hashtags < 0:
        raise ValueError("negative mention/hashtag count")
    return GeoTweet(
        user_id=user_id,
        timestamp=ts,
        text=text,
        coordinates=coords,
        is_retweet=bool(obj.get("retweet", False)),
        is_place_tag=bool(obj.get("place", False)),
        mention_count=mentions,
        hashtag_count=hashtags,
    )


def iter_stream(reader: Iterable[str], stats: ParseStats | None = None) -> Iterator[GeoTweet]:
    """Lazily parse records; malformed lines are counted in ``stats`` and skipped."""
    if stats is None:
        stats = ParseStats()
    for lineno, line in enumerate(reader, 1):
        if not line.strip() or line.startswith("#"):
            continue
        stats.lines += 1
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record is not an object")
            tweet = _parse_record(obj, stats)
        except (ValueError, KeyError, TypeError) as exc:
            stats.malformed += 1
            logger.debug("line %d skipped: %s", lineno, exc)
            continue
        stats.parsed += 1
        yield tweet


def parse_stream(reader: Iterable[str] | str, stats: ParseStats | None = None) -> list[GeoTweet]:
    """Parse a line-delimited record source.

    ``reader`` is any iterable of lines (an open file works) or a path.
    Unreadable paths raise ``OSError``.
    """
    if isinstance(reader, str):
        with open(reader, encoding="utf-8") as fh:
            return list(iter_stream(fh, stats))
    return list(iter_stream(reader, stats))


def read_profiles(source: str | TextIO) -> dict[str, dict]:
    """Read the ``user_id, friends, followers, description`` table."""
    if isinstance(source, str):
        with open(source, encoding="utf-8", newline="") as fh:
            return read_profiles(fh)
    profiles = {}
    for row in csv.DictReader(ln for ln in source if not ln.startswith("#")):
        profiles[row["user_id"]] = {
            "friends": int(row.get("friends") or 0),
            "followers": int(row.get("followers") or 0),
            "description": row.get("description") or "",
        }
    return profiles


# --- text cleaning -----------------------------------------------------------

_URL_RE = re.compile(r"(?:https?://|www\.)\S*", re.IGNORECASE)
_MENTION_RE = re.compile(r"@\w+")
_HASHTAG_RE = re.compile(r"#\w+")
# variation selectors and the keycap mark are category M but belong to emoji
_EMOJI_MARKS = frozenset(
    [chr(c) for c in range(0xFE00, 0xFE10)] + ["\u20e3"]
)


def load_emoticons() -> frozenset[str]:
    text = resources.files("sesinfer.data").joinpath("emoticons.txt").read_text("utf-8")
    items = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if all(ch.isalnum() for ch in line):
            raise ValueError(f"emoticon {line!r} has no punctuation")
        items.add(line)
    return frozenset(items)


_EMOTICONS = load_emoticons()


def _keep_char(ch: str) -> bool:
    if ch in _EMOJI_MARKS:
        return False
    return unicodedata.category(ch)[0] in "LNM"


def clean_text(raw: str) -> str:
    """Strip URLs, mentions, hashtags, emoticons and punctuation; downcase.

    Apostrophes and hyphens separate tokens (``"J'AIME"`` -> ``"j aime"``).
    Diacritics are kept.
    """
    if not raw:
        return ""
    text = _URL_RE.sub(" ", raw)
    text = _MENTION_RE.sub(" ", text)
    text = _HASHTAG_RE.sub(" ", text)
    text = " ".join(tok for tok in text.split() if tok not in _EMOTICONS)
    text = text.lower()
    text = "".join(ch if _keep_char(ch) else " " for ch in text)
    return " ".join(text.split())


def tokenize(cleaned: str) -> list[str]:
    return cleaned.split()


def extract_ngrams(tokens: Sequence[str], n: int) -> Counter:
    """Multiset of contiguous ``n``-grams of one tweet (``n`` in {1, 2})."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n!r}")
    if n == 1:
        return Counter((t,) for t in tokens)
    return Counter(zip(tokens[:-1], tokens[1:]))


def build_timelines(
    tweets: Iterable[GeoTweet],
    profiles: Mapping[str, Mapping] | None = None,
) -> dict[str, UserTimeline]:
    """Group tweets per user, drop retweets and sort by time.

    Users left without any tweet are omitted. The result is keyed in sorted
    user order so downstream iteration does not depend on input order.
    """
    profiles = profiles or {}
    kept: dict[str, list[GeoTweet]] = {}
    raw = Counter()
    rts = Counter()
    mentions = Counter()
    for tw in tweets:
        raw[tw.user_id] += 1
        mentions[tw.user_id] += tw.mention_count
        if tw.is_retweet:
            rts[tw.user_id] += 1
            continue
        kept.setdefault(tw.user_id, []).append(tw)

    out = {}
    for uid in sorted(kept):
        prof = profiles.get(uid, {})
        out[uid] = UserTimeline(
            user_id=uid,
            # text breaks timestamp ties so the order is input-independent
            tweets=sorted(kept[uid], key=lambda t: (t.timestamp, t.text)),
            profile_description=prof.get("description", ""),
            friends=int(prof.get("friends", 0)),
            followers=int(prof.get("followers", 0)),
            raw_tweet_count=raw[uid],
            retweet_count=rts[uid],
            mention_count=mentions[uid],
        )
    return out


def write_stream(tweets: Iterable[GeoTweet], fh: TextIO) -> None:
    """Inverse of :func:`parse_stream`."""
    for t in tweets:
        rec = {"user_id": t.user_id, "ts": int(t.timestamp) if float(t.timestamp).is_integer() else t.timestamp,
               "text": t.text}
        if t.coordinates is not None:
            rec["lat"], rec["lon"] = t.coordinates
        rec.update(retweet=t.is_retweet, place=t.is_place_tag,
                   mentions=t.mention_count, hashtags=t.hashtag_count)
        fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def write_profiles(profiles: Mapping[str, Mapping], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user_id", "friends", "followers", "description"])
    for uid in sorted(profiles):
        p = profiles[uid]
        w.writerow([uid, p.get("friends", 0), p.get("followers", 0), p.get("description", "")])

