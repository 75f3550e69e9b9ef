import io
import json
import random
import re
import unicodedata
from collections import Counter, defaultdict
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from sesinfer.corpus import (
    GeoTweet,
    ParseStats,
    build_timelines,
    clean_text,
    extract_ngrams,
    parse_stream,
    read_profiles,
    tokenize,
    write_stream,
)

FIXTURES = Path(__file__).parent / "fixtures"


def load_golden():
    pairs = []
    for line in (FIXTURES / "clean_golden.tsv").read_text("utf-8").split("\n"):
        if not line or line.startswith("#"):
            continue
        raw, expected = line.rsplit("\t", 1)
        pairs.append((raw, expected))
    return pairs


GOLDEN = load_golden()


def test_golden_has_50_pairs():
    assert len(GOLDEN) == 50


@pytest.mark.parametrize("raw,expected", GOLDEN)
def test_clean_text_golden(raw, expected):
    assert clean_text(raw) == expected


@pytest.mark.parametrize("raw,expected", GOLDEN)
def test_tokenize_golden_roundtrip(raw, expected):
    toks = tokenize(clean_text(raw))
    assert toks == expected.split()
    assert " ".join(toks) == expected


def test_spec_examples():
    assert clean_text("Bonjour @ami http://x.co #tag !") == "bonjour"
    assert clean_text("") == ""
    assert clean_text("J'AIME Paris.") == "j aime paris"
    assert tokenize("bonjour le monde") == ["bonjour", "le", "monde"]
    assert tokenize("") == []


FRAGMENTS = list("@#:/.'-_ ()<3DPp") + ["http://", "www.", ":)", "😀", "\ufe0f", "İ", "ẞ"]
text_strategy = st.lists(
    st.one_of(st.text(st.characters(codec="utf-8"), max_size=4), st.sampled_from(FRAGMENTS)),
    max_size=20,
).map("".join)

URL_MENTION_HASHTAG = re.compile(r"https?://|www\.|[@#]")


@settings(max_examples=400, deadline=None)
@given(text_strategy)
def test_clean_text_idempotent(raw):
    once = clean_text(raw)
    assert clean_text(once) == once


@settings(max_examples=300, deadline=None)
@given(text_strategy)
def test_tokens_are_clean(raw):
    for tok in tokenize(clean_text(raw)):
        assert tok
        assert tok == tok.lower()
        assert not URL_MENTION_HASHTAG.search(tok)
        assert all(unicodedata.category(ch)[0] in "LNM" for ch in tok)


def brute_ngrams(tokens, n):
    out = Counter()
    for i in range(len(tokens) - n + 1):
        out[tuple(tokens[i:i + n])] += 1
    return out


def test_extract_ngrams_examples():
    assert extract_ngrams(["a", "b", "c"], 2) == Counter({("a", "b"): 1, ("b", "c"): 1})
    assert extract_ngrams(["a"], 2) == Counter()
    with pytest.raises(ValueError):
        extract_ngrams(["a"], 3)


@pytest.mark.parametrize("n", [1, 2])
def test_extract_ngrams_golden_vs_sliding_window(n):
    total = Counter()
    oracle = Counter()
    for raw, _ in GOLDEN:
        toks = tokenize(clean_text(raw))
        total += extract_ngrams(toks, n)
        oracle += brute_ngrams(toks, n)
    assert total == oracle
    assert sum(total.values()) > 50


def record(**kw):
    base = {"user_id": "u", "ts": 1_420_000_000, "text": "x", "retweet": False,
            "place": False, "mentions": 0, "hashtags": 0}
    base.update(kw)
    return json.dumps(base)


def test_parse_stream_examples():
    stats = ParseStats()
    out = parse_stream(io.StringIO(record(lat=48.85, lon=2.35) + "\n"), stats)
    assert out[0].coordinates == (48.85, 2.35)
    assert stats.warnings == 0

    stats = ParseStats()
    out = parse_stream(io.StringIO(record(lat=123.0, lon=2.0) + "\n"), stats)
    assert len(out) == 1 and out[0].coordinates is None
    assert stats.coords_dropped == 1 and stats.warnings == 1

    stats = ParseStats()
    assert parse_stream(io.StringIO(""), stats) == []
    assert stats.warnings == 0


def test_parse_stream_skips_malformed_lines():
    lines = [record(), "{not json", "[]", record(ts=-5), record(user_id=""),
             json.dumps({"ts": 5}), record(text="ok")]
    stats = ParseStats()
    out = parse_stream(io.StringIO("\n".join(lines)), stats)
    assert [t.text for t in out] == ["x", "ok"]
    assert stats.malformed == 5


def test_parse_stream_unreadable_source():
    with pytest.raises(OSError):
        parse_stream("/nonexistent/stream.jsonl")


def test_write_parse_roundtrip():
    tweets = [GeoTweet("a", 1.0e9, "salut", (1.0, 2.0), False, True, 2, 1),
              GeoTweet("b", 1.0e9 + 1, "yo", None, True, False, 0, 0)]
    buf = io.StringIO()
    write_stream(tweets, buf)
    buf.seek(0)
    assert parse_stream(buf) == tweets


def test_build_timelines_examples():
    tw = [GeoTweet("u", 30.0, "c"), GeoTweet("u", 10.0, "a"),
          GeoTweet("u", 20.0, "rt", is_retweet=True, mention_count=1)]
    tl = build_timelines(tw)
    assert [t.text for t in tl["u"].tweets] == ["a", "c"]
    assert tl["u"].retweet_count == 1 and tl["u"].raw_tweet_count == 3
    assert tl["u"].mention_count == 1

    only_rt = build_timelines([GeoTweet("v", 1.0, "x", is_retweet=True)])
    assert only_rt == {}


def synth_stream(n, seed):
    rng = random.Random(seed)
    users = [f"user{i:03d}" for i in range(150)]
    return [GeoTweet(rng.choice(users), float(rng.randint(1, 10**9)), "t",
                     is_retweet=rng.random() < 0.2) for _ in range(n)]


def test_build_timelines_counts_vs_groupby():
    tweets = synth_stream(10_000, 3)
    oracle = defaultdict(int)
    for t in tweets:
        if not t.is_retweet:
            oracle[t.user_id] += 1
    tl = build_timelines(tweets)
    assert {u: len(v.tweets) for u, v in tl.items()} == dict(oracle)
    assert sum(len(v.tweets) for v in tl.values()) == sum(not t.is_retweet for t in tweets)
    for v in tl.values():
        ts = [t.timestamp for t in v.tweets]
        assert ts == sorted(ts)


def test_build_timelines_order_independent():
    tweets = synth_stream(2000, 5)
    shuffled = tweets[:]
    random.Random(1).shuffle(shuffled)
    a, b = build_timelines(tweets), build_timelines(shuffled)
    assert list(a) == list(b)
    for uid in a:
        assert a[uid].tweets == b[uid].tweets


def test_read_profiles():
    data = "user_id,friends,followers,description\nu1,10,5,\"Prof, Lyon\"\nu2,,,\n"
    p = read_profiles(io.StringIO(data))
    assert p["u1"] == {"friends": 10, "followers": 5, "description": "Prof, Lyon"}
    assert p["u2"]["friends"] == 0
