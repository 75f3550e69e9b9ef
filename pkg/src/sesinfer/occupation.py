"""Job-title to occupation matching and salary-based SES labels.

Salary table (CSV)::

    occupation_id,canonical_title,salary,patterns
    12,ingénieur logiciel,52000,ing[ée]nieur (logiciel|informatique)|développeur

``patterns`` is a list of regular expressions separated by top-level ``|``
(alternation inside groups stays within one pattern), applied with
``re.search`` to the cleaned job title. Table order, and hence regex
precedence, follows ``occupation_id``.

Manual overrides (CSV): ``user_id,occupation_id``.
Job profiles (CSV): ``user_id,job_title,skills,description`` with skills
separated by ``|``.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from numba import njit

from .corpus import clean_text

__all__ = [
    "SalaryTableEntry",
    "SalaryTable",
    "ProfileRecord",
    "MatchResult",
    "UnresolvedUsersError",
    "levenshtein",
    "seq_similarity",
    "match_regex",
    "match_title",
    "apply_overrides",
    "label_binary_by_salary",
]


def _id_key(occupation_id: str):
    return (0, int(occupation_id), "") if occupation_id.isdigit() else (1, 0, occupation_id)


@dataclass(frozen=True)
class SalaryTableEntry:
    occupation_id: str
    canonical_title: str
    salary: float
    patterns: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.canonical_title:
            raise ValueError(f"occupation {self.occupation_id}: empty canonical title")
        if not (self.salary > 0 and math.isfinite(self.salary)):
            raise ValueError(f"occupation {self.occupation_id}: salary must be positive")


class SalaryTable:
    """Occupations ordered by id with compiled patterns and encoded titles."""

    def __init__(self, entries: Iterable[SalaryTableEntry]):
        self.entries = sorted(entries, key=lambda e: _id_key(e.occupation_id))
        ids = [e.occupation_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate occupation_id")
        self._by_id = {e.occupation_id: e for e in self.entries}
        self._regex = [[re.compile(p) for p in e.patterns] for e in self.entries]
        self._clean_titles = [clean_text(e.canonical_title) for e in self.entries]
        self._encoded = [_encode(t) for t in self._clean_titles]

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, occupation_id: str) -> SalaryTableEntry:
        return self._by_id[occupation_id]

    def __contains__(self, occupation_id) -> bool:
        return occupation_id in self._by_id


@dataclass(frozen=True)
class ProfileRecord:
    user_id: str
    job_title: str
    skills: tuple[str, ...] = ()
    description: str = ""


@dataclass(frozen=True)
class MatchResult:
    user_id: str
    occupation_id: str | None
    strategy: str  # "regex" | "sequence" | "manual" | "unresolved"
    score: float

    @property
    def resolved(self) -> bool:
        return self.occupation_id is not None


class UnresolvedUsersError(ValueError):
    def __init__(self, users: Sequence[str]):
        self.users = list(users)
        super().__init__(f"{len(self.users)} unresolved users: {', '.join(self.users[:20])}")


# --- edit distance --------------------------------------------------------------

def _encode(s: str) -> np.ndarray:
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)


@njit(cache=True)
def _levenshtein(a, b):
    n, m = a.shape[0], b.shape[0]
    if n < m:
        a, b, n, m = b, a, m, n
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=prev.dtype)
    for i in range(1, n + 1):
        cur[0] = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ai != b[j - 1])
            ins = cur[j - 1] + 1
            dele = prev[j] + 1
            best = sub if sub < ins else ins
            cur[j] = best if best < dele else dele
        prev, cur = cur, prev
    return prev[m]


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode code points."""
    return int(_levenshtein(_encode(a), _encode(b)))


def seq_similarity(a: str, b: str) -> float:
    """``1 - levenshtein(a, b) / max(len(a), len(b))``; two empty strings give 1."""
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


# --- matching -----------------------------------------------------------------

def match_regex(title: str, table: SalaryTable) -> str | None:
    if not title:
        return None
    for entry, patterns in zip(table.entries, table._regex):
        if any(p.search(title) for p in patterns):
            return entry.occupation_id
    return None


def match_title(title: str, table: SalaryTable, threshold: float = 0.9,
                user_id: str = "") -> MatchResult:
    """Regex stage, then best normalized edit similarity against canonical titles.

    ``title`` is cleaned here, so raw strings are accepted as well.
    """
    if len(table) == 0:
        raise ValueError("empty salary table")
    if not 0 < threshold <= 1:
        raise ValueError("threshold must be in (0, 1]")
    title = clean_text(title)
    occ = match_regex(title, table)
    if occ is not None:
        return MatchResult(user_id, occ, "regex", 1.0)
    if not title:
        return MatchResult(user_id, None, "unresolved", 0.0)

    enc = _encode(title)
    best_score, best_id = -1.0, None
    for entry, cand, ctitle in zip(table.entries, table._encoded, table._clean_titles):
        longest = max(len(title), len(ctitle))
        score = 1.0 - _levenshtein(enc, cand) / longest
        # entries are in id order, so strict '>' keeps the smallest id on ties
        if score > best_score:
            best_score, best_id = score, entry.occupation_id
    if best_score >= threshold:
        return MatchResult(user_id, best_id, "sequence", best_score)
    return MatchResult(user_id, None, "unresolved", max(best_score, 0.0))


def match_profiles(profiles: Iterable[ProfileRecord], table: SalaryTable,
                   threshold: float = 0.9) -> dict[str, MatchResult]:
    return {p.user_id: match_title(p.job_title, table, threshold, p.user_id)
            for p in sorted(profiles, key=lambda p: p.user_id)}


def apply_overrides(matches: Mapping[str, MatchResult], overrides: Mapping[str, str],
                    table: SalaryTable) -> dict[str, MatchResult]:
    """Merge manually resolved occupations last; they replace automatic matches."""
    out = dict(matches)
    for uid, occ in overrides.items():
        if occ not in table:
            raise KeyError(f"override for {uid!r} names unknown occupation {occ!r}")
        out[uid] = MatchResult(uid, occ, "manual", 1.0)
    return out


def label_binary_by_salary(matches: Mapping[str, MatchResult], table: SalaryTable
                           ) -> tuple[dict[str, int], tuple[float, float]]:
    """Mean split of matched salaries: 1 (high) iff strictly above the mean.

    Returns the labels and the (low, high) class fractions.
    """
    unresolved = sorted(u for u, m in matches.items() if not m.resolved)
    if unresolved:
        raise UnresolvedUsersError(unresolved)
    if not matches:
        raise ValueError("no matches to label")
    salaries = {u: table[m.occupation_id].salary for u, m in matches.items()}
    mean = math.fsum(salaries.values()) / len(salaries)
    labels = {u: int(s > mean) for u, s in salaries.items()}
    high = sum(labels.values()) / len(labels)
    return labels, (1.0 - high, high)


# --- files --------------------------------------------------------------------

def split_patterns(field: str) -> tuple[str, ...]:
    """Split on ``|`` outside groups, character classes and escapes."""
    out, cur, depth, in_class, i = [], [], 0, False, 0
    while i < len(field):
        ch = field[i]
        if ch == "\\" and i + 1 < len(field):
            cur.append(field[i:i + 2])
            i += 2
            continue
        if in_class:
            in_class = ch != "]"
        elif ch == "[":
            in_class = True
        elif ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "|" and depth == 0:
            out.append("".join(cur))
            cur = []
            i += 1
            continue
        cur.append(ch)
        i += 1
    out.append("".join(cur))
    return tuple(p for p in out if p)


def _rows(source):
    return csv.DictReader(ln for ln in source if not ln.startswith("#"))


def load_salary_table(path: str) -> SalaryTable:
    with open(path, encoding="utf-8", newline="") as fh:
        entries = []
        for row in _rows(fh):
            pats = split_patterns(row.get("patterns") or "")
            entries.append(SalaryTableEntry(row["occupation_id"], row["canonical_title"],
                                            float(row["salary"]), pats))
    return SalaryTable(entries)


def write_salary_table(table: SalaryTable, fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["occupation_id", "canonical_title", "salary", "patterns"])
    for e in table.entries:
        w.writerow([e.occupation_id, e.canonical_title, repr(e.salary), "|".join(e.patterns)])


def load_profiles(path: str) -> list[ProfileRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        return [ProfileRecord(r["user_id"], r.get("job_title") or "",
                              tuple(s for s in (r.get("skills") or "").split("|") if s),
                              r.get("description") or "")
                for r in _rows(fh)]


def write_profiles(profiles: Iterable[ProfileRecord], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user_id", "job_title", "skills", "description"])
    for p in profiles:
        w.writerow([p.user_id, p.job_title, "|".join(p.skills), p.description])


def load_overrides(path: str) -> dict[str, str]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {r["user_id"]: r["occupation_id"] for r in _rows(fh)}


def write_matches(matches: Mapping[str, MatchResult], table: SalaryTable,
                  labels: Mapping[str, int] | None, fh: TextIO, header: str | None = None) -> None:
    """``user_id, occupation_id, strategy, score, salary, label`` table."""
    if header:
        fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user_id", "occupation_id", "strategy", "score", "salary", "label"])
    for uid in sorted(matches):
        m = matches[uid]
        salary = repr(table[m.occupation_id].salary) if m.resolved else ""
        label = "" if labels is None or uid not in labels else ("high" if labels[uid] else "low")
        w.writerow([uid, m.occupation_id or "", m.strategy, f"{m.score:.6f}", salary, label])
