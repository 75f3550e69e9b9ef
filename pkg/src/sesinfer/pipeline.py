"""Stage orchestration: configuration, artifact layout and the pipeline stages.

Every stage reads its inputs from the configured input files or from the
artifacts of earlier stages in ``workdir`` and writes its own artifacts
there. Each artifact starts with a ``# config=<hash> seed=<n>`` line.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from typing import Callable, Mapping

import numpy as np

from . import census, corpus, features, homeloc, occupation, synth
from .evaluation import agreement, auc, precision_recall_f1, roc_curve
from .learn import CVPlan, Dataset, FAMILIES, SEARCH_SPACES, nested_cv, parse_space, save_model
from .learn.cv import StratificationError
from .semantics import (
    SkipGramConfig,
    build_vocabulary,
    read_distributions,
    read_embeddings,
    read_topic_labels,
    read_topic_model,
    similarity_matrix,
    spectral_cluster,
    topic_correlation,
    topic_distributions,
    topic_income_discrimination,
    train_skipgram,
    write_distributions,
    write_embeddings,
    write_topic_model,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "DependencyError",
    "DataError",
    "DEFAULT_CONFIG",
    "STAGES",
    "load_config",
    "apply_overrides",
    "validate_config",
    "config_hash",
    "Context",
    "run_stage",
]


class ConfigError(ValueError):
    pass


class DependencyError(RuntimeError):
    pass


class DataError(ValueError):
    pass


TRACKS = ("census", "occupation", "annotated")

_spec_defaults = {f.name: (list(f.default) if isinstance(f.default, tuple) else f.default)
                  for f in dataclasses.fields(synth.SynthSpec)}
_filter_defaults = {f.name: f.default for f in dataclasses.fields(homeloc.FilterConfig)}

DEFAULT_CONFIG: dict = {
    "track": "census",
    "workdir": "ses_out",
    "seed": 0,
    "inputs": {
        "stream": None,
        "profiles": None,
        "cells": None,
        "salary_table": None,
        "job_profiles": None,
        "overrides": None,
        "annotations": None,
        "topic_labels": None,
        "home_patterns": None,
    },
    "synth": {"out_dir": "ses_synth", **_spec_defaults},
    "homes": dict(_filter_defaults),
    "occupation": {"threshold": 0.9},
    "embed": {"min_count": 5, "dim": 50, "window": 5, "negatives": 5, "epochs": 5,
              "learning_rate": 0.025, "min_learning_rate": 1e-4},
    "topics": {"K": 100, "n_init": 50},
    "features": {"n1": 450, "n2": 560},
    "train": {"families": ["gbt", "rf", "adaboost"], "outer_folds": 5, "inner_folds": 5,
              "inner_repeats": 10, "n_configs": 500, "space": {}, "fixed": {}},
    "evaluate": {"threshold": 0.5},
}


# --- configuration ---------------------------------------------------------------

def _merge(base: dict, over: Mapping, path="") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict) and base[k] and not isinstance(v, dict):
            raise ConfigError(f"config key {key!r} must be a mapping")
        if isinstance(base[k], dict) and base[k]:
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user)
    # relative input paths are taken relative to the config file
    base = os.path.dirname(os.path.abspath(path))
    for k, v in cfg["inputs"].items():
        if isinstance(v, str) and not os.path.isabs(v):
            cfg["inputs"][k] = os.path.join(base, v)
    for k in ("workdir",):
        if not os.path.isabs(cfg[k]):
            cfg[k] = os.path.join(base, cfg[k])
    if not os.path.isabs(cfg["synth"]["out_dir"]):
        cfg["synth"]["out_dir"] = os.path.join(base, cfg["synth"]["out_dir"])
    return cfg


def apply_overrides(cfg: dict, items: list[str]) -> dict:
    """Apply ``key.sub=value`` overrides; values are JSON, else plain strings."""
    cfg = copy.deepcopy(cfg)
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.split(".")
        node, ref = cfg, DEFAULT_CONFIG
        for p in parts[:-1]:
            if p not in ref or not isinstance(ref[p], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node, ref = node[p], ref[p]
        if parts[-1] not in ref:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return cfg


def validate_config(cfg: dict, check_inputs: bool = True) -> None:
    if cfg["track"] not in TRACKS:
        raise ConfigError(f"track must be one of {TRACKS}, got {cfg['track']!r}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    for fam in cfg["train"]["families"]:
        if fam not in FAMILIES:
            raise ConfigError(f"unknown model family {fam!r}")
    t = cfg["train"]
    try:
        CVPlan(t["outer_folds"], t["inner_folds"], t["inner_repeats"], t["n_configs"], cfg["seed"])
        SkipGramConfig(**{k: v for k, v in cfg["embed"].items() if k != "min_count"})
        synth_spec(cfg)
        homeloc.FilterConfig(**cfg["homes"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["topics"]["K"] < 1 or cfg["features"]["n1"] < 0 or cfg["features"]["n2"] < 0:
        raise ConfigError("K must be >= 1 and n-gram counts >= 0")
    if not 0 < cfg["occupation"]["threshold"] <= 1:
        raise ConfigError("occupation.threshold must lie in (0, 1]")
    if check_inputs:
        for k, v in cfg["inputs"].items():
            if v is not None and not os.path.exists(v):
                raise ConfigError(f"input {k!r} not found: {v}")


def config_hash(cfg: dict) -> str:
    """Hash of the resolved config; output locations are left out."""
    body = copy.deepcopy(cfg)
    body.pop("workdir", None)
    body["synth"].pop("out_dir", None)
    body["inputs"] = {k: (os.path.basename(v) if isinstance(v, str) else v) for k, v in body["inputs"].items()}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def synth_spec(cfg: dict) -> synth.SynthSpec:
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg["synth"].items() if k != "out_dir"}
    return synth.SynthSpec(**kw)


def stage_seed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


# --- context -------------------------------------------------------------------------

ARTIFACTS = {
    "preprocess": ["timelines.jsonl", "preprocess_stats.csv"],
    "homes": ["homes.csv"],
    "census-join": ["incomes.csv", "labels_census.csv"],
    "occupations": ["matches.csv", "labels_occupation.csv"],
    "embed": ["embeddings.txt"],
    "topics": ["topics.csv", "distributions.csv"],
    "features": ["schema.txt", "features.tsv"],
    "train": [],
    "evaluate": ["metrics.csv"],
    "report": ["report/table1.txt"],
}


@dataclasses.dataclass
class Context:
    cfg: dict
    log: Callable[[str], None] = print

    @property
    def seed(self) -> int:
        return int(self.cfg["seed"])

    @property
    def workdir(self) -> str:
        return self.cfg["workdir"]

    @property
    def header(self) -> str:
        return f"# config={config_hash(self.cfg)} seed={self.seed}\n"

    def path(self, name: str) -> str:
        return os.path.join(self.workdir, name)

    def need(self, name: str, stage: str) -> str:
        p = self.path(name)
        if not os.path.exists(p):
            raise DependencyError(f"missing artifact {name}: run the '{stage}' stage first")
        return p

    def need_input(self, key: str) -> str:
        p = self.cfg["inputs"].get(key)
        if p is None:
            raise ConfigError(f"inputs.{key} is required for this stage")
        if not os.path.exists(p):
            raise ConfigError(f"input {key!r} not found: {p}")
        return p

    def open_out(self, name: str):
        p = self.path(name)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        fh = open(p, "w", encoding="utf-8", newline="")
        return fh


# --- artifact helpers -----------------------------------------------------------------

def write_timelines(timelines: Mapping[str, corpus.UserTimeline], fh) -> None:
    for uid in sorted(timelines):
        tl = timelines[uid]
        rec = {
            "user_id": uid,
            "description": tl.profile_description,
            "friends": tl.friends,
            "followers": tl.followers,
            "raw_tweet_count": tl.raw_tweet_count,
            "retweet_count": tl.retweet_count,
            "mention_count": tl.mention_count,
            "tweets": [[t.timestamp, t.text, *(t.coordinates or ())] for t in tl.tweets],
        }
        fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def read_timelines(path: str) -> dict[str, corpus.UserTimeline]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for ln in fh:
            if ln.startswith("#") or not ln.strip():
                continue
            r = json.loads(ln)
            tweets = [corpus.GeoTweet(r["user_id"], float(t[0]), t[1],
                                      (float(t[2]), float(t[3])) if len(t) > 2 else None)
                      for t in r["tweets"]]
            out[r["user_id"]] = corpus.UserTimeline(
                r["user_id"], tweets, r["description"], r["friends"], r["followers"],
                r["raw_tweet_count"], r["retweet_count"], r["mention_count"])
    return out


def write_labels(labels: Mapping[str, int], fh, header: str, extra: Mapping[str, float] | None = None,
                 extra_name: str = "value") -> None:
    fh.write(header)
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["user_id", "label"] + ([extra_name] if extra is not None else []))
    for u in sorted(labels):
        w.writerow([u, labels[u]] + ([repr(float(extra[u]))] if extra is not None else []))


def read_labels(path: str) -> dict[str, int]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {r["user_id"]: int(r["label"]) for r in csv.DictReader(ln for ln in fh if not ln.startswith("#"))}


def read_annotations(path: str) -> dict[str, list[int]]:
    """``user_id, score[, score2]`` with expert SES scores 1..9."""
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(ln for ln in fh if not ln.startswith("#")):
            scores = []
            for key in ("score", "score2"):
                v = (r.get(key) or "").strip()
                if not v:
                    continue
                try:
                    s = int(v)
                except ValueError as exc:
                    raise DataError(f"annotation for {r['user_id']}: {v!r} is not an integer") from exc
                if not 1 <= s <= 9:
                    raise DataError(f"annotation for {r['user_id']}: score {s} outside 1..9")
                scores.append(s)
            if not scores:
                raise DataError(f"annotation for {r['user_id']} has no score")
            out[r["user_id"]] = scores
    return out


def ses_class(score: int) -> int:
    """Expert scores 1-5 are low (0), 6-9 high (1)."""
    return int(score >= 6)


def _fmt(x: float) -> str:
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.6f}"


# --- stages -------------------------------------------------------------------------

def stage_synth(ctx: Context) -> None:
    spec = synth_spec(ctx.cfg)
    out = ctx.cfg["synth"]["out_dir"]
    os.makedirs(out, exist_ok=True)
    pop = synth.synth_generate(spec, ctx.seed)
    h = ctx.header

    def w(name):
        return open(os.path.join(out, name), "w", encoding="utf-8", newline="")

    with w("stream.jsonl") as fh:
        fh.write(h)
        corpus.write_stream(pop.tweets, fh)
    with w("profiles.csv") as fh:
        fh.write(h)
        corpus.write_profiles(pop.profiles, fh)
    with w("cells.jsonl") as fh:
        fh.write(h)
        census.write_cells(pop.cells, fh)
    with w("salary_table.csv") as fh:
        fh.write(h)
        occupation.write_salary_table(pop.salary_table, fh)
    with w("job_profiles.csv") as fh:
        fh.write(h)
        occupation.write_profiles(pop.job_profiles, fh)
    with w("overrides.csv") as fh:
        fh.write(h)
        cw = csv.writer(fh, lineterminator="\n")
        cw.writerow(["user_id", "occupation_id"])
        for u in sorted(pop.overrides):
            cw.writerow([u, pop.overrides[u]])
    with w("annotations.csv") as fh:
        fh.write(h)
        cw = csv.writer(fh, lineterminator="\n")
        cw.writerow(["user_id", "score", "score2"])
        for u in sorted(pop.annotations):
            cw.writerow([u, pop.annotations[u], pop.second_annotations.get(u, "")])
    with w("truth.json") as fh:
        fh.write(h)
        json.dump({"classes": pop.classes, "bots": pop.bots,
                   "homes": {u: list(v) for u, v in pop.homes.items()},
                   "occupations": pop.occupations,
                   "topic_polarity": pop.topic_polarity.tolist()}, fh, sort_keys=True)
        fh.write("\n")
    ctx.log(f"synth: {spec.n_users} users, {len(pop.tweets)} tweets, {len(pop.bots)} bots -> {out}")


def stage_preprocess(ctx: Context) -> None:
    stats = corpus.ParseStats()
    tweets = corpus.parse_stream(ctx.need_input("stream"), stats)
    prof_path = ctx.cfg["inputs"]["profiles"]
    profiles = corpus.read_profiles(prof_path) if prof_path else {}
    if stats.parsed == 0:
        raise DataError("the tweet stream holds no parseable record")
    timelines = corpus.build_timelines(tweets, profiles)
    os.makedirs(ctx.workdir, exist_ok=True)
    with ctx.open_out("timelines.jsonl") as fh:
        fh.write(ctx.header)
        write_timelines(timelines, fh)
    with ctx.open_out("preprocess_stats.csv") as fh:
        fh.write(ctx.header)
        fh.write("lines,parsed,malformed,coords_dropped,users\n")
        fh.write(f"{stats.lines},{stats.parsed},{stats.malformed},{stats.coords_dropped},{len(timelines)}\n")
    ann = ctx.cfg["inputs"]["annotations"]
    if ann:
        scores = read_annotations(ann)
        labels = {u: ses_class(s[0]) for u, s in scores.items()}
        with ctx.open_out("labels_annotated.csv") as fh:
            write_labels(labels, fh, ctx.header, {u: s[0] for u, s in scores.items()}, "score")
    ctx.log(f"preprocess: {stats.parsed} records ({stats.malformed} malformed), {len(timelines)} users")


def stage_homes(ctx: Context) -> None:
    tweets = corpus.parse_stream(ctx.need_input("stream"))
    index = census.load_cells(ctx.need_input("cells"))
    traces = homeloc.traces_from_tweets(tweets)
    homes, status = homeloc.select_homes(traces, index, homeloc.FilterConfig(**ctx.cfg["homes"]))
    os.makedirs(ctx.workdir, exist_ok=True)
    with ctx.open_out("homes.csv") as fh:
        homeloc.write_homes(status, homes, fh, header=ctx.header)
    ctx.log(f"homes: {len(homes)} of {len(traces)} geolocated users kept")


def stage_census_join(ctx: Context) -> None:
    homes = homeloc.read_homes(ctx.need("homes.csv", "homes"))
    index = census.load_cells(ctx.need_input("cells"))
    rows = [a for a in (census.assign_income(homes[u], index) for u in sorted(homes)) if a is not None]
    if not rows:
        raise DataError("no home falls inside a census cell")
    incomes = {r.user_id: r.median_income for r in rows}
    labels = census.label_binary(incomes)
    with ctx.open_out("incomes.csv") as fh:
        census.write_assignments(rows, fh, header=ctx.header)
    with ctx.open_out("labels_census.csv") as fh:
        write_labels(labels, fh, ctx.header, incomes, "median_income")
    low, high = census.class_fractions(labels)
    ctx.log(f"census-join: {len(labels)} users labelled, low {low:.3f} / high {high:.3f}")


def stage_occupations(ctx: Context) -> None:
    table = occupation.load_salary_table(ctx.need_input("salary_table"))
    profiles = occupation.load_profiles(ctx.need_input("job_profiles"))
    matches = occupation.match_profiles(profiles, table, ctx.cfg["occupation"]["threshold"])
    ov = ctx.cfg["inputs"]["overrides"]
    if ov:
        try:
            matches = occupation.apply_overrides(matches, occupation.load_overrides(ov), table)
        except KeyError as exc:
            raise DataError(exc.args[0]) from exc
    try:
        labels, (low, high) = occupation.label_binary_by_salary(matches, table)
    except occupation.UnresolvedUsersError as exc:
        raise DataError(str(exc)) from exc
    with ctx.open_out("matches.csv") as fh:
        occupation.write_matches(matches, table, labels, fh, header=ctx.header)
    salaries = {u: table[m.occupation_id].salary for u, m in matches.items()}
    with ctx.open_out("labels_occupation.csv") as fh:
        write_labels(labels, fh, ctx.header, salaries, "salary")
    ctx.log(f"occupations: {len(labels)} users labelled, low {low:.3f} / high {high:.3f}")


def _load_timelines(ctx):
    return read_timelines(ctx.need("timelines.jsonl", "preprocess"))


def stage_embed(ctx: Context) -> None:
    timelines = _load_timelines(ctx)
    e = dict(ctx.cfg["embed"])
    vocab = build_vocabulary(timelines, e.pop("min_count"))
    cfg = SkipGramConfig(**e, seed=stage_seed(ctx.seed, 10) % 2**31)
    try:
        E = train_skipgram(timelines, vocab, cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    with ctx.open_out("embeddings.txt") as fh:
        write_embeddings(E, fh, header=ctx.header)
    ctx.log(f"embed: {len(vocab)} words, final epoch loss {E.epoch_loss[-1]:.4f}")


def stage_topics(ctx: Context) -> None:
    E = read_embeddings(ctx.need("embeddings.txt", "embed"))
    timelines = _load_timelines(ctx)
    K = ctx.cfg["topics"]["K"]
    try:
        M = similarity_matrix(E.vectors, E.words)
        model = spectral_cluster(M, K, seed=stage_seed(ctx.seed, 11) % 2**31, words=E.words,
                                 n_init=ctx.cfg["topics"]["n_init"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    ids = sorted(timelines)
    P = topic_distributions(timelines, model, ids)
    with ctx.open_out("topics.csv") as fh:
        write_topic_model(model, fh, header=ctx.header)
    with ctx.open_out("distributions.csv") as fh:
        write_distributions(ids, P, fh, header=ctx.header)
    ctx.log(f"topics: {K} topics over {len(E.words)} words; sizes {int(model.sizes().min())}..{int(model.sizes().max())}")


def stage_features(ctx: Context) -> None:
    timelines = _load_timelines(ctx)
    ids, P = read_distributions(ctx.need("distributions.csv", "topics"))
    topics = dict(zip(ids, P))
    missing = sorted(set(timelines) - set(topics))
    if missing:
        raise DependencyError(f"distributions.csv lacks {len(missing)} users: rerun the 'topics' stage")
    docs = {u: features.user_document(tl) for u, tl in timelines.items()}
    f = ctx.cfg["features"]
    sel = features.select_ngrams(docs, f["n1"], f["n2"])
    schema = features.build_schema(sel, P.shape[1])
    uids, X = features.assemble_matrix(timelines, schema, topics)
    with ctx.open_out("schema.txt") as fh:
        features.write_schema(schema, fh, header=ctx.header)
    with ctx.open_out("features.tsv") as fh:
        features.write_matrix(uids, X, schema, fh, header=ctx.header)
    ctx.log(f"features: {X.shape[0]} users x {X.shape[1]} features, schema {schema.hash[:12]}")


def _labels_for_track(ctx) -> dict[str, int]:
    track = ctx.cfg["track"]
    stage = {"census": "census-join", "occupation": "occupations", "annotated": "preprocess"}[track]
    return read_labels(ctx.need(f"labels_{track}.csv", stage))


def _dataset(ctx) -> Dataset:
    fpath = ctx.need("features.tsv", "features")
    schema = features.read_schema(ctx.need("schema.txt", "features"))
    uids, X, names, h = features.read_matrix(fpath)
    if h != schema.hash or tuple(names) != schema.names:
        raise DependencyError("features.tsv does not match schema.txt: rerun the 'features' stage")
    labels = _labels_for_track(ctx)
    keep = [i for i, u in enumerate(uids) if u in labels]
    if not keep:
        raise DataError("no labelled user has features")
    ids = [uids[i] for i in keep]
    y = np.array([labels[u] for u in ids], dtype=np.int64)
    try:
        return Dataset(X[keep], y, ids, list(names))
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _plan(ctx) -> CVPlan:
    t = ctx.cfg["train"]
    return CVPlan(t["outer_folds"], t["inner_folds"], t["inner_repeats"], t["n_configs"], ctx.seed)


def stage_train(ctx: Context) -> None:
    data = _dataset(ctx)
    plan = _plan(ctx)
    t = ctx.cfg["train"]
    for fam in t["families"]:
        space = parse_space(t["space"][fam]) if fam in t["space"] else SEARCH_SPACES[fam]
        fixed = t["fixed"].get(fam, {})
        try:
            rep = nested_cv(data, fam, plan, space=space, fixed=fixed)
        except StratificationError as exc:
            raise DataError(str(exc)) from exc
        # final model: the fold winner with the best mean inner AUC, refit on all labelled users
        winners = [(f.inner_auc[f.best_index].mean(), -f.fold, f.best_params) for f in rep.folds]
        best = max(winners, key=lambda w: (w[0], w[1]))[2]
        train_fn, param_cls = FAMILIES[fam]
        model = train_fn(data.X, data.y, param_cls(**best), stage_seed(ctx.seed, 20))
        save_model(model, ctx.path(f"model_{fam}.json"), header=ctx.header)
        doc = {
            "family": fam,
            "track": ctx.cfg["track"],
            "plan": dataclasses.asdict(plan),
            "n_users": len(data.y),
            "class_counts": np.bincount(data.y, minlength=2).tolist(),
            "folds": [{
                "fold": f.fold,
                "train_size": len(f.train_ids),
                "test_size": len(f.test_ids),
                "test_auc": f.test_auc,
                "best_index": f.best_index,
                "best_params": f.best_params,
                "inner_fits_per_config": int(f.inner_auc.shape[1]),
                "inner_mean_auc": f.inner_auc.mean(axis=1).tolist(),
            } for f in rep.folds],
            "auc_mean": rep.mean,
            "auc_std": rep.std,
            "counters": rep.counters,
            "final_params": best,
        }
        with ctx.open_out(f"cv_{fam}.json") as fh:
            fh.write(ctx.header)
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")
        fold_of = {}
        for f in rep.folds:
            for u in f.test_ids:
                fold_of[u] = f.fold
        with ctx.open_out(f"oof_{fam}.csv") as fh:
            fh.write(ctx.header)
            fh.write("user_id,fold,label,proba\n")
            for u, yy, p in zip(rep.user_ids, rep.y, rep.oof_proba):
                fh.write(f"{u},{fold_of[u]},{int(yy)},{float(p)!r}\n")
        ctx.log(f"train: {rep.summary()}")


def _read_cv(path):
    with open(path, encoding="utf-8") as fh:
        return json.loads("".join(ln for ln in fh if not ln.startswith("#")))


def _read_oof(path):
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return ([r["user_id"] for r in rows], np.array([int(r["fold"]) for r in rows]),
            np.array([int(r["label"]) for r in rows]), np.array([float(r["proba"]) for r in rows]))


def stage_evaluate(ctx: Context) -> None:
    thr = ctx.cfg["evaluate"]["threshold"]
    rows = []
    for fam in ctx.cfg["train"]["families"]:
        cv = _read_cv(ctx.need(f"cv_{fam}.json", "train"))
        _, fold, y, p = _read_oof(ctx.need(f"oof_{fam}.csv", "train"))
        curve = roc_curve(p, y)
        summ = precision_recall_f1((p >= thr).astype(int), y)
        with ctx.open_out(f"roc_{fam}.csv") as fh:
            fh.write(ctx.header)
            fh.write("fpr,tpr,threshold\n")
            ths = np.concatenate([[np.inf], curve.thresholds])
            for a, b, c in zip(curve.fpr, curve.tpr, ths):
                fh.write(f"{a!r},{b!r},{c!r}\n")
        row = {"track": ctx.cfg["track"], "family": fam, "auc_mean": cv["auc_mean"], "auc_std": cv["auc_std"],
               "pooled_auc": curve.auc, "n": len(y)}
        for c in (0, 1):
            m = summ.per_class[c]
            row.update({f"precision_{c}": m.precision, f"recall_{c}": m.recall, f"f1_{c}": m.f1,
                        f"support_{c}": m.support})
        row["flags"] = "|".join(summ.flags)
        rows.append(row)
    cols = list(rows[0])
    with ctx.open_out("metrics.csv") as fh:
        fh.write(ctx.header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([(repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in (r[c] for c in cols)])
    ann = ctx.cfg["inputs"]["annotations"]
    if ann:
        scores = read_annotations(ann)
        pairs = [(ses_class(s[0]), ses_class(s[1])) for s in scores.values() if len(s) > 1]
        with ctx.open_out("agreement.csv") as fh:
            fh.write(ctx.header)
            fh.write("n,percent_agreement,kappa,degenerate\n")
            if pairs:
                a, b = map(np.array, zip(*pairs))
                st = agreement(a, b)
                fh.write(f"{st.n},{st.percent_agreement!r},{st.kappa!r},{int(st.degenerate)}\n")
    for r in rows:
        ctx.log(f"evaluate: {r['family']} AUC {r['auc_mean']:.3f} ± {r['auc_std']:.3f} (pooled {r['pooled_auc']:.3f})")


def _table(headers, rows) -> str:
    cells = [headers] + [[str(c) for c in r] for r in rows]
    width = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    line = "-+-".join("-" * w for w in width)
    out = [" | ".join(h.ljust(w) for h, w in zip(headers, width)), line]
    out += [" | ".join(c.ljust(w) for c, w in zip(r, width)) for r in cells[1:]]
    return "\n".join(out) + "\n"


def _write_report(ctx, name, headers, rows, title):
    with ctx.open_out(f"report/{name}.txt") as fh:
        fh.write(ctx.header)
        fh.write(title + "\n\n")
        fh.write(_table(headers, rows))
    with ctx.open_out(f"report/{name}.csv") as fh:
        fh.write(ctx.header)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(headers)
        w.writerows(rows)


def stage_report(ctx: Context) -> None:
    metrics_path = ctx.need("metrics.csv", "evaluate")
    with open(metrics_path, encoding="utf-8", newline="") as fh:
        metrics = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))

    # dataset summary: every label set present in the workdir
    rows = []
    for track in TRACKS:
        p = ctx.path(f"labels_{track}.csv")
        if os.path.exists(p):
            lab = read_labels(p)
            low, high = census.class_fractions(lab)
            rows.append([track, len(lab), f"{low:.2f}", f"{high:.2f}"])
    _write_report(ctx, "table1", ["dataset", "users", "low_ses", "high_ses"], rows, "Dataset summary")

    rows = [[m["track"], m["family"], f"{float(m['auc_mean']):.3f} ± {float(m['auc_std']):.3f}",
             f"{float(m['pooled_auc']):.3f}"] for m in metrics]
    _write_report(ctx, "table2", ["dataset", "model", "auc (outer cv)", "pooled auc"], rows,
                  "AUC over outer folds (mean ± std)")

    rows = []
    for m in metrics:
        for c, name in ((0, "low"), (1, "high")):
            rows.append([m["family"], name, f"{float(m[f'precision_{c}']):.3f}",
                         f"{float(m[f'recall_{c}']):.3f}", f"{float(m[f'f1_{c}']):.3f}", m[f"support_{c}"]])
    _write_report(ctx, "table4", ["model", "class", "precision", "recall", "f1", "support"], rows,
                  "Per-class performance of out-of-fold predictions")

    # plot-ready data
    if os.path.exists(ctx.path("incomes.csv")):
        with open(ctx.path("incomes.csv"), encoding="utf-8", newline="") as fh:
            inc = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
        x = np.array([float(r["median_income"]) for r in inc])
        f, c = census.lorenz_curve(x)
        with ctx.open_out("report/fig3_lorenz.csv") as fh:
            fh.write(ctx.header)
            fh.write(f"# gini={census.gini(x)!r}\n")
            fh.write("population_fraction,income_share\n0.0,0.0\n")
            for a, b in zip(f, c):
                fh.write(f"{a!r},{b!r}\n")
        ninth = {r["user_id"]: float(r["ninth_decile"]) for r in inc}
        if os.path.exists(ctx.path("distributions.csv")):
            ids, P = read_distributions(ctx.path("distributions.csv"))
            keep = [i for i, u in enumerate(ids) if u in ninth]
            if keep:
                gap = topic_income_discrimination(P[keep], np.array([ninth[ids[i]] for i in keep]))
                with ctx.open_out("report/fig5_topic_income.csv") as fh:
                    fh.write(ctx.header)
                    fh.write("topic,mention_mean,other_mean,mention_n,other_n\n")
                    for t in range(P.shape[1]):
                        fh.write(f"{t + 1},{_fmt(gap.mention_mean[t])},{_fmt(gap.other_mean[t])},"
                                 f"{gap.mention_n[t]},{gap.other_n[t]}\n")
    if os.path.exists(ctx.path("homes.csv")) and ctx.cfg["inputs"]["stream"]:
        homes = homeloc.read_homes(ctx.path("homes.csv"))
        traces = homeloc.traces_from_tweets(corpus.parse_stream(ctx.cfg["inputs"]["stream"]))
        prof = homeloc.hourly_distance_profile({u: traces[u] for u in homes if u in traces}, homes)
        rate = None
        pat = ctx.cfg["inputs"]["home_patterns"]
        if pat and os.path.exists(ctx.path("timelines.jsonl")):
            rate = homeloc.expression_rate_profile(_load_timelines(ctx), homeloc.read_patterns(pat), homes)
        with ctx.open_out("report/fig1_hourly.csv") as fh:
            fh.write(ctx.header)
            fh.write("hour,mean_distance_km,points" + (",home_expression_rate" if rate else "") + "\n")
            for h in range(24):
                tail = f",{float(rate.values[h])!r}" if rate else ""
                fh.write(f"{h},{float(prof.values[h])!r},{int(prof.counts[h])}{tail}\n")
    if os.path.exists(ctx.path("distributions.csv")):
        ids, P = read_distributions(ctx.path("distributions.csv"))
        if len(ids) >= 2:
            tc = topic_correlation(P)
            labels = {}
            lab_path = ctx.cfg["inputs"]["topic_labels"]
            if lab_path:
                labels = read_topic_labels(lab_path)
            with ctx.open_out("report/fig4_topic_correlation.csv") as fh:
                fh.write(ctx.header)
                if len(tc.zero_variance):
                    fh.write("# zero_variance_topics=" + " ".join(str(t + 1) for t in tc.zero_variance) + "\n")
                names = [labels.get(int(t), f"t{int(t) + 1}") for t in tc.order]
                fh.write("topic," + ",".join(names) + "\n")
                R = tc.ordered
                for nm, row in zip(names, R):
                    fh.write(nm + "," + ",".join(f"{v:.6f}" for v in row) + "\n")
    for fam in ctx.cfg["train"]["families"]:
        roc = ctx.path(f"roc_{fam}.csv")
        if os.path.exists(roc):
            with open(roc, encoding="utf-8") as src, ctx.open_out(f"report/fig6_roc_{fam}.csv") as dst:
                dst.write("".join(ln for ln in src))
    ctx.log(f"report: tables written to {ctx.path('report')}")


STAGES: dict[str, Callable[[Context], None]] = {
    "synth": stage_synth,
    "preprocess": stage_preprocess,
    "homes": stage_homes,
    "census-join": stage_census_join,
    "occupations": stage_occupations,
    "embed": stage_embed,
    "topics": stage_topics,
    "features": stage_features,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "report": stage_report,
}


def run_stage(name: str, cfg: dict, log: Callable[[str], None] = print) -> None:
    validate_config(cfg, check_inputs=name != "synth")
    os.makedirs(cfg["workdir"], exist_ok=True)
    STAGES[name](Context(cfg, log))
