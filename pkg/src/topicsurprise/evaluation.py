"""Surprise-detection and serendipity-recommendation evaluation, plus tuning."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .history import DEFAULT_BURN_IN, Corpus
from .models import ModelConfig, UserRun, run_users
from .neighbors import SnapshotIndex, build_index, find_serendipity_snapshot, query_top_n

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def tally(cls, predicted: Iterable[bool], actual: Iterable[bool]) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for p, a in zip(predicted, actual):
            if p and a:
                tp += 1
            elif p:
                fp += 1
            elif a:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float

    def as_percent(self) -> tuple[float, float, float]:
        return 100 * self.precision, 100 * self.recall, 100 * self.f1


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def metrics_from_counts(c: ConfusionCounts) -> Metrics:
    """Precision, recall and F1, with 0/0 taken as 0."""
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    return Metrics(p, r, _f1(p, r))


def _surprise_values(run) -> np.ndarray:
    if isinstance(run, UserRun):
        return run.surprise
    return np.array([getattr(o, "surprise", o) for o in run], dtype=float)


def surprise_detection_counts(
    run, annotations: Mapping[int, bool], tau_s: float, burn_in: int = DEFAULT_BURN_IN
) -> ConfusionCounts:
    surprise = _surprise_values(run)
    positions = [p for p in sorted(annotations) if p > burn_in]
    for p in positions:
        if p > surprise.size:
            raise ValueError(f"annotation position {p} beyond run of length {surprise.size}")
    return ConfusionCounts.tally(
        (surprise[p - 1] > tau_s for p in positions), (annotations[p] for p in positions)
    )


def eval_surprise_detection(
    run, annotations: Mapping[int, bool], tau_s: float, burn_in: int = DEFAULT_BURN_IN
) -> Metrics:
    """Flag position t as surprising when its own surprise exceeds ``tau_s``;
    score against the manual labels at every annotated position after burn-in.

    ``run`` is a :class:`UserRun` or a sequence of outcomes / surprise values.
    """
    return metrics_from_counts(surprise_detection_counts(run, annotations, tau_s, burn_in))


def serendipity_counts(
    user_id: str,
    run: UserRun,
    index: SnapshotIndex,
    tau_s: float,
    tau_d: float,
    n: int,
    annotations: Mapping[int, bool],
    burn_in: int = DEFAULT_BURN_IN,
) -> ConfusionCounts:
    tp = fp = fn = tn = 0
    ratings = run.ratings
    for i in range(max(burn_in, 1), len(run)):
        if i + 1 not in annotations:
            continue
        hit = find_serendipity_snapshot(index, user_id, run.preferences[i - 1], tau_d, n)
        if hit is None:
            continue
        actual = annotations[i + 1] and ratings[i] > 0
        if hit[0].next_surprise > tau_s:
            tp, fp = (tp + 1, fp) if actual else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if actual else (fn, tn + 1)
    return ConfusionCounts(tp, fp, fn, tn)


def eval_serendipity(
    user_id: str,
    run: UserRun,
    index: SnapshotIndex,
    tau_s: float,
    tau_d: float,
    n: int,
    annotations: Mapping[int, bool],
    burn_in: int = DEFAULT_BURN_IN,
) -> Metrics:
    """Serendipity recommendation for one reference user.

    ``run`` supplies the user's preference trajectory (from the similarity
    model) and ratings. Steps where no neighbour qualifies count nowhere.
    """
    return metrics_from_counts(
        serendipity_counts(user_id, run, index, tau_s, tau_d, n, annotations, burn_in)
    )


def random_baseline_expected(predict_prob: float, positives: int, total: int) -> Metrics:
    """Expected metrics of flagging each of ``total`` items independently with
    probability ``predict_prob`` when ``positives`` of them are true."""
    if not 0.0 <= predict_prob <= 1.0:
        raise ValueError("predict_prob must be in [0, 1]")
    if total <= 0 or not 0 <= positives <= total:
        raise ValueError(f"need 0 <= positives <= total and total > 0, got {positives}/{total}")
    precision = positives / total
    recall = predict_prob if positives else 0.0
    if predict_prob == 0:
        # nothing is ever flagged
        return Metrics(0.0, 0.0, 0.0)
    if predict_prob == precision:
        return Metrics(precision, precision, precision)
    return Metrics(precision, recall, _f1(precision, recall))


def serendipity_positives(run: UserRun, annotations: Mapping[int, bool], burn_in: int) -> tuple[int, int]:
    """(# annotated positions that are surprising and liked, # annotated positions)."""
    positions = [p for p in annotations if burn_in < p <= len(run)]
    pos = sum(1 for p in positions if annotations[p] and run.ratings[p - 1] > 0)
    return pos, len(positions)


# --- tuning -----------------------------------------------------------------


@dataclass(frozen=True)
class GridPoint:
    model: ModelConfig
    tau_s: float
    tau_d: float = math.inf
    top_n: int = 50
    sim_model: ModelConfig | None = None

    def label(self) -> str:
        name = self.model.label()
        if self.sim_model is not None:
            name += "+" + self.sim_model.label()
        return f"{name} tau_s={self.tau_s:.6g} tau_d={self.tau_d:.6g} N={self.top_n}"

    @property
    def similarity(self) -> ModelConfig:
        return self.sim_model or self.model


@dataclass
class HeldOutResult:
    user_id: str
    point: GridPoint
    metrics: Metrics
    train_f1: float


@dataclass
class TuningResult:
    rows: list[HeldOutResult]
    average_f1: float = field(init=False)

    def __post_init__(self):
        self.average_f1 = float(np.mean([r.metrics.f1 for r in self.rows])) if self.rows else 0.0


class EvalContext:
    """Caches model runs, indices and neighbour lists over one corpus.

    The corpus and every cached object are treated as immutable.
    """

    def __init__(self, corpus: Corpus, burn_in: int = DEFAULT_BURN_IN, jobs: int = 1,
                 min_step: int | None = None):
        self.corpus = corpus
        self.burn_in = burn_in
        self.min_step = burn_in if min_step is None else min_step
        self.jobs = jobs
        self.labels = corpus.labels()
        self._runs: dict[ModelConfig, dict[str, UserRun]] = {}
        self._indices: dict[tuple, SnapshotIndex] = {}
        self._neighbors: dict[tuple, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def reference_users(self) -> list[str]:
        return list(self.labels)

    def runs(self, config: ModelConfig) -> dict[str, UserRun]:
        if config not in self._runs:
            self._runs[config] = run_users(config, self.corpus.histories, self.corpus.topics, self.jobs)
        return self._runs[config]

    def index(self, model: ModelConfig, sim_model: ModelConfig | None = None) -> SnapshotIndex:
        key = (model, sim_model)
        if key not in self._indices:
            sim_runs = self.runs(sim_model) if sim_model is not None else None
            cfg_hash = model.config_hash() + ("+" + sim_model.config_hash() if sim_model else "")
            self._indices[key] = build_index(self.runs(model), sim_runs, self.min_step, cfg_hash)
        return self._indices[key]

    def neighbor_table(self, model, sim_model, user_id: str, n_max: int):
        """Per evaluated step of ``user_id``: the n_max nearest snapshots.

        Returns (steps, distances[steps, n_max], surprise[...], liked[...]);
        missing neighbours are padded with distance +inf.
        """
        key = (model, sim_model, user_id)
        cached = self._neighbors.get(key)
        if cached is not None and cached[1].shape[1] >= n_max:
            return cached
        index = self.index(model, sim_model)
        run = self.runs(sim_model or model)[user_id]
        ann = self.labels.get(user_id, {})
        steps = [i for i in range(max(self.burn_in, 1), len(run)) if i + 1 in ann]
        dist = np.full((len(steps), n_max), np.inf)
        sur = np.zeros((len(steps), n_max))
        liked = np.zeros((len(steps), n_max), dtype=bool)
        for row, i in enumerate(steps):
            hits = query_top_n(index, run.preferences[i - 1], n_max, exclude_user=user_id)
            for col, (snap, d) in enumerate(hits):
                dist[row, col] = d
                sur[row, col] = snap.next_surprise
                liked[row, col] = snap.next_rating_centered > 0
        table = (np.array(steps, dtype=int), dist, sur, liked)
        self._neighbors[key] = table
        return table

    def score(self, point: GridPoint, user_id: str, mode: str) -> Metrics:
        return metrics_from_counts(self.counts(point, user_id, mode))

    def counts(self, point: GridPoint, user_id: str, mode: str) -> ConfusionCounts:
        ann = self.labels[user_id]
        if mode == "surprise":
            return surprise_detection_counts(self.runs(point.model)[user_id], ann, point.tau_s, self.burn_in)
        if mode != "serendipity":
            raise ValueError(f"unknown mode {mode!r}")
        steps, dist, sur, liked = self.neighbor_table(point.model, point.sim_model, user_id, point.top_n)
        best = _best_next_surprise(dist[:, : point.top_n], sur[:, : point.top_n],
                                   liked[:, : point.top_n], point.tau_d)
        ratings = self.runs(point.model)[user_id].ratings
        found = ~np.isnan(best)
        actual = np.array([ann[i + 1] and ratings[i] > 0 for i in steps], dtype=bool)
        predicted = best > point.tau_s
        return ConfusionCounts.tally(predicted[found], actual[found])


def _best_next_surprise(dist, sur, liked, tau_d) -> np.ndarray:
    """Max next-item surprise over qualifying neighbours per row, NaN if none."""
    ok = (dist < tau_d) & liked
    masked = np.where(ok, sur, -np.inf)
    best = masked.max(axis=1) if masked.shape[1] else np.full(masked.shape[0], -np.inf)
    return np.where(ok.any(axis=1) if ok.shape[1] else False, best, np.nan)


def tune_leave_one_out(
    grid: Sequence[GridPoint],
    users: Sequence[str],
    mode: str,
    context: EvalContext,
) -> TuningResult:
    """For each held-out user pick the grid point with the best mean F1 on the
    remaining users (first in grid order on ties) and report its held-out metrics."""
    if not grid:
        raise ValueError("tuning grid is empty")
    if len(users) < 2:
        raise ValueError("leave-one-out tuning needs at least two annotated users")
    f1 = np.zeros((len(grid), len(users)))
    metrics: dict[tuple[int, int], Metrics] = {}
    for g, point in enumerate(grid):
        for u, user in enumerate(users):
            m = context.score(point, user, mode)
            metrics[g, u] = m
            f1[g, u] = m.f1
    rows = []
    for u, user in enumerate(users):
        train = np.delete(f1, u, axis=1).mean(axis=1)
        g = int(np.argmax(train))  # first maximum wins
        rows.append(HeldOutResult(user, grid[g], metrics[g, u], float(train[g])))
        log.info("held out %s: %s  F1=%.3f", user, grid[g].label(), metrics[g, u].f1)
    return TuningResult(rows)


# Hyperparameter grids used when no explicit grid is supplied.
DEFAULT_HYPERPARAMETERS = {
    "beta": (0.1, 0.5, 1.0, 2.0),
    "prior_variance": (0.1, 0.5, 1.0, 2.0),
    "tau_v": (0.01, 0.05, 0.1, 0.5),
    "r1": (0.5, 1.0, 2.0, 4.0),
    "r2": (0.5, 1.0, 2.0, 4.0),
    "eta": (0.05, 0.1, 0.2, 0.5),
    "horizon_k": (1, 2, 4),
    "top_n": (10, 50, 100),
}


def model_grid(kind: str, hyper: Mapping[str, Sequence] | None = None) -> list[ModelConfig]:
    hyper = {**DEFAULT_HYPERPARAMETERS, **(hyper or {})}
    names = {
        "BLR": ("beta", "prior_variance"),
        "vbBLR": ("beta", "prior_variance", "tau_v"),
        "AROW": ("r1", "r2"),
        "NLMS": ("eta", "horizon_k"),
        "Basic": (),
    }[kind]
    return [ModelConfig(kind=kind, **dict(zip(names, values)))
            for values in itertools.product(*(hyper[n] for n in names))]


def deciles(values) -> list[float]:
    values = np.asarray(values, dtype=float)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return [0.0]
    return sorted(set(np.quantile(values, np.linspace(0.1, 0.9, 9)).tolist()))


def default_grid(
    context: EvalContext,
    kind: str,
    mode: str,
    sim_model: ModelConfig | None = None,
    hyper: Mapping[str, Sequence] | None = None,
) -> list[GridPoint]:
    """Model hyperparameters from fixed grids; thresholds from empirical deciles.

    tau_s deciles come from the surprise values the thresholds act on; tau_d
    deciles from distances between reference queries and their nearest
    snapshots.
    """
    hyper = {**DEFAULT_HYPERPARAMETERS, **(hyper or {})}
    users = context.reference_users
    points = []
    for model in model_grid(kind, hyper):
        if mode == "surprise":
            vals = np.concatenate([context.runs(model)[u].surprise[context.burn_in:] for u in users])
            points += [GridPoint(model, t) for t in deciles(vals)]
            continue
        index = context.index(model, sim_model)
        n_max = max(hyper["top_n"])
        dists = np.concatenate([context.neighbor_table(model, sim_model, u, n_max)[1].ravel() for u in users])
        for tau_s, tau_d, n in itertools.product(deciles(index.next_surprise), deciles(dists), hyper["top_n"]):
            points.append(GridPoint(model, tau_s, tau_d, n, sim_model))
    return points
