"""Synthetic users whose preferences jump between regimes at planted change-points."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .history import (
    DEFAULT_BURN_IN,
    Corpus,
    Interaction,
    ItemRecord,
    SurpriseAnnotation,
    UserHistory,
    write_annotations,
    write_histories,
    write_topics,
)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_topics: int = 20
    users: int = 50
    history_length: int = 120
    regimes_per_user: int = 3
    regime_topic_count: int = 3
    rating_noise_sd: float = 0.3
    topic_concentration: float = 0.5
    disjoint_supports: bool = True
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self):
        if self.num_topics < 1 or self.users < 0:
            raise ValueError("num_topics must be >= 1 and users >= 0")
        if self.regimes_per_user < 1:
            raise ValueError("regimes_per_user must be >= 1")
        if not 1 <= self.regime_topic_count <= self.num_topics:
            raise ValueError("regime_topic_count must be in 1..num_topics")
        if self.disjoint_supports and self.regimes_per_user * self.regime_topic_count > self.num_topics:
            raise ValueError("disjoint supports need regimes_per_user * regime_topic_count <= num_topics")
        if self.rating_noise_sd < 0 or self.topic_concentration <= 0:
            raise ValueError("rating_noise_sd must be >= 0 and topic_concentration > 0")
        # every change-point must land after burn-in, with at least one item per regime
        if self.history_length - self.burn_in < self.regimes_per_user:
            raise ValueError("history_length too short for the requested regimes after burn-in")


@dataclass
class Population:
    items: dict[str, ItemRecord]
    histories: list[UserHistory]
    labels: list[SurpriseAnnotation]
    change_points: dict[str, list[int]]  # 1-based positions of each regime's first item
    true_preferences: dict[str, np.ndarray]  # (regimes, K)

    def corpus(self) -> Corpus:
        return Corpus(dict(self.items), list(self.histories), list(self.labels))

    def write(self, directory: str | Path) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = {
            "topics": directory / "topics.tsv",
            "histories": directory / "histories.tsv",
            "annotations": directory / "labels.tsv",
        }
        write_topics(paths["topics"], self.items)
        write_histories(paths["histories"], self.histories)
        write_annotations(paths["annotations"], self.labels)
        return paths


def _change_points(rng: np.random.Generator, cfg: SynthConfig) -> list[int]:
    """1-based positions where regimes 2..R begin, all after burn-in."""
    r = cfg.regimes_per_user
    if r == 1:
        return []
    # first regime covers burn-in plus an equal share; the rest split evenly, jittered
    span = cfg.history_length - cfg.burn_in
    base = span / r
    jitter = int(base // 4)
    points = []
    for i in range(1, r):
        centre = cfg.burn_in + round(i * base)
        offset = int(rng.integers(-jitter, jitter + 1)) if jitter else 0
        points.append(centre + offset + 1)
    lo = cfg.burn_in + 2
    out = []
    for p in points:
        p = max(p, lo)
        out.append(p)
        lo = p + 1
    if out[-1] > cfg.history_length:
        out = [cfg.burn_in + 1 + round(i * span / r) for i in range(1, r)]
    return out


def _user(cfg: SynthConfig, index: int):
    rng = np.random.default_rng([cfg.seed, index])
    k, r, c = cfg.num_topics, cfg.regimes_per_user, cfg.regime_topic_count
    if cfg.disjoint_supports:
        perm = rng.permutation(k)
        supports = [np.sort(perm[i * c:(i + 1) * c]) for i in range(r)]
    else:
        supports = [np.sort(rng.choice(k, size=c, replace=False)) for _ in range(r)]
    prefs = np.zeros((r, k))
    for i, sup in enumerate(supports):
        prefs[i, sup] = rng.uniform(-2.0, 2.0, size=c)
    cps = _change_points(rng, cfg)
    bounds = [1] + cps + [cfg.history_length + 1]
    uid = f"u{index:04d}"
    items, inters = [], []
    for regime in range(r):
        for pos in range(bounds[regime], bounds[regime + 1]):
            theta = np.zeros(k)
            theta[supports[regime]] = rng.dirichlet(np.full(c, cfg.topic_concentration))
            theta /= theta.sum()
            noise = rng.normal(0.0, cfg.rating_noise_sd) if cfg.rating_noise_sd else 0.0
            stars = int(np.clip(np.rint(prefs[regime] @ theta + noise) + 3, 1, 5))
            item_id = f"{uid}_i{pos:04d}"
            items.append(ItemRecord(item_id, theta))
            inters.append(Interaction(item_id, stars, pos))
    cp_set = set(cps)
    labels = [
        SurpriseAnnotation(uid, pos, pos in cp_set)
        for pos in range(cfg.burn_in + 1, cfg.history_length + 1)
    ]
    return uid, items, UserHistory(uid, tuple(inters)), labels, cps, prefs


def generate_population(cfg: SynthConfig) -> Population:
    """Deterministic in ``cfg``; each user draws from its own (seed, user index) stream."""
    items: dict[str, ItemRecord] = {}
    histories, labels, cps, prefs = [], [], {}, {}
    for i in range(cfg.users):
        uid, user_items, history, user_labels, user_cps, user_prefs = _user(cfg, i)
        items.update((rec.item_id, rec) for rec in user_items)
        histories.append(history)
        labels.extend(user_labels)
        cps[uid] = user_cps
        prefs[uid] = user_prefs
    return Population(items, histories, labels, cps, prefs)
