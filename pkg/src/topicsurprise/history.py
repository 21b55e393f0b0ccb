"""Items, reading histories, ratings and surprise annotations.

Three plain-text formats, comma- or tab-separated (picked from the header):

* topics:      ``item_id,topic_1,...,topic_K``  (K = number of columns - 1)
* histories:   ``user_id,item_id,stars,timestamp``
* annotations: ``user_id,position,surprising``  (position is 1-based, flag 0/1)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_BURN_IN = 15
SIMPLEX_TOL = 1e-6
RENORMALIZE_TOL = 1e-3

HISTORY_HEADER = ("user_id", "item_id", "stars", "timestamp")
ANNOTATION_HEADER = ("user_id", "position", "surprising")


class CorpusError(ValueError):
    pass


def center_rating(stars: int) -> float:
    """Map 1..5 stars onto [-2, 2]."""
    if stars not in (1, 2, 3, 4, 5):
        raise ValueError(f"stars must be an integer in 1..5, got {stars!r}")
    return float(stars - 3)


@dataclass(frozen=True, eq=False)
class ItemRecord:
    item_id: str
    topics: np.ndarray

    @property
    def num_topics(self) -> int:
        return self.topics.size


@dataclass(frozen=True)
class Interaction:
    item_id: str
    stars: int
    timestamp: int

    def __post_init__(self):
        if self.stars not in (1, 2, 3, 4, 5):
            raise ValueError(f"stars must be in 1..5, got {self.stars!r}")


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    interactions: tuple[Interaction, ...]

    def __len__(self) -> int:
        return len(self.interactions)

    @classmethod
    def from_unsorted(cls, user_id: str, interactions: Iterable[Interaction]) -> "UserHistory":
        # sorted() is stable, so timestamp ties keep input order
        return cls(user_id, tuple(sorted(interactions, key=lambda it: it.timestamp)))

    @property
    def item_ids(self) -> list[str]:
        return [it.item_id for it in self.interactions]

    @property
    def stars(self) -> np.ndarray:
        return np.array([it.stars for it in self.interactions], dtype=int)

    @property
    def centered_ratings(self) -> np.ndarray:
        return self.stars.astype(float) - 3.0


@dataclass(frozen=True)
class SurpriseAnnotation:
    user_id: str
    position: int
    surprising: bool


@dataclass
class Corpus:
    items: dict[str, ItemRecord]
    histories: list[UserHistory]
    annotations: list[SurpriseAnnotation] = field(default_factory=list)

    def __post_init__(self):
        self.topics = {k: rec.topics for k, rec in self.items.items()}
        self._by_user = {h.user_id: h for h in self.histories}

    @property
    def num_topics(self) -> int:
        return next(iter(self.items.values())).num_topics if self.items else 0

    def history(self, user_id: str) -> UserHistory:
        return self._by_user[user_id]

    def labels(self) -> dict[str, dict[int, bool]]:
        """Annotations as ``user -> {position: surprising}``."""
        return group_annotations(self.annotations)

    def counts(self) -> dict[str, int]:
        return {
            "items": len(self.items),
            "users": len(self.histories),
            "interactions": sum(len(h) for h in self.histories),
            "annotations": len(self.annotations),
            "annotated_users": len({a.user_id for a in self.annotations}),
        }


def group_annotations(annotations: Iterable[SurpriseAnnotation]) -> dict[str, dict[int, bool]]:
    out: dict[str, dict[int, bool]] = {}
    for a in annotations:
        out.setdefault(a.user_id, {})[a.position] = a.surprising
    return {u: dict(sorted(pos.items())) for u, pos in sorted(out.items())}


def _detect_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _read_rows(path: Path) -> Iterable[tuple[int, list[str]]]:
    """Yield (line number, fields) for every data row; header skipped."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.strip():
            return
        delim = _detect_delimiter(header)
        yield 1, [c.strip() for c in header.rstrip("\r\n").split(delim)]
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, [c.strip() for c in line.split(delim)]


def normalize_topics(values: Sequence[float], where: str = "") -> np.ndarray:
    theta = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(theta)) or np.any(theta < 0):
        raise CorpusError(f"{where}topic vector has negative or non-finite entries")
    total = float(theta.sum())
    if abs(total - 1.0) > RENORMALIZE_TOL:
        raise CorpusError(f"{where}topic vector sums to {total:.6g}, not 1")
    if abs(total - 1.0) > SIMPLEX_TOL:
        theta = theta / total
    return theta


def read_topics(path: str | Path) -> dict[str, ItemRecord]:
    path = Path(path)
    items: dict[str, ItemRecord] = {}
    k = None
    for lineno, row in _read_rows(path):
        if lineno == 1:
            k = len(row) - 1
            if k < 1:
                raise CorpusError(f"{path}:1: header must declare at least one topic column")
            continue
        if len(row) - 1 != k:
            raise CorpusError(f"{path}:{lineno}: expected {k} topic values, got {len(row) - 1}")
        try:
            values = [float(x) for x in row[1:]]
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        theta = normalize_topics(values, where=f"{path}:{lineno}: ")
        if row[0] in items:
            raise CorpusError(f"{path}:{lineno}: duplicate item id {row[0]!r}")
        items[row[0]] = ItemRecord(row[0], theta)
    return items


def read_histories(path: str | Path) -> list[UserHistory]:
    path = Path(path)
    per_user: dict[str, list[Interaction]] = {}
    for lineno, row in _read_rows(path):
        if lineno == 1:
            continue
        if len(row) != 4:
            raise CorpusError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        user, item, stars, ts = row
        try:
            inter = Interaction(item, int(stars), int(ts))
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        per_user.setdefault(user, []).append(inter)
    return [UserHistory.from_unsorted(u, per_user[u]) for u in sorted(per_user)]


def read_annotations(path: str | Path) -> list[SurpriseAnnotation]:
    path = Path(path)
    out = []
    for lineno, row in _read_rows(path):
        if lineno == 1:
            continue
        if len(row) != 3:
            raise CorpusError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
        try:
            pos, flag = int(row[1]), int(row[2])
        except ValueError as exc:
            raise CorpusError(f"{path}:{lineno}: {exc}") from None
        if flag not in (0, 1):
            raise CorpusError(f"{path}:{lineno}: surprising flag must be 0 or 1")
        out.append(SurpriseAnnotation(row[0], pos, bool(flag)))
    return out


def validate_corpus(corpus: Corpus, burn_in: int = DEFAULT_BURN_IN) -> None:
    dims = {rec.num_topics for rec in corpus.items.values()}
    if len(dims) > 1:
        raise CorpusError(f"inconsistent topic counts: {sorted(dims)}")
    missing = sorted(
        {it.item_id for h in corpus.histories for it in h.interactions} - corpus.items.keys()
    )
    if missing:
        shown = ", ".join(missing[:20]) + (" ..." if len(missing) > 20 else "")
        raise CorpusError(f"{len(missing)} unknown item id(s) in histories: {shown}")
    lengths = {h.user_id: len(h) for h in corpus.histories}
    seen = set()
    for a in corpus.annotations:
        if a.user_id not in lengths:
            raise CorpusError(f"annotation for unknown user {a.user_id!r}")
        if not burn_in < a.position <= lengths[a.user_id]:
            raise CorpusError(
                f"annotation position {a.position} for user {a.user_id!r} outside "
                f"{burn_in + 1}..{lengths[a.user_id]}"
            )
        if (a.user_id, a.position) in seen:
            raise CorpusError(f"duplicate annotation {a.user_id!r} position {a.position}")
        seen.add((a.user_id, a.position))


def load_corpus(
    topics_path: str | Path,
    histories_path: str | Path,
    annotations_path: str | Path | None = None,
    burn_in: int = DEFAULT_BURN_IN,
) -> Corpus:
    items = read_topics(topics_path)
    histories = read_histories(histories_path)
    annotations = read_annotations(annotations_path) if annotations_path else []
    corpus = Corpus(items, histories, annotations)
    validate_corpus(corpus, burn_in)
    log.info("loaded corpus: %s", corpus.counts())
    return corpus


def write_topics(path: str | Path, items: Mapping[str, ItemRecord], delimiter: str = "\t") -> None:
    recs = list(items.values())
    k = recs[0].num_topics if recs else 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(delimiter.join(["item_id"] + [f"topic_{i + 1}" for i in range(k)]) + "\n")
        for rec in recs:
            fh.write(delimiter.join([rec.item_id] + [repr(float(x)) for x in rec.topics]) + "\n")


def write_histories(path: str | Path, histories: Iterable[UserHistory], delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(delimiter.join(HISTORY_HEADER) + "\n")
        for h in histories:
            for it in h.interactions:
                fh.write(delimiter.join([h.user_id, it.item_id, str(it.stars), str(it.timestamp)]) + "\n")


def write_annotations(
    path: str | Path, annotations: Iterable[SurpriseAnnotation], delimiter: str = "\t"
) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(delimiter.join(ANNOTATION_HEADER) + "\n")
        for a in annotations:
            fh.write(delimiter.join([a.user_id, str(a.position), str(int(a.surprising))]) + "\n")
