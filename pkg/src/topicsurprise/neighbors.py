"""Exact nearest-neighbour search over (user, step) preference snapshots.

The index stores preferences column-major (K x n) and computes squared
distances by accumulating one topic column at a time. Every snapshot therefore
sees exactly the same sequence of floating point operations as the scalar
:func:`preference_distance`, so exact ties are preserved and tie-breaking by
(user_id, step) is reproducible.

Binary cache layout (little endian)::

    magic     8 bytes   b"TSNAPIDX"
    version   uint32    1
    K         uint32
    id_width  uint32    bytes per user/item id field (NUL padded UTF-8)
    count     uint64
    min_step  uint32
    cfg_hash  32 bytes  ASCII, NUL padded
    records   count x { user_id[id_width], step uint32, next_item_id[id_width],
                        next_surprise float64, next_rating float64,
                        preference float64[K] }
"""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .models import UserRun

log = logging.getLogger(__name__)

MAGIC = b"TSNAPIDX"
VERSION = 1
_HEADER = struct.Struct("<8sIIIQI32s")
_BLOCK = 1 << 16


def preference_distance(a, b) -> float:
    """Euclidean distance between two preference vectors."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    acc = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        d = x - y
        acc += d * d
    return math.sqrt(acc)


@dataclass(frozen=True)
class Snapshot:
    user_id: str
    step: int
    preference: np.ndarray
    next_surprise: float
    next_rating_centered: float
    next_item_id: str


class SnapshotIndex:
    """Immutable (user, step) -> preference table, sorted by (user_id, step)."""

    def __init__(
        self,
        user_ids: Sequence[str],
        steps,
        preferences,
        next_surprise,
        next_rating,
        next_item_ids: Sequence[str],
        min_step: int = 1,
        config_hash: str = "",
    ):
        prefs = np.asarray(preferences, dtype=float)
        n = len(user_ids)
        if prefs.ndim != 2 or prefs.shape[0] != n:
            raise ValueError(f"preferences must be ({n}, K), got {prefs.shape}")
        steps = np.asarray(steps, dtype=np.int64).reshape(-1)
        users = np.asarray(list(user_ids), dtype=object)
        order = np.lexsort((steps, users.astype(str))) if n else np.zeros(0, dtype=np.int64)
        self.dim = prefs.shape[1]
        self.min_step = int(min_step)
        self.config_hash = config_hash
        self.user_ids = users[order]
        self.steps = steps[order]
        self.next_surprise = np.asarray(next_surprise, dtype=float).reshape(-1)[order]
        self.next_rating = np.asarray(next_rating, dtype=float).reshape(-1)[order]
        self.next_item_ids = np.asarray(list(next_item_ids), dtype=object)[order]
        # one column at a time keeps peak memory at a single extra copy
        self._columns = np.empty((self.dim, n))
        for k in range(self.dim):
            np.take(prefs[:, k], order, out=self._columns[k])
        self._ranges: dict[str, tuple[int, int]] = {}
        for i, u in enumerate(self.user_ids.tolist()):
            lo, _ = self._ranges.get(u, (i, i))
            self._ranges[u] = (lo, i + 1)
        for arr in (self.steps, self.next_surprise, self.next_rating, self._columns):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.steps.size

    @property
    def preferences(self) -> np.ndarray:
        return self._columns.T

    def snapshot(self, pos: int) -> Snapshot:
        return Snapshot(
            str(self.user_ids[pos]),
            int(self.steps[pos]),
            self._columns[:, pos].copy(),
            float(self.next_surprise[pos]),
            float(self.next_rating[pos]),
            str(self.next_item_ids[pos]),
        )

    def user_range(self, user_id: str) -> tuple[int, int]:
        return self._ranges.get(user_id, (0, 0))

    def distances(self, query) -> np.ndarray:
        """Distances from ``query`` to every snapshot, in index order."""
        q = np.asarray(query, dtype=float).reshape(-1)
        if q.size != self.dim:
            raise ValueError(f"query has length {q.size}, index has K={self.dim}")
        n = len(self)
        out = np.empty(n)
        tmp = np.empty(min(n, _BLOCK))
        for lo in range(0, n, _BLOCK):
            hi = min(lo + _BLOCK, n)
            acc = out[lo:hi]
            acc[:] = 0.0
            buf = tmp[: hi - lo]
            for k in range(self.dim):
                np.subtract(self._columns[k, lo:hi], q[k], out=buf)
                np.multiply(buf, buf, out=buf)
                np.add(acc, buf, out=acc)
        return np.sqrt(out, out=out)


def build_index(
    surprise_runs: Mapping[str, UserRun],
    similarity_runs: Mapping[str, UserRun] | None = None,
    min_step: int = 15,
    config_hash: str = "",
) -> SnapshotIndex:
    """Snapshot every (user, j) with j >= min_step and a successor j+1.

    Preferences come from ``similarity_runs`` (defaults to ``surprise_runs``);
    next-item surprise and rating come from ``surprise_runs``.
    """
    similarity_runs = surprise_runs if similarity_runs is None else similarity_runs
    users, steps, prefs, nsur, nrat, nitem = [], [], [], [], [], []
    dims = set()
    for uid in sorted(surprise_runs):
        run = surprise_runs[uid]
        sim = similarity_runs[uid]
        if len(sim) != len(run):
            raise ValueError(f"user {uid!r}: surprise and similarity runs differ in length")
        n = len(run)
        if n:
            dims.add(sim.preferences.shape[1])
        for j in range(max(min_step, 1), n):
            # step j is 1-based: its preference is row j-1, its successor is row j
            users.append(uid)
            steps.append(j)
            prefs.append(sim.preferences[j - 1])
            nsur.append(run.surprise[j])
            nrat.append(run.ratings[j])
            nitem.append(run.item_ids[j])
    if len(dims) > 1:
        raise ValueError(f"runs mix topic counts {sorted(dims)}")
    dim = dims.pop() if dims else 1
    prefs_arr = np.array(prefs) if prefs else np.zeros((0, dim))
    index = SnapshotIndex(users, steps, prefs_arr, nsur, nrat, nitem, min_step, config_hash)
    log.info("built index: %d snapshots, K=%d, min_step=%d", len(index), dim, min_step)
    return index


def _select(dist: np.ndarray, n: int) -> np.ndarray:
    """Positions of the n smallest finite distances; ties resolved by position."""
    finite = int(np.count_nonzero(np.isfinite(dist)))
    n = min(n, finite)
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    if n < dist.size:
        cut = np.partition(dist, n - 1)[n - 1]
        cand = np.flatnonzero(dist <= cut)
    else:
        cand = np.flatnonzero(np.isfinite(dist))
    # lexsort: last key is primary; positions encode (user_id, step) order
    order = np.lexsort((cand, dist[cand]))
    return cand[order[:n]]


def query_top_n(
    index: SnapshotIndex, query, n: int, exclude_user: str | None = None
) -> list[tuple[Snapshot, float]]:
    """The ``n`` snapshots nearest ``query``, ascending, skipping ``exclude_user``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(index) == 0:
        return []
    start = time.perf_counter()
    dist = index.distances(query)
    if exclude_user is not None:
        lo, hi = index.user_range(exclude_user)
        dist[lo:hi] = np.inf
    picked = _select(dist, n)
    log.debug("query over %d snapshots: %.4fs", len(index), time.perf_counter() - start)
    return [(index.snapshot(int(p)), float(dist[p])) for p in picked]


def find_serendipity(
    index: SnapshotIndex, user_id: str, query, tau_d: float, n: int
) -> tuple[str, int] | None:
    """Among the ``n`` nearest other-user snapshots, those closer than ``tau_d``
    whose next item was rated positively, return the one whose next item was
    most surprising, or ``None``.
    """
    hit = find_serendipity_snapshot(index, user_id, query, tau_d, n)
    return None if hit is None else (hit[0].user_id, hit[0].step)


def find_serendipity_snapshot(
    index: SnapshotIndex, user_id: str, query, tau_d: float, n: int
) -> tuple[Snapshot, float] | None:
    """Like :func:`find_serendipity`, returning the full snapshot and its distance."""
    qualifying = [
        (snap, dist)
        for snap, dist in query_top_n(index, query, n, exclude_user=user_id)
        if dist < tau_d and snap.next_rating_centered > 0
    ]
    if not qualifying:
        return None
    return min(qualifying, key=lambda c: (-c[0].next_surprise, c[0].user_id, c[0].step))


def save_index(index: SnapshotIndex, path: str | Path, id_width: int | None = None) -> None:
    ids = [str(u) for u in index.user_ids] + [str(i) for i in index.next_item_ids]
    needed = max((len(s.encode()) for s in ids), default=1)
    id_width = id_width or max(8, needed)
    if needed > id_width:
        raise ValueError(f"id of {needed} bytes does not fit id_width={id_width}")
    rec = _record_dtype(index.dim, id_width)
    data = np.zeros(len(index), dtype=rec)
    data["user_id"] = [str(u).encode() for u in index.user_ids]
    data["step"] = index.steps
    data["next_item_id"] = [str(i).encode() for i in index.next_item_ids]
    data["next_surprise"] = index.next_surprise
    data["next_rating"] = index.next_rating
    data["preference"] = index.preferences
    header = _HEADER.pack(
        MAGIC, VERSION, index.dim, id_width, len(index), index.min_step,
        index.config_hash.encode()[:32],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def load_index(path: str | Path) -> SnapshotIndex:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, dim, id_width, count, min_step, cfg = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a version-{VERSION} snapshot index")
    data = np.frombuffer(raw, dtype=_record_dtype(dim, id_width), count=count, offset=_HEADER.size)
    return SnapshotIndex(
        [u.decode() for u in data["user_id"]],
        data["step"],
        data["preference"].reshape(count, dim),
        data["next_surprise"],
        data["next_rating"],
        [i.decode() for i in data["next_item_id"]],
        min_step,
        cfg.rstrip(b"\0").decode(),
    )


def _record_dtype(dim: int, id_width: int) -> np.dtype:
    return np.dtype([
        ("user_id", f"S{id_width}"),
        ("step", "<u4"),
        ("next_item_id", f"S{id_width}"),
        ("next_surprise", "<f8"),
        ("next_rating", "<f8"),
        ("preference", "<f8", (dim,)),
    ])
