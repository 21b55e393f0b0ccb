"""Online preference learners and the surprise / serendipity they induce.

Five model kinds share one sequential interface: ``init_state`` builds the
state at t=0 and ``update`` consumes one (topic vector, stars) pair, returning
a :class:`StepOutcome`. The Bayesian kinds (BLR, vbBLR, AROW) measure surprise
as KL(posterior || prior); NLMS uses displacement of its point estimate over a
horizon; Basic uses a max-topic novelty heuristic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .gaussian import GaussianBelief, clip_eigenvalues, floor_and_symmetrize, kl_divergence
from .history import UserHistory, center_rating

log = logging.getLogger(__name__)

KINDS = ("BLR", "vbBLR", "AROW", "NLMS", "Basic")
ENVELOPE_SOURCES = ("item_topics", "history_averages")
NLMS_MIN_NORM2 = 1e-12

_RELEVANT = {
    "BLR": ("beta", "prior_variance"),
    "vbBLR": ("beta", "prior_variance", "tau_v"),
    "AROW": ("prior_variance", "r1", "r2"),
    "NLMS": ("eta", "horizon_k"),
    "Basic": ("basic_envelope_source",),
}


@dataclass(frozen=True)
class ModelConfig:
    """Hyperparameters for one surprise model.

    ``prior_variance`` defaults to ``beta`` so that a single knob sets both the
    prior N(0, beta*I) and the observation precision, as in the single-parameter
    BLR formulation. Only the fields listed for ``kind`` in ``relevant()`` are used.
    """

    kind: str = "BLR"
    beta: float = 1.0
    prior_variance: float | None = None
    tau_v: float = 0.1
    r1: float = 1.0
    r2: float = 1.0
    eta: float = 0.1
    horizon_k: int = 1
    basic_envelope_source: str = "item_topics"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.prior_variance is None:
            object.__setattr__(self, "prior_variance", self.beta)
        for name in ("beta", "prior_variance", "tau_v", "r1", "r2", "eta"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value!r}")
        if int(self.horizon_k) != self.horizon_k or self.horizon_k < 1:
            raise ValueError(f"horizon_k must be an integer >= 1, got {self.horizon_k!r}")
        object.__setattr__(self, "horizon_k", int(self.horizon_k))
        if self.basic_envelope_source not in ENVELOPE_SOURCES:
            raise ValueError(f"basic_envelope_source must be one of {ENVELOPE_SOURCES}")

    @property
    def is_bayesian(self) -> bool:
        return self.kind in ("BLR", "vbBLR", "AROW")

    def relevant(self) -> dict:
        return {name: getattr(self, name) for name in _RELEVANT[self.kind]}

    def label(self) -> str:
        args = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in self.relevant().items())
        return f"{self.kind}({args})"

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def parse(cls, text: str) -> "ModelConfig":
        """Parse ``"AROW:r1=1,r2=2"`` (kind, then optional comma-separated overrides)."""
        kind, _, rest = text.partition(":")
        kwargs: dict = {}
        for part in filter(None, (p.strip() for p in rest.split(","))):
            key, sep, value = part.partition("=")
            key = key.strip()
            if not sep or key not in cls.__dataclass_fields__ or key == "kind":
                raise ValueError(f"bad model parameter {part!r} in {text!r}")
            if key == "basic_envelope_source":
                kwargs[key] = value.strip()
            elif key == "horizon_k":
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(kind=kind.strip(), **kwargs)


@dataclass(frozen=True)
class PreferenceState:
    """Model state after ``step`` interactions.

    Bayesian kinds populate ``belief`` (and mirror its mean in ``point``);
    NLMS uses ``point`` plus a window of recent points; Basic keeps running
    sums and the per-topic envelope.
    """

    config: ModelConfig
    step: int
    belief: GaussianBelief | None = None
    point: np.ndarray | None = None
    recent_points: tuple[np.ndarray, ...] = ()
    topic_sum: np.ndarray | None = None
    envelope: np.ndarray | None = None
    rating_weighted_sum: np.ndarray | None = None

    @property
    def dim(self) -> int:
        if self.belief is not None:
            return self.belief.dim
        if self.point is not None:
            return self.point.size
        return self.envelope.size

    @property
    def history_avg(self) -> np.ndarray | None:
        if self.topic_sum is None or self.step == 0:
            return None
        return self.topic_sum / self.step

    @property
    def preference(self) -> np.ndarray:
        """Point preference vector: belief mean, NLMS point, or rating-weighted topic average."""
        if self.config.kind == "Basic":
            if self.step == 0:
                return np.zeros(self.dim)
            return self.rating_weighted_sum / self.step
        return self.point


@dataclass(frozen=True)
class StepOutcome:
    surprise: float
    predicted_rating: float
    serendipity: float
    state_after: PreferenceState


def init_state(config: ModelConfig, num_topics: int) -> PreferenceState:
    if num_topics < 1:
        raise ValueError(f"number of topics must be >= 1, got {num_topics}")
    zeros = np.zeros(num_topics)
    if config.is_bayesian:
        belief = GaussianBelief.isotropic(num_topics, config.prior_variance)
        return PreferenceState(config, 0, belief=belief, point=belief.mean)
    if config.kind == "NLMS":
        return PreferenceState(config, 0, point=zeros, recent_points=(zeros,))
    return PreferenceState(
        config, 0, topic_sum=zeros, envelope=zeros.copy(), rating_weighted_sum=zeros.copy()
    )


def _topic_vector(theta, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != dim:
        raise ValueError(f"topic vector has length {theta.size}, model expects {dim}")
    return theta


def _require(state: PreferenceState, *kinds: str) -> None:
    if state.config.kind not in kinds:
        raise ValueError(f"state of kind {state.config.kind} passed to a {'/'.join(kinds)} update")


def _gaussian_step(state, prior, theta, r, gain_offset, cov_offset) -> StepOutcome:
    """Rank-one Gaussian update shared by BLR-style and AROW updates.

    mean += (r - mu.theta) * S theta / (gain_offset + theta' S theta)
    cov  -= S theta theta' S / (cov_offset + theta' S theta)
    """
    theta = _topic_vector(theta, prior.dim)
    predicted = float(prior.mean @ theta)
    s_theta = prior.cov @ theta
    spread = float(theta @ s_theta)
    mean = prior.mean + (r - predicted) / (gain_offset + spread) * s_theta
    cov = prior.cov - np.outer(s_theta, s_theta) / (cov_offset + spread)
    post = GaussianBelief(mean, floor_and_symmetrize(cov))
    surprise = kl_divergence(post, prior)
    new_state = replace(state, step=state.step + 1, belief=post, point=post.mean)
    return StepOutcome(surprise, predicted, r * surprise, new_state)


def blr_update(state: PreferenceState, theta, r: float) -> StepOutcome:
    """Conjugate Bayesian linear-regression step with noise precision ``beta``.

    Posterior precision is prior precision + beta * theta theta'; applied here in
    the equivalent rank-one covariance form.
    """
    _require(state, "BLR")
    inv_beta = 1.0 / state.config.beta
    return _gaussian_step(state, state.belief, theta, r, inv_beta, inv_beta)


def vbblr_update(state: PreferenceState, theta, r: float) -> StepOutcome:
    """BLR step from the eigenvalue-clipped prior N(mu, clip(Sigma, tau_v)).

    Surprise is measured against that clipped prior.
    """
    _require(state, "vbBLR")
    cfg = state.config
    prior = GaussianBelief(state.belief.mean, clip_eigenvalues(state.belief.cov, cfg.tau_v))
    inv_beta = 1.0 / cfg.beta
    return _gaussian_step(state, prior, theta, r, inv_beta, inv_beta)


def arow_update(state: PreferenceState, theta, r: float) -> StepOutcome:
    """AROW for squared loss, with separate trade-offs ``r1`` (mean) and ``r2`` (covariance)."""
    _require(state, "AROW")
    cfg = state.config
    return _gaussian_step(state, state.belief, theta, r, cfg.r1, cfg.r2)


def nlms_update(state: PreferenceState, theta, r: float) -> StepOutcome:
    """Normalized LMS step.

    The returned surprise is the one-step displacement ||p_t - p_{t-1}||, which
    is final only for ``horizon_k == 1``; :func:`run_history` replaces it by the
    horizon-k displacement once later points are known.
    """
    _require(state, "NLMS")
    cfg = state.config
    p = state.point
    theta = _topic_vector(theta, p.size)
    predicted = float(p @ theta)
    norm2 = float(theta @ theta)
    if norm2 < NLMS_MIN_NORM2:
        new_p = p
    else:
        new_p = p + (cfg.eta / norm2) * (r - predicted) * theta
    window = (state.recent_points + (new_p,))[-(cfg.horizon_k + 1):]
    surprise = float(np.linalg.norm(new_p - p))
    new_state = replace(state, step=state.step + 1, point=new_p, recent_points=window)
    return StepOutcome(surprise, predicted, r * surprise, new_state)


def basic_update(state: PreferenceState, theta, r_raw: int) -> StepOutcome:
    """Max-topic novelty against the envelope of past topic mass.

    Surprise is max_k(theta_k - m_k) and may be negative. The preference is
    the star-weighted (1..5) average of consumed topic vectors.
    """
    _require(state, "Basic")
    centered = center_rating(r_raw)
    theta = _topic_vector(theta, state.envelope.size)
    surprise = float(np.max(theta - state.envelope))
    predicted = float(state.preference @ theta)
    step = state.step + 1
    topic_sum = state.topic_sum + theta
    if state.config.basic_envelope_source == "item_topics":
        envelope = np.maximum(state.envelope, theta)
    else:
        envelope = np.maximum(state.envelope, topic_sum / step)
    new_state = replace(
        state,
        step=step,
        topic_sum=topic_sum,
        envelope=envelope,
        rating_weighted_sum=state.rating_weighted_sum + r_raw * theta,
    )
    return StepOutcome(surprise, predicted, centered * surprise, new_state)


_UPDATES = {
    "BLR": blr_update,
    "vbBLR": vbblr_update,
    "AROW": arow_update,
    "NLMS": nlms_update,
}


def update(state: PreferenceState, theta, stars: int) -> StepOutcome:
    """Consume one rated item; ``stars`` is the raw 1..5 rating."""
    if state.config.kind == "Basic":
        return basic_update(state, theta, stars)
    return _UPDATES[state.config.kind](state, theta, center_rating(stars))


def horizon_surprise(points: np.ndarray, horizon_k: int) -> np.ndarray:
    """Sur(t) = ||p_{t+k-1} - p_{t-1}|| for t = 1..n, given points p_0..p_n.

    Indices past the end are clamped to p_n.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0] - 1
    if n <= 0:
        return np.zeros(0)
    later = np.minimum(np.arange(1, n + 1) + horizon_k - 1, n)
    return np.linalg.norm(points[later] - points[:-1], axis=1)


def iterate_outcomes(
    config: ModelConfig, thetas: Iterable[np.ndarray], stars: Iterable[int], num_topics: int
) -> Iterator[StepOutcome]:
    """Yield provisional outcomes; NLMS surprises are one-step displacements."""
    state = init_state(config, num_topics)
    for theta, s in zip(thetas, stars):
        outcome = update(state, theta, int(s))
        state = outcome.state_after
        yield outcome


def _resolve(history: UserHistory, topics: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    try:
        return [topics[it.item_id] for it in history.interactions]
    except KeyError as exc:
        raise KeyError(f"user {history.user_id!r}: unknown item id {exc.args[0]!r}") from None


def _infer_dim(topics: Mapping[str, np.ndarray], thetas: Sequence[np.ndarray]) -> int:
    if thetas:
        return int(np.asarray(thetas[0]).size)
    first = next(iter(topics.values()), None)
    return 1 if first is None else int(np.asarray(first).size)


def run_history(
    config: ModelConfig, history: UserHistory, topics: Mapping[str, np.ndarray]
) -> list[StepOutcome]:
    """One outcome per interaction, in timestamp order, with NLMS surprises finalized."""
    thetas = _resolve(history, topics)
    if not thetas:
        return []
    outcomes = list(iterate_outcomes(config, thetas, history.stars, _infer_dim(topics, thetas)))
    if config.kind == "NLMS":
        points = [np.zeros(outcomes[0].state_after.dim)] + [o.state_after.point for o in outcomes]
        final = horizon_surprise(np.array(points), config.horizon_k)
        ratings = history.centered_ratings
        outcomes = [
            replace(o, surprise=float(s), serendipity=float(r * s))
            for o, s, r in zip(outcomes, final, ratings)
        ]
    return outcomes


@dataclass
class UserRun:
    """Compact per-user series from one model: no covariances retained."""

    user_id: str
    item_ids: tuple[str, ...]
    stars: np.ndarray
    surprise: np.ndarray
    predicted: np.ndarray
    preferences: np.ndarray  # (n, K): preference after each step
    config: ModelConfig = field(default_factory=ModelConfig)

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def ratings(self) -> np.ndarray:
        return self.stars.astype(float) - 3.0

    @property
    def serendipity(self) -> np.ndarray:
        return self.ratings * self.surprise


def run_user(config: ModelConfig, history: UserHistory, topics: Mapping[str, np.ndarray]) -> UserRun:
    thetas = _resolve(history, topics)
    dim = _infer_dim(topics, thetas)
    n = len(thetas)
    surprise = np.zeros(n)
    predicted = np.zeros(n)
    prefs = np.zeros((n, dim))
    for t, outcome in enumerate(iterate_outcomes(config, thetas, history.stars, dim)):
        surprise[t] = outcome.surprise
        predicted[t] = outcome.predicted_rating
        prefs[t] = outcome.state_after.preference
    if config.kind == "NLMS" and n:
        surprise = horizon_surprise(np.vstack([np.zeros(dim), prefs]), config.horizon_k)
    return UserRun(
        history.user_id, tuple(history.item_ids), history.stars, surprise, predicted, prefs, config
    )


_worker_topics: Mapping[str, np.ndarray] = {}


def _run_user_in_worker(args):
    config, history = args
    return run_user(config, history, _worker_topics)


def run_users(
    config: ModelConfig,
    histories: Sequence[UserHistory],
    topics: Mapping[str, np.ndarray],
    jobs: int = 1,
) -> dict[str, UserRun]:
    """Run ``config`` over every history. Users are independent; ``jobs > 1`` forks workers."""
    global _worker_topics
    start = time.perf_counter()
    if jobs > 1 and len(histories) > 1:
        _worker_topics = topics
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            runs = list(pool.map(_run_user_in_worker, [(config, h) for h in histories], chunksize=16))
        _worker_topics = {}
    else:
        runs = [run_user(config, h, topics) for h in histories]
    elapsed = time.perf_counter() - start
    steps = sum(len(r) for r in runs)
    log.info(
        "%s: %d users, %d steps in %.2fs (%.0f items/s)",
        config.label(), len(runs), steps, elapsed, steps / elapsed if elapsed > 0 else float("inf"),
    )
    return {r.user_id: r for r in runs}
