"""Command-line jobs: synth, run, recommend, eval-surprise, eval-serendipity, tune.

Settings resolve as built-in defaults < ``--config`` JSON file < command-line
flags. Every job writes ``resolved_config.json`` next to its outputs, and
every tabular output starts with a ``# config_hash=...`` line followed by a
tab-separated header.

Config file keys mirror the flags (underscored), e.g.::

    {"topics": "data/topics.tsv", "histories": "data/histories.tsv",
     "model": "AROW:r1=1,r2=2", "sim_model": "vbBLR:beta=1,tau_v=0.05",
     "tau_s": 0.5, "tau_d": 1.0, "top_n": 50, "burn_in": 15,
     "synth": {"users": 50, "num_topics": 20}}

``model`` may also be an object such as ``{"kind": "AROW", "r1": 1.0}``.
A tuning grid file is a JSON list of objects with keys ``model``, ``tau_s``
and optionally ``tau_d``, ``top_n``, ``sim_model``.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import (
    EvalContext,
    GridPoint,
    Metrics,
    default_grid,
    eval_serendipity,
    eval_surprise_detection,
    random_baseline_expected,
    serendipity_positives,
    tune_leave_one_out,
)
from .history import DEFAULT_BURN_IN, Corpus, load_corpus
from .models import ModelConfig
from .neighbors import find_serendipity_snapshot, save_index
from .synth import SynthConfig, generate_population

log = logging.getLogger("topicsurprise")

COMMANDS = ("run", "recommend", "eval-surprise", "eval-serendipity", "tune", "synth")


class JobError(Exception):
    pass


@dataclass
class JobConfig:
    topics: str | None = None
    histories: str | None = None
    annotations: str | None = None
    out: str = "out"
    model: ModelConfig = field(default_factory=ModelConfig)
    sim_model: ModelConfig | None = None
    burn_in: int = DEFAULT_BURN_IN
    tau_s: float = 0.1
    tau_d: float = 1.0
    top_n: int = 50
    seed: int = 0
    jobs: int = 1
    mode: str = "serendipity"
    grid: str | None = None
    requests: str | None = None
    save_index: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> None:
        if not (self.tau_s > 0 and self.tau_d > 0 and math.isfinite(self.tau_s)):
            raise JobError("tau_s and tau_d must be positive")
        if self.top_n < 1:
            raise JobError("top_n must be >= 1")
        if self.burn_in < 0:
            raise JobError("burn_in must be >= 0")
        if self.mode not in ("surprise", "serendipity"):
            raise JobError(f"mode must be 'surprise' or 'serendipity', got {self.mode!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d["sim_model"] = self.sim_model.to_dict() if self.sim_model else None
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        for volatile in ("out", "jobs"):
            d.pop(volatile)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


def _model_from(value) -> ModelConfig | None:
    if value is None or isinstance(value, ModelConfig):
        return value
    if isinstance(value, str):
        return ModelConfig.parse(value)
    if isinstance(value, dict):
        return ModelConfig(**value)
    raise JobError(f"cannot interpret model setting {value!r}")


def resolve_job(args: argparse.Namespace) -> JobConfig:
    settings: dict = {}
    if args.config:
        try:
            settings.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise JobError(f"cannot read config {args.config}: {exc}") from None
    synth = dict(settings.pop("synth", {}) or {})
    for key in ("topics", "histories", "annotations", "out", "model", "sim_model", "burn_in",
                "tau_s", "tau_d", "top_n", "seed", "jobs", "mode", "grid", "requests", "save_index"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in ("users", "num_topics", "history_length", "regimes_per_user"):
        value = getattr(args, key, None)
        if value is not None:
            synth[key] = value
    unknown = set(settings) - {f.name for f in dataclasses.fields(JobConfig)}
    if unknown:
        raise JobError(f"unknown config keys: {sorted(unknown)}")
    try:
        settings["model"] = _model_from(settings.get("model")) or ModelConfig()
        settings["sim_model"] = _model_from(settings.get("sim_model"))
        synth.setdefault("seed", settings.get("seed", 0))
        synth.setdefault("burn_in", settings.get("burn_in", DEFAULT_BURN_IN))
        job = JobConfig(**settings, synth=SynthConfig(**synth))
    except (TypeError, ValueError) as exc:
        raise JobError(str(exc)) from None
    job.validate()
    return job


# --- output helpers ------------------------------------------------------------


def _write_table(path: Path, config_hash: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def metrics_table(rows: Sequence[tuple[str, dict[str, Metrics]]], users: Sequence[str]):
    """Rows shaped like the per-user P/R/F1 tables, values in percent, plus average F1."""
    header = ["model"] + [f"{u}:{m}" for u in users for m in ("P", "R", "F1")] + ["avg_F1"]
    body = []
    for name, per_user in rows:
        cells = [name]
        for u in users:
            cells += [f"{x:.1f}" for x in per_user[u].as_percent()]
        cells.append(f"{100 * np.mean([per_user[u].f1 for u in users]):.1f}")
        body.append(cells)
    return header, body


def _random_rows(base: dict[str, tuple[int, int]]):
    half = {u: random_baseline_expected(0.5, p, t) for u, (p, t) in base.items()}
    ratio = {u: random_baseline_expected(p / t, p, t) for u, (p, t) in base.items()}
    return [("Random (p = 0.5)", half), ("Random (p = P/T)", ratio)]


# --- commands ------------------------------------------------------------------


def _load(job: JobConfig, need_annotations: bool = False) -> Corpus:
    if not job.topics or not job.histories:
        raise JobError("--topics and --histories are required")
    if need_annotations and not job.annotations:
        raise JobError("--annotations is required for this command")
    for p in (job.topics, job.histories, job.annotations):
        if p and not Path(p).exists():
            raise JobError(f"input file not found: {p}")
    return load_corpus(job.topics, job.histories, job.annotations, job.burn_in)


def cmd_synth(job: JobConfig, out: Path) -> None:
    pop = generate_population(job.synth)
    paths = pop.write(out)
    log.info("synthetic population written to %s (%d users)", out, len(pop.histories))
    for name, path in paths.items():
        log.info("  %s: %s", name, path)


def cmd_run(job: JobConfig, out: Path, ctx: EvalContext) -> None:
    runs = ctx.runs(job.model)
    rows = []
    for uid, run in runs.items():
        for t in range(len(run)):
            rows.append((uid, t + 1, run.item_ids[t], int(run.stars[t]), float(run.ratings[t]),
                         float(run.predicted[t]), float(run.surprise[t]), float(run.serendipity[t])))
    _write_table(out / "series.tsv", job.config_hash(),
                 ("user_id", "step", "item_id", "stars", "rating", "predicted", "surprise", "serendipity"),
                 rows)
    if job.save_index:
        save_index(ctx.index(job.model, job.sim_model), out / "index.bin")


def _requests(job: JobConfig, ctx: EvalContext) -> list[tuple[str, int]]:
    if job.requests:
        out = []
        with open(job.requests, encoding="utf-8") as fh:
            header = fh.readline()
            delim = "\t" if "\t" in header else ","
            for line in fh:
                if line.strip():
                    user, step = line.rstrip("\r\n").split(delim)[:2]
                    out.append((user.strip(), int(step)))
        return out
    users = ctx.reference_users or [h.user_id for h in ctx.corpus.histories]
    return [(u, i) for u in users for i in range(max(job.burn_in, 1), len(ctx.corpus.history(u)))]


def cmd_recommend(job: JobConfig, out: Path, ctx: EvalContext) -> None:
    index = ctx.index(job.model, job.sim_model)
    sim_runs = ctx.runs(job.sim_model or job.model)
    rows = []
    start = time.perf_counter()
    for user, step in _requests(job, ctx):
        if user not in sim_runs:
            raise JobError(f"unknown user in requests: {user!r}")
        run = sim_runs[user]
        if not 1 <= step <= len(run):
            raise JobError(f"step {step} outside 1..{len(run)} for user {user!r}")
        hit = find_serendipity_snapshot(index, user, run.preferences[step - 1], job.tau_d, job.top_n)
        if hit is None:
            rows.append((user, step, None, None, None, None, None))
        else:
            snap, dist = hit
            rows.append((user, step, snap.user_id, snap.step, snap.next_item_id, dist, snap.next_surprise))
    if rows:
        log.info("recommend: %d queries, %.2f ms/query", len(rows),
                 1000 * (time.perf_counter() - start) / len(rows))
    _write_table(out / "recommendations.tsv", job.config_hash(),
                 ("user_id", "step", "neighbor_user", "neighbor_step", "item_id", "distance", "next_surprise"),
                 rows)


def cmd_eval_surprise(job: JobConfig, out: Path, ctx: EvalContext) -> None:
    users = ctx.reference_users
    runs = ctx.runs(job.model)
    per_user = {u: eval_surprise_detection(runs[u], ctx.labels[u], job.tau_s, job.burn_in) for u in users}
    base = {}
    for u in users:
        labels = [v for p, v in ctx.labels[u].items() if p > job.burn_in]
        base[u] = (sum(labels), len(labels))
    header, body = metrics_table([(job.model.label(), per_user)] + _random_rows(base), users)
    _write_table(out / "surprise_detection.tsv", job.config_hash(), header, body)


def cmd_eval_serendipity(job: JobConfig, out: Path, ctx: EvalContext) -> None:
    users = ctx.reference_users
    index = ctx.index(job.model, job.sim_model)
    sim_runs = ctx.runs(job.sim_model or job.model)
    per_user = {
        u: eval_serendipity(u, sim_runs[u], index, job.tau_s, job.tau_d, job.top_n, ctx.labels[u], job.burn_in)
        for u in users
    }
    base = {u: serendipity_positives(sim_runs[u], ctx.labels[u], job.burn_in) for u in users}
    name = job.model.label() + (f"+{job.sim_model.label()}" if job.sim_model else "")
    header, body = metrics_table([(name, per_user)] + _random_rows(base), users)
    _write_table(out / "serendipity.tsv", job.config_hash(), header, body)


def load_grid(path: str) -> list[GridPoint]:
    entries = json.loads(Path(path).read_text())
    grid = []
    for e in entries:
        grid.append(GridPoint(
            _model_from(e["model"]),
            float(e["tau_s"]),
            float(e.get("tau_d", math.inf)),
            int(e.get("top_n", 50)),
            _model_from(e.get("sim_model")),
        ))
    return grid


def cmd_tune(job: JobConfig, out: Path, ctx: EvalContext) -> None:
    users = ctx.reference_users
    if job.grid:
        grid = load_grid(job.grid)
    else:
        grid = default_grid(ctx, job.model.kind, job.mode, job.sim_model)
    log.info("tuning %s over %d grid points, %d users", job.mode, len(grid), len(users))
    result = tune_leave_one_out(grid, users, job.mode, ctx)
    rows = [
        (r.user_id, r.point.label(), *(f"{x:.1f}" for x in r.metrics.as_percent()), f"{100 * r.train_f1:.1f}")
        for r in result.rows
    ]
    rows.append(("average", "", "", "", f"{100 * result.average_f1:.1f}", ""))
    _write_table(out / f"tuning_{job.mode}.tsv", job.config_hash(),
                 ("held_out_user", "selected", "P", "R", "F1", "train_avg_F1"), rows)
    per_user = {r.user_id: r.metrics for r in result.rows}
    header, body = metrics_table([(f"{job.model.kind} (leave-one-out)", per_user)], users)
    _write_table(out / f"tuning_{job.mode}_table.tsv", job.config_hash(), header, body)


def run_job(job: JobConfig, command: str) -> Path:
    if command not in COMMANDS:
        raise JobError(f"unknown command {command!r}")
    out = Path(job.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps({"command": command, "config_hash": job.config_hash(), **job.to_dict()},
                   indent=2, sort_keys=True) + "\n"
    )
    if command == "synth":
        cmd_synth(job, out)
        return out
    need_ann = command in ("eval-surprise", "eval-serendipity", "tune")
    corpus = _load(job, need_annotations=need_ann)
    ctx = EvalContext(corpus, burn_in=job.burn_in, jobs=job.jobs)
    if need_ann and not ctx.reference_users:
        raise JobError("annotations file contains no annotated users")
    {
        "run": cmd_run,
        "recommend": cmd_recommend,
        "eval-surprise": cmd_eval_surprise,
        "eval-serendipity": cmd_eval_serendipity,
        "tune": cmd_tune,
    }[command](job, out, ctx)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topicsurprise", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file; flags override it")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--burn-in", dest="burn_in", type=int)
        if name == "synth":
            p.add_argument("--users", type=int)
            p.add_argument("--num-topics", dest="num_topics", type=int)
            p.add_argument("--history-length", dest="history_length", type=int)
            p.add_argument("--regimes", dest="regimes_per_user", type=int)
            continue
        p.add_argument("--topics")
        p.add_argument("--histories")
        p.add_argument("--annotations")
        p.add_argument("--model", help='e.g. "vbBLR:beta=1,tau_v=0.05"')
        p.add_argument("--sim-model", dest="sim_model", help="model for similarity search (hybrid)")
        p.add_argument("--tau-s", dest="tau_s", type=float)
        p.add_argument("--tau-d", dest="tau_d", type=float)
        p.add_argument("--top-n", dest="top_n", type=int)
        p.add_argument("--jobs", type=int)
        if name == "recommend":
            p.add_argument("--requests", help="file of user_id,step rows")
        if name == "run":
            p.add_argument("--save-index", dest="save_index", action="store_true", default=None)
        if name == "tune":
            p.add_argument("--mode", choices=("surprise", "serendipity"))
            p.add_argument("--grid", help="JSON grid file")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        job = resolve_job(args)
        run_job(job, args.command)
    except (JobError, ValueError, KeyError, OSError) as exc:
        msg = " ".join(str(exc).split())
        print(f"error\t{type(exc).__name__}\t{msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
