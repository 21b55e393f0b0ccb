"""Surprise around planted change-points for every model on a synthetic population.

    python3 scripts/drift_experiment.py --users 50 --seed 7
"""

import argparse
import time

import numpy as np

from topicsurprise import ModelConfig, SynthConfig, generate_population, run_users


def summarize(pop, runs, burn_in):
    users = [h.user_id for h in pop.histories]
    values = np.array([runs[u].surprise[burn_in:] for u in users])
    labels = np.zeros(values.shape, dtype=bool)
    for row, u in enumerate(users):
        labels[row, np.array(pop.change_points[u], dtype=int) - 1 - burn_in] = True
    cut = np.percentile(values, 90, axis=1, keepdims=True)
    recall = np.count_nonzero((values >= cut) & labels) / max(1, np.count_nonzero(labels))
    return values[labels].mean(), values[~labels].mean(), recall


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--users", type=int, default=50)
    ap.add_argument("--num-topics", type=int, default=20)
    ap.add_argument("--history-length", type=int, default=120)
    ap.add_argument("--regimes", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    cfg = SynthConfig(seed=args.seed, num_topics=args.num_topics, users=args.users,
                      history_length=args.history_length, regimes_per_user=args.regimes)
    pop = generate_population(cfg)
    topics = pop.corpus().topics
    print(f"{'model':<44} {'at change':>10} {'elsewhere':>10} {'recall@p90':>11} {'secs':>6}")
    for model in ["BLR", "vbBLR:tau_v=0.05", "AROW:r1=1,r2=2", "NLMS:eta=0.2,horizon_k=2", "Basic"]:
        config = ModelConfig.parse(model)
        start = time.perf_counter()
        runs = run_users(config, pop.histories, topics, jobs=args.jobs)
        at, rest, recall = summarize(pop, runs, cfg.burn_in)
        print(f"{config.label():<44} {at:10.4f} {rest:10.4f} {recall:11.3f} {time.perf_counter() - start:6.1f}")


if __name__ == "__main__":
    main()
