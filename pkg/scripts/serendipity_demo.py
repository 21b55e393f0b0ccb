"""Serendipitous recommendations for one synthetic user, step by step.

Prints, for each step after burn-in, the nearest other-user snapshot whose
next item was liked and most surprising.

    python3 scripts/serendipity_demo.py --user u0003 --sim-model NLMS
"""

import argparse

from topicsurprise import ModelConfig, SynthConfig, build_index, generate_population, run_users
from topicsurprise.neighbors import find_serendipity_snapshot


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--users", type=int, default=20)
    ap.add_argument("--user", default="u0000")
    ap.add_argument("--model", default="AROW")
    ap.add_argument("--sim-model", default=None)
    ap.add_argument("--tau-d", type=float, default=1.0)
    ap.add_argument("--top-n", type=int, default=50)
    args = ap.parse_args()

    cfg = SynthConfig(seed=args.seed, num_topics=12, users=args.users, history_length=60)
    pop = generate_population(cfg)
    topics = pop.corpus().topics
    model = ModelConfig.parse(args.model)
    sim = ModelConfig.parse(args.sim_model) if args.sim_model else None
    runs = run_users(model, pop.histories, topics)
    sim_runs = run_users(sim, pop.histories, topics) if sim else runs
    index = build_index(runs, sim_runs, min_step=cfg.burn_in)
    print(f"{len(index)} snapshots; change-points for {args.user}: {pop.change_points[args.user]}")

    run = sim_runs[args.user]
    for step in range(cfg.burn_in, len(run)):
        hit = find_serendipity_snapshot(index, args.user, run.preferences[step - 1], args.tau_d, args.top_n)
        if hit is None:
            print(f"step {step:3d}  -")
            continue
        snap, dist = hit
        print(f"step {step:3d}  {snap.next_item_id:<14} from {snap.user_id}@{snap.step:<3d} "
              f"d={dist:.3f} surprise={snap.next_surprise:.3f}")


if __name__ == "__main__":
    main()
