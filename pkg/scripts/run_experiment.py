#!/usr/bin/env python3
"""Run the scaled synthetic-corpus experiment: per-domain teachers, then
baseline vs fully distilled students over several seeds."""

import argparse

from dialdistill.experiment import run_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=7, help="data/teacher seed")
    parser.add_argument("--student-seeds", default="1,2,3,4,5", help="comma-separated student seeds")
    parser.add_argument("--episodes-per-domain", type=int, default=80)
    parser.add_argument("--two-domain-episodes", type=int, default=40)
    parser.add_argument("--embed-dim", type=int, default=32)
    parser.add_argument("--hidden-dim", type=int, default=64)
    parser.add_argument("--teacher-epochs", type=int, default=200)
    parser.add_argument("--teacher-patience", type=int, default=12)
    parser.add_argument("--student-epochs", type=int, default=18)
    args = parser.parse_args()
    seeds = tuple(int(s) for s in args.student_seeds.split(","))
    summary = run_experiment(
        args.out,
        base_seed=args.seed,
        student_seeds=seeds,
        episodes_per_domain=args.episodes_per_domain,
        two_domain_episodes=args.two_domain_episodes,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        teacher_epochs=args.teacher_epochs,
        teacher_patience=args.teacher_patience,
        student_epochs=args.student_epochs,
    )
    wins, total = summary["wins"], len(summary["runs"])
    print(f"done: distilled >= baseline on {wins}/{total} seeds")


if __name__ == "__main__":
    main()
