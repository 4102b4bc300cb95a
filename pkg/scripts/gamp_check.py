"""GAMP overlaps and energy against the state-evolution prediction.

    python scripts/gamp_check.py [--config configs/gamp_huber.toml]
"""
import argparse
import logging

from glma.cli import cmd_gamp, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/gamp_huber.toml")
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _, (_, summary) = cmd_gamp(load_config(args.config, "gamp", args.seed, args.out))
    for d, row in summary.get("by_d", {}).items():
        print(f"d={d}: mean m = {row['m_mean']:.5f}, mean |A_d - E| = {row['energy_gap_mean']:.3e}")
    print("non-converged runs:", summary.get("non_converged", 0))

if __name__ == "__main__":
    main()
