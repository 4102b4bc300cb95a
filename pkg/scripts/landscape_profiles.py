"""Training-loss profiles h(q) + lam q / 2 and the critical ridge strength.

    python scripts/fig2_landscape.py [--config configs/landscape.toml]
"""
import argparse
import logging

from glma.cli import cmd_landscape, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/landscape.toml")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _, (_, summary) = cmd_landscape(load_config(args.config, "landscape", out=args.out))
    for lam, shape in summary["curves"].items():
        print(f"lam={lam:>7}: minima {shape['local_min']} maxima {shape['local_max']} "
              f"decreasing tail {shape['decreasing_tail']}")
    print("lambda_c =", summary.get("lambda_c"), summary.get("lambda_c_bracket", ""))


if __name__ == "__main__":
    main()
