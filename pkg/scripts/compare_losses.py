"""Optimally tuned estimation error of L2, Huber, Cauchy and Tukey against alpha.

    python scripts/fig1_compare.py [--config configs/compare.toml] [--out results/compare]
"""
import argparse
import logging

from glma.cli import cmd_compare, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/compare.toml")
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = load_config(args.config, "compare", args.seed, args.out)
    _, records = cmd_compare(cfg, args.threads)
    print(f"{'alpha':>8} {'loss':>7} {'error':>10} {'erm':>10} {'se':>8} {'xi':>8} {'lam':>9}")
    for r in records:
        e = r.extra
        print(f"{e['alpha']:8.3f} {e['loss']:>7} {r.observables['error']:10.6f} {e['erm_mean']:10.6f} "
              f"{e['erm_se']:8.5f} {e['xi']:8.4f} {e['lam']:9.3g}")


if __name__ == "__main__":
    main()
