"""Spectral-method overlap against alpha: fixed point versus dense eigensolver.

    python scripts/spectral_sweep.py [--config configs/spectral.toml]
"""
import argparse
import logging

from glma.cli import cmd_spectral, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="configs/spectral.toml")
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _, (rows, _) = cmd_spectral(load_config(args.config, "spectral", args.seed, args.out), args.threads)
    for r in rows:
        print(f"alpha {r['alpha']:5.2f}: m theory {r['m_theory']:.4f}, eigh {r['m_empirical']:.4f} "
              f"+- {r['m_empirical_se']:.4f}, lambda amp/true {r['lambda_amp']:.5g}/{r['lambda_true']:.5g}")


if __name__ == "__main__":
    main()
