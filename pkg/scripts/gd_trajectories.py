"""Gradient descent norm trajectories on the non-convex ridge landscape.

    python scripts/fig2_gd.py --lam -1.735 --inits 0.5 2 3 8 --seeds 3
"""
import argparse
from pathlib import Path

from glma.cli import plot_svg, write_csv
from glma.empirics import GdConfig, erm_gd, generate
from glma.expect import EpsilonContaminated
from glma.prox import HuberLoss, L2Reg
from glma.saddle import ModelSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lam", type=float, default=-1.735)
    ap.add_argument("--inits", type=float, nargs="+", default=[0.5, 2.0, 3.0, 8.0, 16.0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--d", type=int, default=1000)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--max-steps", type=int, default=20000)
    ap.add_argument("--out", default="results/gd")
    args = ap.parse_args()

    model = ModelSpec(10.0, HuberLoss(1.0), L2Reg(1.0), EpsilonContaminated(0.3, 1.0, 5.0))
    reg = L2Reg(args.lam)
    cfg = GdConfig(lr=args.lr, max_steps=args.max_steps, record_every=10)
    rows, series = [], []
    for seed in range(args.seeds):
        data = generate(model, args.d, seed)
        for q0 in args.inits:
            tr = erm_gd(data, model.loss, reg, q0, cfg, seed=seed)
            print(f"seed {seed} q0 {q0:g}: {tr.status} after {tr.steps} steps, q = {tr.final_q:.6g}")
            rows.append({"seed": seed, "q0": q0, "status": tr.status, "steps": tr.steps, "final_q": tr.final_q})
            series.append((f"s{seed} q0={q0:g}", [10 * k for k in range(len(tr.q))], tr.q))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out / "gd.csv")
    plot_svg(series, out / "gd.svg", xlabel="step", ylabel="|w|^2 / d", logy=True, title=f"GD at lam={args.lam:g}")


if __name__ == "__main__":
    main()
