"""Policy simulation at matched QPS: PR-in-10/20 and GMV per strategy over paired seeds.

Trains AdaRequest (first training seed) on simulated data, calibrates every
strategy to StaticR's request rate and writes one row per strategy and seed.

    python scripts/policy_matched_qps.py --out results/policy
"""

import argparse
from pathlib import Path

import numpy as np

from adarequest import experiment as X


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(Path(__file__).parent / "configs" / "acceptance.json"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="results/policy")
    args = ap.parse_args()
    cfg = X.load_config(args.config, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = X.make_world(cfg)
    data = X.simulate(cfg, world)
    models, _ = X.fit("AdaRequest", data.train, cfg, seed=X.substream(cfg.seed, "train0"))
    rows = X.matched_qps(cfg, world, models)
    X.write_tsv(out / "matched_qps.tsv", rows)
    names = list(dict.fromkeys(r["strategy"] for r in rows))
    print(f"{'strategy':12s} {'qps':>8s} {'pr_in_10':>10s} {'pr_in_20':>10s} {'gmv/sess':>9s}")
    for k in names:
        rs = [r for r in rows if r["strategy"] == k]
        m = lambda f: float(np.mean([r[f] for r in rs]))
        print(f"{k:12s} {m('qps'):8.4f} {m('pr_in_10'):10.5f} {m('pr_in_20'):10.5f} "
              f"{m('gmv') / m('sessions'):9.3f}")


if __name__ == "__main__":
    main()
