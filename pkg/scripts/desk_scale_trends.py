"""Client-count degradation and KCI recovery on synthetic blobs, median over seeds.

    python scripts/desk_scale_trends.py --seeds 0 1 2
"""

import argparse
import statistics
from dataclasses import replace
from pathlib import Path

from fedkci import experiment
from fedkci.federation import run_federated

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_scale.ini"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(CONFIG))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = parser.parse_args()

    cfg = experiment.parse_config(args.config)
    finals: dict[str, list[float]] = {}
    for seed in args.seeds:
        train, test = experiment.load_datasets(replace(cfg.dataset, seed=seed))
        spec = experiment.build_model(cfg.model, train)
        for label, hp in cfg.runs():
            rows = run_federated(spec, train, test, replace(hp, seed=seed), label=label)
            finals.setdefault(label, []).append(rows[-1].test_accuracy)
            print(f"seed {seed}  {label:<22} {rows[-1].test_accuracy:.3f}", flush=True)

    print("\nmedian final accuracy")
    for label, accs in finals.items():
        print(f"  {label:<22} {statistics.median(accs):.3f}   ({', '.join(f'{a:.3f}' for a in accs)})")


if __name__ == "__main__":
    main()
