"""Leave-one-cost-out sweep through the CLI, then the ablation table."""
import argparse
from pathlib import Path

from bimanual_safety.cli import main as cli
from bimanual_safety.sim.scenarios import SCENARIOS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--episodes", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    for scenario in SCENARIOS:
        common = ["--set", f"scenario={scenario}", "--episodes", str(args.episodes), "--seed", str(args.seed),
                  "--out", str(Path(args.out) / scenario)]
        if cli(["run", *common, "--label", "guided"]):
            raise SystemExit(1)
        for i in range(1, 6):
            if cli(["run", *common, "--label", f"no_C{i}", "--set", f"guidance.disabled_costs=[{i}]"]):
                raise SystemExit(1)
    raise SystemExit(cli(["report", args.out]))


if __name__ == "__main__":
    main()
