"""Baseline vs guided on every scenario over the same seeds."""
import argparse
import time

from bimanual_safety.sim.metrics import metrics, paired
from bimanual_safety.sim.runner import EpisodeConfig, run_batch
from bimanual_safety.sim.scenarios import SCENARIOS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--episodes", type=int, default=50)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    print(f"{'scenario':<10} {'SR base':>8} {'SR guid':>8} {'DR base':>8} {'DR guid':>8} {'safer':>6}")
    start = time.perf_counter()
    for name in SCENARIOS:
        base = run_batch(EpisodeConfig(name, guidance_enabled=False), args.seed, args.episodes, workers=args.workers)
        guided = run_batch(EpisodeConfig(name), args.seed, args.episodes, workers=args.workers)
        mb, mg = metrics(base), metrics(guided)
        print(f"{name:<10} {mb.sr:8.2f} {mg.sr:8.2f} {mb.dr:8.2f} {mg.dr:8.2f} {paired(base, guided).strictly_safer:6.2f}")
    print(f"{time.perf_counter() - start:.1f} s")


if __name__ == "__main__":
    main()
