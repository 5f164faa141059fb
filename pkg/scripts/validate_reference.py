"""
SA-INR — Reference Experiment Validation Script

Runs the seeded reference experiment several times and checks the ordering
claims it is expected to reproduce: spatial SR beats the thick-slice baseline,
zero-shot SR beats it on unseen directions, the b=0 prior helps, and adding
the zero-shot directions improves the FA map without moving MD.

Usage:
    python scripts/validate_reference.py --runs 10 --out runs/validation
    python scripts/validate_reference.py --runs 3 --iters 500   # quicker, weaker

Each run is a full `reproduce --use-prior false` (minutes of CPU per seed).
"""

import argparse
import json
import sys
import time
from pathlib import Path

from dotenv import load_dotenv

# Load .env file from project root (one level up from scripts/)
PROJECT_ROOT = Path(__file__).parent.parent
load_dotenv(PROJECT_ROOT / ".env")
sys.path.insert(0, str(PROJECT_ROOT))

from src.sainr.commands.analysis import RES_ALL, RES_TRAINED, compare_dti  # noqa: E402
from src.sainr.main import main as sainr_main  # noqa: E402
from src.sainr.services.metrics import evaluation_mask  # noqa: E402
from src.sainr.workspace import Workspace  # noqa: E402

SPATIAL_MARGIN_DB = 2.0
ZERO_SHOT_MARGIN_DB = 1.0
GENERALIZATION_GAP_DB = 1.0
ABLATION_SEEDS = 3
MD_TOLERANCE = 0.05


def run_seed(out: Path, seed: int, iters: int) -> dict:
    """One full experiment; returns the numbers every check needs."""
    argv = ["--log-level", "WARNING", "reproduce", "--out", str(out), "--seed-data", str(seed),
            "--seed-train", str(seed), "--iters", str(iters), "--use-prior", "false"]
    code = sainr_main(argv)
    if code != 0:
        raise RuntimeError(f"reproduce exited with {code}")

    ws = Workspace(out)

    def mean(name: str, key: str) -> float:
        return ws.load_report(0, name).aggregates[key].mean

    hr = ws.load_hr(0)
    maps = {c.label: c.nmse for c in compare_dti(ws, 0, evaluation_mask(hr.mask))}
    n_train = len(ws.fit_directions(0, RES_TRAINED))
    n_all = len(ws.fit_directions(0, RES_ALL))
    res_trained, res_all = maps[f"RES-{n_train}"], maps[f"RES-{n_all}"]
    return {
        "seed": seed,
        "lr_trained_psnr": mean("baseline_trained", "psnr"),
        "lr_trained_ssim": mean("baseline_trained", "ssim"),
        "sr_trained_psnr": mean("sainr_trained", "psnr"),
        "sr_trained_ssim": mean("sainr_trained", "ssim"),
        "lr_unseen_psnr": mean("baseline_unseen", "psnr"),
        "sr_unseen_psnr": mean("sainr_unseen", "psnr"),
        "ablation_unseen_psnr": mean("no_prior_unseen", "psnr"),
        "fa_nmse_trained": res_trained["fa"],
        "fa_nmse_all": res_all["fa"],
        "md_nmse_trained": res_trained["md"],
        "md_nmse_all": res_all["md"],
    }


def spatial_sr_holds(result: dict) -> bool:
    """SR beats the thick-slice baseline on trained directions by the PSNR margin, with higher SSIM."""
    return (result["sr_trained_psnr"] >= result["lr_trained_psnr"] + SPATIAL_MARGIN_DB
            and result["sr_trained_ssim"] > result["lr_trained_ssim"])


def zero_shot_holds(result: dict) -> bool:
    return (result["sr_unseen_psnr"] >= result["lr_unseen_psnr"] + ZERO_SHOT_MARGIN_DB
            and result["sr_unseen_psnr"] <= result["sr_trained_psnr"] + GENERALIZATION_GAP_DB)


def prior_wins(results: list[dict]) -> tuple[int, int]:
    """(seeds where the prior-free model is no better on unseen directions, seeds compared)."""
    ablation = results[:ABLATION_SEEDS]
    return sum(r["ablation_unseen_psnr"] <= r["sr_unseen_psnr"] for r in ablation), len(ablation)


def fa_improves_md_stable(results: list[dict]) -> tuple[bool, int]:
    """Whether FA NMSE drops with all directions in enough runs while MD stays within tolerance."""
    needed = -(-7 * len(results) // 10)  # 7 of 10, rounded up
    fa_wins = sum(r["fa_nmse_all"] <= r["fa_nmse_trained"] for r in results)
    md_stable = all(
        abs(r["md_nmse_all"] - r["md_nmse_trained"]) < MD_TOLERANCE * r["md_nmse_trained"] for r in results
    )
    return fa_wins >= needed and md_stable, needed


def evaluate_checks(results: list[dict]) -> dict[str, bool]:
    first = results[0]
    wins, compared = prior_wins(results)
    fa_ok, needed = fa_improves_md_stable(results)
    return {
        "spatial SR >= LR + 2 dB, higher SSIM": spatial_sr_holds(first),
        "zero-shot SR >= LR + 1 dB, gap <= 1 dB": zero_shot_holds(first),
        f"prior helps in >= 2 of {compared} seeds": wins >= min(2, compared),
        f"FA improves in >= {needed} of {len(results)} runs, MD within 5%": fa_ok,
    }


def run_validation(out_dir: str, runs: int, iters: int) -> bool:
    out_path = Path(out_dir)
    print("\nSA-INR — Reference Experiment Validation")
    print(f"{'=' * 70}")
    print(f"{runs} seeded runs, {iters} iterations each -> {out_path}\n")

    results = []
    for seed in range(runs):
        print(f"Running seed {seed}...")
        start_time = time.time()
        try:
            result = run_seed(out_path / f"seed_{seed:02d}", seed, iters)
        except Exception as e:
            print(f"  ✗ Error: {e}")
            continue
        result["time_s"] = round(time.time() - start_time, 1)
        results.append(result)
        print(f"  ✓ trained {result['sr_trained_psnr']:.2f} dB (LR {result['lr_trained_psnr']:.2f}), "
              f"unseen {result['sr_unseen_psnr']:.2f} dB (LR {result['lr_unseen_psnr']:.2f}), "
              f"{result['time_s']}s")

    if not results:
        print("No run completed")
        return False

    # Summary Table
    print(f"\n{'=' * 70}")
    print(f"{'Seed':<6} {'LR tr':>8} {'SR tr':>8} {'LR un':>8} {'SR un':>8} {'w/o b0':>8} "
          f"{'FA 40':>10} {'FA 50':>10} {'MD 40':>10} {'MD 50':>10}")
    print(f"{'-' * 6} {'-' * 8} {'-' * 8} {'-' * 8} {'-' * 8} {'-' * 8} "
          f"{'-' * 10} {'-' * 10} {'-' * 10} {'-' * 10}")
    for r in results:
        print(f"{r['seed']:<6} {r['lr_trained_psnr']:>8.2f} {r['sr_trained_psnr']:>8.2f} "
              f"{r['lr_unseen_psnr']:>8.2f} {r['sr_unseen_psnr']:>8.2f} {r['ablation_unseen_psnr']:>8.2f} "
              f"{r['fa_nmse_trained']:>10.3e} {r['fa_nmse_all']:>10.3e} "
              f"{r['md_nmse_trained']:>10.3e} {r['md_nmse_all']:>10.3e}")

    checks = evaluate_checks(results)
    print(f"\n{'=' * 70}")
    for name, passed in checks.items():
        print(f"  {'✓' if passed else '✗'} {name}")

    output_file = out_path / "validation_results.json"
    output_data = {
        "run_timestamp": time.strftime("%Y-%m-%d %H:%M:%S"),
        "runs": runs,
        "iterations": iters,
        "checks": checks,
        "results": results,
    }
    out_path.mkdir(parents=True, exist_ok=True)
    with open(output_file, "w") as f:
        json.dump(output_data, f, indent=2)
    print(f"\nDetailed results saved to {output_file}")
    return all(checks.values())


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="SA-INR reference experiment validation")
    parser.add_argument("--out", default="runs/validation", help="Directory for the per-seed experiments")
    parser.add_argument("--runs", type=int, default=10, help="Number of seeds (the FA check uses all of them)")
    parser.add_argument("--iters", type=int, default=2000, help="Training iterations per run")
    args = parser.parse_args()
    sys.exit(0 if run_validation(args.out, args.runs, args.iters) else 1)
