"""Run the whole correction pipeline on the bundled desk corpus.

Drives the CLI in-process, end to end: tag the hypotheses, build masked
recognizer examples, correct every flagged span against the scripted
backend, score raw vs corrected output, build the preference dataset,
and summarize token usage.  Everything lands in one output directory
next to its manifest, so a second run can be diffed byte for byte.

Run from the repository root:  python scripts/run_desk_pipeline.py --out runs/desk
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from entcorr.cli import main  # noqa: E402


def run(argv: list[str]) -> None:
    code = main(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}: {argv}")


def read_report(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def main_script() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("runs/desk"),
                        help="output directory (default: runs/desk)")
    parser.add_argument("--config", default="builtin:desk_config.yaml",
                        help="pipeline config (default: bundled desk config)")
    parser.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args()

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    base = ["--config", args.config, "--jobs", str(args.jobs)]

    run(["tag", *base, "--output", str(out / "tagged.jsonl")])
    run(["build-rlm", *base, "--output", str(out / "rlm_examples.jsonl")])
    run(["correct", *base, "--output", str(out / "corrected.jsonl")])
    run(["evaluate", *base, "--output", str(out / "report_raw.json")])
    run(["evaluate", *base, "--corrected", str(out / "corrected.jsonl"),
         "--output", str(out / "report_corrected.json")])
    run(["build-astar", *base, "--output", str(out / "preference_pairs.jsonl")])
    run(["stats", "--input", str(out / "corrected.jsonl"),
         "--output", str(out / "token_stats.json"), *base])

    raw = read_report(out / "report_raw.json")
    fixed = read_report(out / "report_corrected.json")
    stats = read_report(out / "token_stats.json")
    pairs = sum(1 for _ in (out / "preference_pairs.jsonl").open(encoding="utf-8"))

    print(f"\noutputs in {out}/")
    print(f"  cer        {raw['cer']:.4f} -> {fixed['cer']:.4f}")
    print(f"  ne_cer     {raw['ne_cer']:.4f} -> {fixed['ne_cer']:.4f}")
    print(f"  ne_recall  {raw['ne_recall']:.4f} -> {fixed['ne_recall']:.4f}")
    print(f"  preference pairs: {pairs}"
          f"  (nothink ratio {stats['nothink_ratio']:.2f},"
          f" mean tokens {stats['mean_token_count']:.1f})")


if __name__ == "__main__":
    main_script()
