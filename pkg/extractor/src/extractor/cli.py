"""CLI: extract --model M --problems F --mode features|generations --out PATH"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .extract import POSITION_RULES, extract_features, extract_generations
from .formats import read_problems


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Extract prefill hidden states or sampled generations "
        "from a local causal LM",
    )
    parser.add_argument("--model", required=True, help="checkpoint path or model id")
    parser.add_argument("--problems", type=Path, required=True, help="problems NDJSON")
    parser.add_argument("--mode", required=True, choices=["features", "generations"])
    parser.add_argument("--out", type=Path, required=True, help="output file path")
    parser.add_argument("--position-rule", choices=POSITION_RULES, default="last_token")
    parser.add_argument("--n", type=int, default=10, help="samples per problem")
    parser.add_argument("--temperature", type=float, default=0.6)
    parser.add_argument("--max-tokens", type=int, default=256)
    parser.add_argument("--top-k", type=int, default=20, help="alternatives kept per step")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    problems = read_problems(args.problems)
    if args.mode == "features":
        report = extract_features(
            args.model,
            problems,
            args.out,
            position_rule=args.position_rule,
            device=args.device,
        )
    else:
        report = extract_generations(
            args.model,
            problems,
            args.out,
            n=args.n,
            temperature=args.temperature,
            max_tokens=args.max_tokens,
            top_k_alternatives=args.top_k,
            seed=args.seed,
            device=args.device,
        )
    print(json.dumps(asdict(report), indent=2))
    return 0 if report.n_done > 0 else 1


if __name__ == "__main__":
    sys.exit(main())
