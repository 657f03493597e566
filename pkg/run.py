"""CLI entrypoint."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from src import config
from src.engine import ConfigInvalid
from src.presets import PRESETS, run_config, run_preset, usage
from src.scenario import ParseError

try:
    from dotenv import load_dotenv as _load_dotenv
except Exception:  # pragma: no cover - optional dependency in some environments
    _load_dotenv = None


def _repo_root() -> Path:
    return Path(__file__).resolve().parent


def load_env(path: str = ".env", root_dir: Optional[Path] = None) -> None:
    """Optionally load a repo-root .env file without overriding real env vars."""
    root = Path(root_dir) if root_dir else _repo_root()
    env_path = (root / path).resolve()
    if not env_path.exists():
        return
    if _load_dotenv is not None:
        _load_dotenv(dotenv_path=env_path, override=False)
        return
    # Fallback parser if python-dotenv is unavailable.
    with env_path.open("r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, val = line.split("=", 1)
            os.environ.setdefault(key.strip(), val.strip())


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="seth", description="Capacitively coupled bus simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="Run a preset experiment or a scenario file")
    run_p.add_argument("target", help=f"Preset name ({', '.join(PRESETS)}) or path to a scenario .ini")
    run_p.add_argument("--seed", type=int, default=None, help="Root seed (default: SETH_SEED or the scenario's)")
    run_p.add_argument("--out", type=str, default=None, help="Output directory (default: SETH_OUT_DIR or out/)")
    run_p.add_argument("--check", action="store_true", help="Exit 2 when an acceptance check fails")
    run_p.add_argument("--runs", type=int, default=None, help="Replicate count override")
    run_p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override one scenario value (repeatable)",
    )
    run_p.add_argument("--workers", type=int, default=1, help="Worker processes for replicates")
    run_p.add_argument("--verbose", action="store_true")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    load_env()
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    seed = args.seed
    if seed is None and os.environ.get("SETH_SEED"):
        seed = config.env_seed()
    if args.runs is not None and args.runs < 1:
        print("Error: --runs must be >= 1", file=sys.stderr)
        return 1
    if args.workers < 1:
        print("Error: --workers must be >= 1", file=sys.stderr)
        return 1

    target = args.target
    options = dict(
        seed=seed,
        out_dir=args.out,
        check=args.check,
        runs=args.runs,
        overrides=args.overrides,
        workers=args.workers,
    )
    try:
        if target in PRESETS:
            return run_preset(target, **options)
        if target.endswith(".ini") or Path(target).exists():
            if not Path(target).exists():
                print(f"Error: scenario file not found: {target}", file=sys.stderr)
                return 1
            return run_config(target, **options)
        print(f"Error: unknown target {target!r}", file=sys.stderr)
        print(usage(), file=sys.stderr)
        return 1
    except (ParseError, ConfigInvalid) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        logging.getLogger("seth").debug("run failed", exc_info=True)
        print(f"Error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
