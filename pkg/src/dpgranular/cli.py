"""Command-line interface: ``plan``, ``verify``, ``inspect`` and ``cache``.

Exit codes: 0 when every verified claim holds, 2 when the composition was
computed but a verification failed, 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cache import cache_matrices, clear_cache
from .config import build, load_config
from .errors import DPGranularError
from .report import inspect_space, jsonable, run_plan

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VERIFY_FAILED = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpgranular", description="Granularity-aware privacy composition and verification.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON plan configuration")
        sp.add_argument("--out", help="write the JSON report here instead of stdout")
        sp.add_argument("--cache-dir", help="directory for cached distance matrices")

    sp = sub.add_parser("plan", help="compose the plan and report the guarantee")
    common(sp)
    sp = sub.add_parser("verify", help="compose, then check the configured mechanisms")
    common(sp)
    sp.add_argument("--pairs", choices=("neighbors", "all"), help="pair scope for composed checks")
    sp.add_argument("--seed", type=int, default=0, help="seed for the post-processing checks")
    sp.add_argument("--tolerance-profile", choices=("strict", "default"), help="named tolerance set")
    sp = sub.add_parser("inspect", help="report metric, granularity and partition facts")
    common(sp)
    sp = sub.add_parser("cache", help="warm or clear the distance-matrix cache")
    sp.add_argument("action", choices=("warm", "clear"))
    common(sp, config_required=False)
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def run(argv: list[str] | None = None) -> int:
    """Run the CLI and return the exit code."""
    args = _parser().parse_args(argv)
    try:
        if args.command == "cache":
            if not args.cache_dir:
                raise DPGranularError("cache needs --cache-dir")
            if args.action == "clear":
                _emit(_dump({"removed": clear_cache(args.cache_dir)}), args.out)
                return EXIT_OK
            if not args.config:
                raise DPGranularError("cache warm needs --config")
            built = build(load_config(args.config))
            paths = cache_matrices(built.domain, built.granularities.values(), args.cache_dir)
            _emit(_dump({"written": [p.name for p in paths]}), args.out)
            return EXIT_OK
        doc = load_config(args.config)
        if args.command == "inspect":
            built = build(doc)
            built.extras["cache_dir"] = args.cache_dir
            _emit(_dump(inspect_space(built)), args.out)
            return EXIT_OK
        verify = args.command == "verify"
        report = run_plan(
            doc,
            verify=verify,
            pairs=getattr(args, "pairs", None),
            tolerance_profile=getattr(args, "tolerance_profile", None),
            seed=getattr(args, "seed", 0),
            cache_dir=args.cache_dir,
        )
        _emit(report.to_json(), args.out)
        if verify and not report.all_verified:
            return EXIT_VERIFY_FAILED
        return EXIT_OK
    except (DPGranularError, OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
