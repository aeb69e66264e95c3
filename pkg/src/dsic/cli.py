"""Command-line entry point.

Exit codes: 0 ok, 1 verification failure, 2 I/O or parse error, 3 semantic
config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import faults
from .config import RunConfig, load_config, serialize_config
from .errors import ConfigError, ConfigParseError

EXIT_OK, EXIT_VERIFY, EXIT_IO, EXIT_CONFIG = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(f"dsic: {msg}", file=sys.stderr)


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
        changes["seeds"] = (args.seed,)
    if getattr(args, "workers", None) is not None:
        changes["workers"] = args.workers
    return cfg.replace(**changes).validate()


def metrics_csv(history) -> str:
    lines = ["step,loss,lr"]
    lines += [f"{step},{loss!r},{lr!r}" for step, loss, lr in history]
    return "\n".join(lines) + "\n"


def cmd_train(args) -> int:
    from .records import write_gate_csv
    from .serialize import save_snapshot
    from .train import train

    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = train(cfg)
    (out / "metrics.csv").write_text(metrics_csv(state.loss_history))
    (out / "config.txt").write_text(serialize_config(cfg))
    save_snapshot(out / "snapshot.npz", state.params, cfg)
    write_gate_csv(out / "gates.csv", state.gate_log)
    step, loss, _ = state.loss_history[-1]
    print(f"trained {cfg.connector} for {cfg.steps} steps; final loss {loss:.6f}; artifacts in {out}")
    return EXIT_OK


def _load_snapshot(path):
    from .serialize import load_snapshot

    if not Path(path).is_file():
        raise FileNotFoundError(f"snapshot not found: {path}")
    return load_snapshot(path)


def cmd_eval(args) -> int:
    from .train import evaluate

    params, cfg = _load_snapshot(args.snapshot)
    metrics = evaluate(params, cfg, args.n_val)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "eval.json").write_text(text + "\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_checks

    def report(res):
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name} ({res.seconds:.1f}s): {res.detail}", flush=True)

    with faults.inject(*(args.inject or [])):
        results = run_checks(report=report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {failed[0]} ({len(failed)} of {len(results)} checks failed: {', '.join(failed)})")
        return EXIT_VERIFY
    print(f"OK: {len(results)} checks passed")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablate import AXES, ablate, to_csv, to_text

    if args.axis not in AXES:
        _err(f"unknown ablation axis {args.axis!r}; expected one of {', '.join(sorted(AXES))}")
        return EXIT_CONFIG
    cfg = _resolve_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = ablate(cfg, args.axis, progress=lambda r: print(f"  finished {r.label}", file=sys.stderr))
    path = out / f"ablation_{args.axis}.csv"
    path.write_text(to_csv(results, cfg.seeds))
    print(to_text(results, cfg.seeds))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_gates(args) -> int:
    import numpy as np

    from .records import GateRecord, matrix_csv, matrix_pgm, write_gate_csv
    from .synth import generate_sample
    from .train import predict

    params, cfg = _load_snapshot(args.snapshot)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    samples = [
        generate_sample(s, tuple(cfg.blob_count), tuple(args.radius_range), size=cfg.image_size)
        for s in args.seeds
    ]
    _, records = predict(params, cfg, samples)
    for rec in records:
        sid = rec.sample_id
        mat = rec.csg_w if rec.csg_w is not None else np.zeros((4, 4))
        (out / f"csg_{sid}.csv").write_text(matrix_csv(mat))
        (out / f"csg_{sid}.pgm").write_bytes(matrix_pgm(mat))
        write_gate_csv(out / f"isg_{sid}.csv", [GateRecord(sid, rec.isg_b, rec.isg_a)])
    print(f"exported gate states for {len(records)} samples to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsic", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("train", help="train one configuration")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a snapshot on held-out samples")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--n-val", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("verify", help="run the oracle and gradient checks")
    p.add_argument("--inject", action="append", choices=faults.KNOWN, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("ablate", help="train every arm of an ablation axis")
    p.add_argument("axis")
    common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("export-gates", help="write gate-state matrices for chosen samples")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--seeds", type=int, nargs="+", required=True)
    p.add_argument("--radius-range", type=float, nargs=2, default=(2.0, 32.0), metavar=("LO", "HI"))
    p.add_argument("--out")
    p.set_defaults(fn=cmd_export_gates)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except ConfigParseError as exc:
        _err(str(exc))
        return EXIT_IO
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
