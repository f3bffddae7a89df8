"""Command-line front end.

    edit-kernels verify [--seed S] [--tolerance T]
    edit-kernels bench --mech M[,M...] --grid HxW[,HxW...] [--prompt-tokens P] [--dim D]
                       [--heads H] [--iters I] [--warmup W] [--seed S] [--out FILE.csv]
    edit-kernels flops --mech ... --grid ... [--out FILE.csv]
    edit-kernels weights gen --seed S --mech M --out FILE.edtw
    edit-kernels weights inspect FILE.edtw

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import sys

from . import weights as wio
from .config import AttentionConfig, parse_grid
from .errors import ConfigError, EditKernelsError, WeightFormatError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _split(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _configs(args) -> list[AttentionConfig]:
    mechs = _split(args.mech)
    if not mechs:
        raise ConfigError("--mech is empty")
    return [AttentionConfig.for_mechanism(m, d=args.dim, heads=args.heads,
                                          n_prompt=args.prompt_tokens)
            for m in mechs]


def _grids(text: str):
    grids = [parse_grid(g) for g in _split(text)]
    if not grids:
        raise ConfigError("--grid is empty")
    return grids


def _add_model_args(p, with_timing: bool):
    p.add_argument("--mech", required=True, help="comma-separated mechanisms, e.g. sdpa,edit,kvcomp(2)")
    p.add_argument("--grid", required=True, help="comma-separated HxW grids, e.g. 16x16,32x32")
    p.add_argument("--prompt-tokens", type=int, default=16)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    if with_timing:
        p.add_argument("--iters", type=int, default=5)
        p.add_argument("--warmup", type=int, default=2)
        p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write CSV here")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="edit-kernels", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="run the oracle-equivalence suites")
    v.add_argument("--seed", type=int, default=42)
    v.add_argument("--tolerance", type=float, default=1e-5)

    _add_model_args(sub.add_parser("bench", help="latency sweep to CSV"), with_timing=True)
    _add_model_args(sub.add_parser("flops", help="analytic multiply-add table"), with_timing=False)

    w = sub.add_parser("weights", help="weight container tools")
    wsub = w.add_subparsers(dest="wcmd", required=True, parser_class=_Parser)
    g = wsub.add_parser("gen", help="write seeded weights for a mechanism")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--mech", required=True)
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--out", required=True)
    i = wsub.add_parser("inspect", help="list tensors in a container")
    i.add_argument("path")
    return p


def cmd_verify(args, out) -> int:
    from .verify import run_verify

    if args.tolerance < 0:
        raise UsageError("--tolerance must be >= 0")
    ok, _, report = run_verify(args.seed, args.tolerance)
    out.write(report)
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_bench(args, out) -> int:
    from .bench import run_sweep, slopes, write_csv

    if args.iters < 3:
        raise UsageError("--iters must be >= 3")
    if args.warmup < 0:
        raise UsageError("--warmup must be >= 0")
    configs, grids = _configs(args), _grids(args.grid)
    fh = _open_out(args.out)

    def progress(rec):
        out.write(f"{rec.mechanism:<18} {rec.H}x{rec.W:<5} N={rec.n_image:<6d} "
                  f"{rec.wall_ms:10.3f} ms  flops={rec.flops}\n")
        out.flush()

    try:
        records = run_sweep(configs, grids, seed=args.seed, iters=args.iters,
                            warmup=args.warmup, progress=progress)
        if fh is not None:
            write_csv(records, fh)
    finally:
        if fh is not None:
            fh.close()
    for mech, s in slopes(records).items():
        out.write(f"slope {mech:<18} {s:.3f}\n")
    return EXIT_OK


def cmd_flops(args, out) -> int:
    from .flops import flop_model

    configs, grids = _configs(args), _grids(args.grid)
    rows = []
    for cfg in configs:
        for h, w in grids:
            c = cfg.with_grid(h, w)
            fc = flop_model(c)
            rows.append((c.label, h, w, c.n_image, c.n_prompt if c.multimodal else 0, c.d,
                         c.heads, fc.total, fc.terms))
    for label, h, w, n, n_p, d, heads, total, terms in rows:
        detail = " ".join(f"{k}={v}" for k, v in terms.items())
        out.write(f"{label:<18} {h}x{w:<5} N={n:<6d} total={total:<14d} {detail}\n")
    if args.out:
        fh = _open_out(args.out)
        with fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(("mechanism", "H", "W", "n_image", "n_prompt", "d", "heads", "flops"))
            for row in rows:
                wr.writerow(row[:8])
    return EXIT_OK


def cmd_weights(args, out) -> int:
    from .mechanisms import seeded_store

    if args.wcmd == "gen":
        cfg = AttentionConfig.for_mechanism(args.mech, d=args.dim, heads=args.heads)
        store = seeded_store(cfg, args.seed)
        try:
            wio.save(store, args.out)
        except OSError as e:
            raise _IOFailure(str(e)) from e
        out.write(f"wrote {len(store)} tensors for {cfg.label} to {args.out}\n")
        return EXIT_OK
    try:
        store = wio.load(args.path)
    except OSError as e:
        raise _IOFailure(str(e)) from e
    out.write(f"{args.path}: {len(store)} tensors, format v{wio.VERSION}\n")
    for name, t in store.items():
        shape = "x".join(map(str, t.shape)) or "scalar"
        stats = (f"min={float(t.min()):+.4g} max={float(t.max()):+.4g}" if t.size else "empty")
        out.write(f"  {name:<28} {shape:<14} {stats}\n")
    return EXIT_OK


class _IOFailure(Exception):
    pass


def _open_out(path):
    if not path:
        return None
    try:
        return open(path, "w", newline="")
    except OSError as e:
        raise _IOFailure(f"cannot write {path}: {e}") from e


def main(argv=None, out=None, err=None) -> int:
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
        handler = {"verify": cmd_verify, "bench": cmd_bench, "flops": cmd_flops,
                   "weights": cmd_weights}[args.cmd]
        return handler(args, out)
    except UsageError as e:
        err.write(f"usage error: {e}\n")
        return EXIT_USAGE
    except ConfigError as e:
        err.write(f"usage error: {e}\n")
        return EXIT_USAGE
    except (_IOFailure, WeightFormatError) as e:
        err.write(f"I/O error: {e}\n")
        return EXIT_IO
    except EditKernelsError as e:
        err.write(f"error: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
