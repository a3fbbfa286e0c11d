"""Command-line front end: generate, compile, verify, stats, eval.

Exit codes: 0 on success or a passing verdict, 1 on a failing verdict,
2 on usage errors and violated preconditions.
"""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

from .exactrep import DEPTH_CEILING
from .harness import MODES, compile_target, generate_target, verify
from .narrowing import CompileConfig
from .netcore import Network, deserialize, evaluate, format_scalar, serialize, stats

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

COMPILE_MODES = ("narrow", "narrow-bounded", "minwidth", "exact")

# config-file key -> (argparse dest, parser)
CONFIG_KEYS = {
    "mode": ("mode", str),
    "d": ("d", int),
    "n": ("n", int),
    "L": ("L", int),
    "A": ("A", Fraction),
    "B": ("B", Fraction),
    "eps": ("eps", Fraction),
    "delta": ("delta", Fraction),
    "beta": ("beta", Fraction),
    "distribution": ("distribution", str),
    "seed": ("seed", int),
    "samples": ("samples", int),
    "backend": ("backend", str),
    "depth-ceiling": ("depth_ceiling", int),
    "precision": ("precision", int),
    "workers": ("workers", int),
}


class UsageError(Exception):
    pass


def _rational(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from exc


def _add_shape(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--A", type=_rational)
    p.add_argument("--B", type=_rational)
    p.add_argument("--eps", type=_rational)
    p.add_argument("--delta", type=_rational)
    p.add_argument("--beta", type=_rational)
    p.add_argument("--distribution", choices=("uniform", "beta-bounded"))
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", choices=("exact", "float"))
    p.add_argument("--config", type=Path, help="key=value file; keys must not contradict flags")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narrownet", description="Compile wide ReLU networks into narrow deep ones.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a random target network")
    _add_shape(g)
    g.add_argument("--precision", type=int, help="weights are k / 2^precision")
    g.add_argument("--out", type=Path)

    c = sub.add_parser("compile", help="compile a target network")
    _add_shape(c)
    c.add_argument("--mode", choices=COMPILE_MODES)
    c.add_argument("--depth-ceiling", type=int)
    c.add_argument("--in", dest="inp", type=Path, required=True)
    c.add_argument("--out", type=Path)

    v = sub.add_parser("verify", help="check a compiled network against its target")
    _add_shape(v)
    v.add_argument("--mode", choices=MODES)
    v.add_argument("--samples", type=int)
    v.add_argument("--workers", type=int)
    v.add_argument("--in", dest="inp", type=Path, required=True, help="target network")
    v.add_argument("--compiled", type=Path, required=True)
    v.add_argument("--report", type=Path)

    s = sub.add_parser("stats", help="print network statistics")
    s.add_argument("--in", dest="inp", type=Path, required=True)

    e = sub.add_parser("eval", help="evaluate a network at a rational point")
    e.add_argument("--in", dest="inp", type=Path, required=True)
    e.add_argument("--point", required=True, help="comma-separated rationals, e.g. -1/2,3")
    return parser


def _merge_config(args: argparse.Namespace) -> None:
    path = getattr(args, "config", None)
    if path is None:
        return
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: expected key=value with a known key, got {raw!r}")
        dest, kind = CONFIG_KEYS[key]
        if not hasattr(args, dest):
            raise UsageError(f"{path}:{lineno}: key {key!r} does not apply to {args.command}")
        try:
            parsed = kind(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
        current = getattr(args, dest)
        if current is not None and current != parsed:
            raise UsageError(f"{path}:{lineno}: {key}={value} conflicts with command-line value {current}")
        setattr(args, dest, parsed)


def _pick(value, default):
    return default if value is None else value


def _load(path: Path) -> Network:
    try:
        return deserialize(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _write(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _config_for(target: Network, args: argparse.Namespace) -> CompileConfig:
    hidden = max((layer.rows for layer in target.layers[:-1]), default=target.d)
    biggest = stats(target).max_weight
    return CompileConfig(
        d=_pick(args.d, target.d),
        n=_pick(args.n, hidden),
        L=_pick(args.L, target.depth),
        A=_pick(args.A, Fraction(1)),
        B=_pick(args.B, max(Fraction(1), biggest)),
        eps=_pick(args.eps, Fraction(1, 16)),
        delta=_pick(args.delta, Fraction(1, 16)),
        beta=_pick(args.beta, Fraction(1)),
        distribution=_pick(args.distribution, "uniform"),
        seed=_pick(args.seed, 0),
        backend=_pick(args.backend, "exact"),
    )


def cmd_generate(args) -> int:
    if args.d is None or args.n is None or args.L is None:
        raise UsageError("generate needs --d, --n and --L")
    net = generate_target(args.d, args.n, args.L, _pick(args.B, 1), _pick(args.seed, 0), _pick(args.precision, 4))
    _write(serialize(net), args.out)
    return EXIT_OK


def cmd_compile(args) -> int:
    target = _load(args.inp)
    mode = _pick(args.mode, "narrow")
    cfg = None if mode == "exact" else _config_for(target, args)
    compiled = compile_target(target, cfg, mode, _pick(args.depth_ceiling, DEPTH_CEILING))
    _write(serialize(compiled), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    target = _load(args.inp)
    compiled = _load(args.compiled)
    mode = _pick(args.mode, "goodset")
    cfg = None if compiled.tag == "compiled-exact" else _config_for(target, args)
    report = verify(
        target,
        compiled,
        cfg,
        samples=_pick(args.samples, 100),
        seed=_pick(args.seed, 0),
        mode=mode,
        workers=_pick(args.workers, 1),
        backend=_pick(args.backend, "exact"),
    )
    text = report.render()
    _write(text, args.report)
    if args.report is not None:
        sys.stdout.write(f"verdict={report.verdict}\n")
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_stats(args) -> int:
    net = _load(args.inp)
    s = stats(net)
    sys.stdout.write(
        f"name={net.name}\ntag={net.tag}\nd={net.d}\noutputs={net.d_out}\n"
        f"width={s.width}\ndepth={s.depth}\nparams={s.params}\n"
        f"max_weight={format_scalar(s.max_weight)}\nmax_bits={s.max_bits}\n"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    net = _load(args.inp)
    try:
        point = [Fraction(part.strip()) for part in args.point.split(",")]
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"bad point {args.point!r}: {exc}") from exc
    if len(point) != net.d:
        raise UsageError(f"network takes {net.d} inputs, got {len(point)}")
    for v in evaluate(net, point):
        sys.stdout.write(format_scalar(v) + "\n")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "compile": cmd_compile,
    "verify": cmd_verify,
    "stats": cmd_stats,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        _merge_config(args)
        return COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
