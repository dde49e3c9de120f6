"""Command-line entry point: ``python3 -m dispkey <command>`` or ``dispkey <command>``.

Exit codes: 0 all checks passed, 1 a bound or tolerance was violated (or a
protocol session failed), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import experiments as ex
from .fock import CutoffError, PureFockState
from .network import BobListener, connect_alice
from .optics import apply_lifted
from .protocol import ProtocolConfig, ProtocolError, mode_probabilities

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("dispkey")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    sigma_sq: list[float] = field(default_factory=list)
    n: int = 1
    seed: int = 0
    samples: int = 100_000
    tail_eps: float = 1e-10
    tol: float = 1e-8
    out: Path | None = None
    format: str = "csv"
    timestamp: bool = True
    workers: int = 1

    def __post_init__(self):
        if any(not (s > 0 and math.isfinite(s)) for s in self.sigma_sq):
            raise UsageError("sigma^2 values must be positive and finite")
        if self.format not in ("csv", "json"):
            raise UsageError(f"unknown format {self.format!r}")
        if self.tail_eps <= 0 or self.tol <= 0:
            raise UsageError("tolerances must be positive")
        if self.workers < 1:
            raise UsageError("--workers must be at least 1")

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(
            command=args.command,
            sigma_sq=getattr(args, "sigma_sq", None) or [],
            n=args.n,
            seed=args.seed,
            samples=args.samples,
            tail_eps=args.tail_eps,
            tol=args.tol,
            out=args.out,
            format=args.format,
            timestamp=not args.no_timestamp,
            workers=args.workers,
        )


# ---------------------------------------------------------------------------
# report output


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render(rows: list[ex.ReportRow], cfg: RunConfig) -> str:
    flat = [r.flat(with_runtime=cfg.timestamp) for r in rows]
    if cfg.format == "json":
        doc = {"command": cfg.command}
        if cfg.timestamp:
            doc["generated"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        doc["rows"] = [{k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in r.items()} for r in flat]
        return json.dumps(doc, indent=1) + "\n"
    columns: list[str] = []
    for r in flat:
        columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in flat:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def emit(rows: list[ex.ReportRow], cfg: RunConfig) -> int:
    text = render(rows, cfg)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        cfg.out.write_text(text, encoding="utf-8")
        bad = sum(not r.ok for r in rows)
        print(f"{cfg.command}: {len(rows)} rows, {bad} violated -> {cfg.out}")
    return EXIT_OK if all(r.ok for r in rows) else EXIT_VIOLATION


def _pool_map(fn, jobs, workers: int):
    if workers == 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


# ---------------------------------------------------------------------------
# commands


def cmd_verify_bound(args, cfg: RunConfig) -> int:
    pairs = [tuple(p.split(",")) for p in args.pair] if args.pair else []
    if any(len(p) != 2 for p in pairs):
        raise UsageError("--pair takes STATE_A,STATE_B")
    jobs = [(s2, a, b, cfg.n, cfg.tail_eps) for s2 in cfg.sigma_sq for a, b in pairs]
    for a, b, n in ex.random_pair_specs(args.random_pairs, cfg.seed):
        jobs += [(s2, a, b, n, cfg.tail_eps) for s2 in cfg.sigma_sq]
    if not jobs:
        jobs = [(s2, "fock:0", "fock:1", cfg.n, cfg.tail_eps) for s2 in cfg.sigma_sq]
    # validate presets and files up front so a typo is a usage error
    for _, a, b, n, _ in jobs:
        ex.single_mode_preset(a, n), ex.single_mode_preset(b, n)
    return emit(_pool_map(ex.bound_row, jobs, cfg.workers), cfg)


def cmd_oracle_check(args, cfg: RunConfig) -> int:
    if not 0 <= args.nmax <= 8:
        raise UsageError("oracle grid supports indices up to 8")
    jobs = [(s2, args.nmax, cfg.tol) for s2 in cfg.sigma_sq]
    return emit(_pool_map(ex.oracle_row, jobs, cfg.workers), cfg)


def cmd_mc_check(args, cfg: RunConfig) -> int:
    states = args.states.split(";") if args.states else ["fock:0", "fock:1", "plus:1", "random:0"]
    jobs = [(s2, st, cfg.samples, args.cutoff, cfg.seed, cfg.n) for s2 in cfg.sigma_sq for st in states]
    for _, st, *_rest in jobs:
        ex.single_mode_preset(st, cfg.n)
    return emit(_pool_map(ex.monte_carlo_row, jobs, cfg.workers), cfg)


def cmd_lemma_checks(args, cfg: RunConfig) -> int:
    rows = (
        ex.series_rows()
        + ex.recurrence_rows()
        + ex.step_bound_rows(tail_eps=cfg.tail_eps)
        + ex.pair_bound_rows(tail_eps=cfg.tail_eps)
        + ex.inequality_rows()
        + ex.row_sum_rows(tail_eps=cfg.tail_eps)
    )
    return emit(rows, cfg)


def _protocol_state(args) -> PureFockState:
    return ex.multimode_preset(args.state, args.modes, args.n)


def _adaptive_config(args, psi: PureFockState, seed: int) -> ProtocolConfig:
    mode = args.measure_mode if args.measure_mode is not None else args.modes - 1
    branches = ex.phase_branch_table(args.modes, psi.max_photons, target=0)
    u1 = ex.unitary_preset(args.unitary or "bs", args.modes)
    return ProtocolConfig(args.modes, args.sigma, seed, u1, mode, branches)


def cmd_protocol_demo(args, cfg: RunConfig) -> int:
    psi = _protocol_state(args)
    u = ex.unitary_preset(args.unitary or f"random:{cfg.seed}", args.modes)
    rows = [ex.passive_row(psi, u, args.sigma, cfg.seed + r, args.state, args.unitary or f"random:{cfg.seed}") for r in range(args.runs)]
    return emit(rows, cfg)


def cmd_adaptive_demo(args, cfg: RunConfig) -> int:
    psi = _protocol_state(args)
    config = _adaptive_config(args, psi, cfg.seed)
    rows = [ex.adaptive_row(replace(config, seed=cfg.seed + r), psi, args.state) for r in range(args.runs)]
    if args.runs > 1:
        born = mode_probabilities(apply_lifted(config.unitary_stage1, psi), config.measured_mode)
        counts = [0] * len(born)
        for r in rows:
            counts[r.extra["outcome"]] += 1
        band = 3 / math.sqrt(args.runs)
        for k, p in enumerate(born):
            freq = counts[k] / args.runs
            rows.append(ex.ReportRow("adaptive-frequency", {"outcome": k, "runs": args.runs}, freq, p, abs(freq - p), {"band": band, "satisfied": abs(freq - p) <= band}))
    return emit(rows, cfg)


def cmd_serve(args, cfg: RunConfig) -> int:
    psi_max = args.n
    u1 = ex.unitary_preset(args.unitary or ("bs" if args.adaptive else f"random:{cfg.seed}"), args.modes)
    if args.adaptive:
        mode = args.measure_mode if args.measure_mode is not None else args.modes - 1
        config = ProtocolConfig(args.modes, args.sigma, cfg.seed, u1, mode, ex.phase_branch_table(args.modes, psi_max))
    else:
        config = ProtocolConfig(args.modes, args.sigma, cfg.seed, u1)
    with BobListener(config, args.port, args.host, args.timeout) as listener:
        print(f"listening on {listener.address[0]}:{listener.port}", flush=True)
        report = listener.serve_one()
    print(f"session {report.status}: received {' '.join(report.received)}" + (f" ({report.error})" if report.error else ""), flush=True)
    return EXIT_OK if report.status == "ok" else EXIT_VIOLATION


def cmd_connect(args, cfg: RunConfig) -> int:
    if not args.address:
        raise UsageError("connect needs --address HOST:PORT")
    psi = _protocol_state(args)
    res = connect_alice(args.address, psi, args.sigma, cfg.seed, timeout=args.timeout)
    row = ex.ReportRow(
        "connect",
        {"address": args.address, "sigma": args.sigma, "seed": cfg.seed, "state": args.state},
        res.fidelity,
        1 - 1e-6,
        1 - res.fidelity,
        {"outcome": res.outcome, "events": "|".join(res.transcript.kinds()), "satisfied": res.fidelity >= 1 - 1e-6},
    )
    return emit([row], cfg)


COMMANDS = {
    "verify-bound": cmd_verify_bound,
    "oracle-check": cmd_oracle_check,
    "mc-check": cmd_mc_check,
    "lemma-checks": cmd_lemma_checks,
    "protocol-demo": cmd_protocol_demo,
    "adaptive-demo": cmd_adaptive_demo,
    "serve": cmd_serve,
    "connect": cmd_connect,
}


# ---------------------------------------------------------------------------
# parsing


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma list of numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=None, help="photon number (random presets, protocol states)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--samples", type=int, default=100_000)
    common.add_argument("--tail-eps", type=float, default=1e-10)
    common.add_argument("--tol", type=float, default=1e-8)
    common.add_argument("--out", type=Path, default=None)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--no-timestamp", action="store_true", help="omit timestamps and runtimes for byte-stable reports")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    proto = argparse.ArgumentParser(add_help=False)
    proto.add_argument("--modes", type=int, default=2)
    proto.add_argument("--sigma", type=float, default=0.5, help="key standard deviation per quadrature")
    proto.add_argument("--state", default=None, help="FILE, fock:n1,n2,... or random:SEED")
    proto.add_argument("--unitary", default=None, help="FILE, random:SEED, bs or identity")
    proto.add_argument("--measure-mode", type=int, default=None)
    proto.add_argument("--timeout", type=float, default=30.0)

    parser = argparse.ArgumentParser(prog="dispkey", description="Displacement-key encryption of linear optics: bounds, oracles and protocol demos.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-bound", parents=[common], help="encrypted trace distance vs the security bound")
    p.add_argument("--sigma-sq", type=_float_list, default=[2.0, 4.0, 16.0, 64.0])
    p.add_argument("--pair", action="append", help="STATE_A,STATE_B with presets fock:k, plus:k, minus:k, random:SEED or files")
    p.add_argument("--random-pairs", type=int, default=0, help="add this many random pairs (n cycling 1..3)")

    p = sub.add_parser("oracle-check", parents=[common], help="closed form vs quadrature over the index grid")
    p.add_argument("--sigma-sq", type=_float_list, default=[0.5, 1.0, 2.0, 4.0])
    p.add_argument("--nmax", type=int, default=5)

    p = sub.add_parser("mc-check", parents=[common], help="Monte-Carlo channel vs closed form, in standard errors")
    p.add_argument("--sigma-sq", type=_float_list, default=[1.0])
    p.add_argument("--states", default=None, help="semicolon list of single-mode presets")
    p.add_argument("--cutoff", type=int, default=25)

    sub.add_parser("lemma-checks", parents=[common], help="property suites for the bound ingredients, one row per instance")

    p = sub.add_parser("protocol-demo", parents=[common, proto], help="passive encrypted computation")
    p.add_argument("--runs", type=int, default=1)
    p = sub.add_parser("adaptive-demo", parents=[common, proto], help="one measurement with feedforward")
    p.add_argument("--runs", type=int, default=1)

    p = sub.add_parser("serve", parents=[common, proto], help="run Bob for one networked session")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--adaptive", action="store_true")

    p = sub.add_parser("connect", parents=[common, proto], help="run Alice against a Bob server")
    p.add_argument("--address", default=None, help="HOST:PORT")
    return parser


def _apply_defaults(args):
    if args.n is None:
        args.n = 2 if args.command in ("protocol-demo", "adaptive-demo", "serve", "connect") else 1
    if getattr(args, "state", "") is None:
        args.state = "fock:1,0" if args.command == "adaptive-demo" else f"random:{args.seed}"
    if getattr(args, "runs", 1) < 1:
        raise UsageError("--runs must be at least 1")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_defaults(args)
        cfg = RunConfig.from_args(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ValueError, OSError) as exc:
        print(f"dispkey {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ProtocolError, CutoffError) as exc:
        print(f"dispkey {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
