"""Command-line driver: ``odce simulate|estimate|filter|report``.

Exit codes: 0 success, 1 usage/config error, 2 I/O error, 3 numerical
degeneracy.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import serialize as io
from .config import ConfigError, ce_config, load_config
from .families import DegenerateComponentError
from .graph import Network, RoutingError
from .odestim import (
    Constraint,
    CostModel,
    DegenerateObjectiveError,
    GroundTruth,
    default_zero_mask,
    estimate,
    simulate,
)
from .pfilter import (
    DynamicsParams,
    TrafficState,
    XiConfig,
    default_arc_lengths,
    filter_run,
    observe_xi,
    simulate_trajectory,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

TRUTH_FILES = ("truth_x.csv", "truth_y.csv", "truth_c.csv", "routing.json")

# stream tags, kept apart from the (seed, iteration) keys used inside CE
_SIM, _MASK, _DYN, _FILTER = 1, 2, 3, 4


class CliIOError(OSError):
    pass


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0, tag]))


def _cost_model(cfg) -> CostModel:
    cm = cfg["cost_model"]
    return CostModel(cm["kind"], float(cm["a"]), float(cm["b"]), float(cm["gamma"]))


def write_manifest(out: Path, command: str, args, cfg) -> None:
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": str(args.config) if args.config else None,
            "seed": cfg["seed"],
            "out": str(out),
            "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "resolved_config": cfg,
        },
    )


def adopt_truth_size(cfg, truth_dir: Path) -> None:
    """Take ``p`` from the truth files so the manifest records what is used."""
    path = truth_dir / "routing.json"
    if path.is_file():
        try:
            cfg["p"] = int(json.loads(path.read_text())["p"])
        except (ValueError, KeyError, TypeError):
            pass  # load_truth reports the broken file


def load_truth(truth_dir: Path, cfg=None) -> GroundTruth:
    missing = [f for f in TRUTH_FILES if not (truth_dir / f).is_file()]
    if missing:
        raise CliIOError(f"missing truth files in {truth_dir}: {', '.join(missing)}")
    net, table, A = io.read_routing_json(truth_dir / "routing.json")
    _, X0 = io.read_arc_csv(truth_dir / "truth_x.csv", net)
    _, Y = io.read_arc_csv(truth_dir / "truth_y.csv", net)
    _, C = io.read_arc_csv(truth_dir / "truth_c.csv", net)
    model = _cost_model(cfg) if cfg is not None else None
    return GroundTruth(net, X0, Y, C, A, table, model)


def cmd_simulate(args, cfg) -> int:
    out = Path(args.out)
    write_manifest(out, "simulate", args, cfg)
    truth = simulate(
        cfg["p"],
        _cost_model(cfg),
        _stream(cfg["seed"], _SIM),
        prior_rate=float(cfg["prior"]["rate"]),
        active=cfg["prior"]["K"],
        rounds=cfg["rounds"],
    )
    net = truth.network
    io.write_arc_csv(out / "truth_x.csv", net, truth.X0)
    io.write_arc_csv(out / "truth_y.csv", net, truth.Y)
    io.write_arc_csv(out / "truth_c.csv", net, truth.C)
    io.write_routing_json(out / "routing.json", net, truth.table, truth.A)
    print(f"simulated p={net.p} n={net.n} total load={truth.Y.sum():.6g} -> {out}")
    return EXIT_OK


def _constraint(cfg, n) -> Constraint:
    con = cfg["constraint"]
    if con["mode"] == "fixed-K":
        return Constraint.fixed_k(con["K"])
    if con["mode"] == "fixed-zeros":
        if con["mask"] is None:
            return Constraint.fixed_zeros(default_zero_mask(n, _stream(cfg["seed"], _MASK)))
        return Constraint.fixed_zeros(np.asarray(con["mask"], bool))
    return Constraint.none()


def cmd_estimate(args, cfg) -> int:
    out = Path(args.out)
    truth_dir = Path(args.truth or args.out)
    adopt_truth_size(cfg, truth_dir)
    write_manifest(out, "estimate", args, cfg)
    truth = load_truth(truth_dir, cfg)
    constraint = _constraint(cfg, truth.n)
    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = estimate(
            truth,
            family=cfg["family"],
            constraint=constraint,
            config=ce_config(cfg, args.workers),
            mode=cfg["mode"],
        )
    wall = time.perf_counter() - t0
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not np.all(np.isfinite(res.X_hat)):
        raise FloatingPointError("estimate produced non-finite OD volumes")
    nY = float(np.linalg.norm(truth.Y))
    result = res.to_dict()
    result.update(
        relative_residual=res.residual / nY if nY > 0 else res.residual,
        wall_time=wall,
        constraint=constraint.mode,
        family=cfg["family"],
    )
    if truth.X0 is not None and np.linalg.norm(truth.X0) > 0:
        result["relative_od_error"] = float(
            np.linalg.norm(res.X_hat - truth.X0) / np.linalg.norm(truth.X0)
        )
    io.write_json(out / "result.json", result)
    res.trace.to_csv(out / "trace.csv")
    io.write_json(out / "identifiability.json", res.diagnostics.to_dict())
    print(f"estimate: residual={res.residual:.6g} iterations={res.iterations} -> {out}")
    return EXIT_OK


def cmd_filter(args, cfg) -> int:
    out = Path(args.out)
    truth_dir = Path(args.truth or args.out)
    f = cfg["filter"]
    adopt_truth_size(cfg, truth_dir)
    write_manifest(out, "filter", args, cfg)
    truth = load_truth(truth_dir, cfg)
    net: Network = truth.network
    model = _cost_model(cfg)
    Y0 = np.rint(truth.Y * f["packet_scale"]).astype(np.int64)
    ref = max(float(Y0.mean()), 1.0)
    Ymax = np.ceil(f["capacity_factor"] * np.maximum(Y0, ref)).astype(np.int64)
    beta = float(f["beta"])
    L = default_arc_lengths(truth.C, beta) if beta > 0 else np.ones(net.n)
    params = DynamicsParams(net, beta, L, Ymax, model)
    C0 = truth.C if model.kind == "constant-random" else model(Y0)
    init = TrafficState(Y0, C0)
    traj = simulate_trajectory(init, params, f["steps"], _stream(cfg["seed"], _DYN))[1:]

    xi = XiConfig(N=f["xi"]["N"], max_iters=int(f["xi"]["max_iters"]), rho=float(cfg["ce"]["rho"]))
    fseed = cfg["seed"]
    if f["observe"] == "loads":
        obs = [s.Y.astype(float) for s in traj]

        def observe(state, k):
            return state.Y.astype(float)
    else:
        obs = [observe_xi(s, net, xi, seed=fseed * 7919 + k) for k, s in enumerate(traj, 1)]

        def observe(state, k):
            return observe_xi(state, net, xi, seed=fseed * 7919 + k)

    res = filter_run(
        obs,
        params,
        init,
        M=f["M"],
        sigma=f["sigma"],
        resample_threshold=float(f["resample_threshold"]),
        seed=int(_stream(fseed, _FILTER).integers(2**63)),
        observe=observe,
        weight_mode=f["weight_mode"],
    )
    res.to_csv(out / "filter.csv", out / "ess.csv")
    print(f"filter: {len(res.steps)} steps, final ESS={res.ess[-1]:.4g} of M={f['M']} -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    path = out / "result.json"
    if not path.is_file():
        raise CliIOError(f"no result.json in {out}")
    res = io.read_json(path)
    ident = res.get("identifiability", {})
    print(f"residual            {res['residual']!r}")
    print(f"relative residual   {res.get('relative_residual')!r}")
    if "relative_od_error" in res:
        print(f"relative OD error   {res['relative_od_error']!r}")
    print(f"iterations          {res['iterations']}")
    print(f"rank / nullity      {ident.get('rank')} / {ident.get('nullity')}")
    print(f"identifiable        {ident.get('identifiable')}")
    print(f"wall time [s]       {res.get('wall_time', float('nan')):.3f}")
    ess_path = out / "ess.csv"
    if ess_path.is_file():
        rows = ess_path.read_text().splitlines()[1:]
        if rows:
            print(f"filter steps        {len(rows)} (final ESS {rows[-1].split(',')[1]})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odce", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "filter", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--out", required=True, help="output directory")
        if name == "report":
            continue
        sp.add_argument("--config", help="JSON scenario file")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--workers", type=int, default=1, help="cap on scoring threads")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. ce.rho=0.05")
        if name in ("estimate", "filter"):
            sp.add_argument("--truth", help="directory with simulate outputs (default: --out)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        if args.command == "report":
            try:
                return cmd_report(args)
            except (CliIOError, KeyError, ValueError) as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        if args.config and not Path(args.config).is_file():
            raise CliIOError(f"config file {args.config} not found")
        cfg = load_config(args.config, args.set, args.seed)
        return {"simulate": cmd_simulate, "estimate": cmd_estimate, "filter": cmd_filter}[args.command](
            args, cfg
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CliIOError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DegenerateObjectiveError, DegenerateComponentError, FloatingPointError, RoutingError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
