"""Command-line front end.

Exit codes: 0 success, 1 I/O problem, 2 invalid input, 3 numerical failure,
4 database built for another network or meter layout.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .amsi import DmaIndex, amsi_rows, write_amsi_csv
from .detect import DetectionConfig, DetectionError, Observation, baselines_from_arrays, detect
from .evaluate import (
    compare_meter_configs,
    detection_indicators,
    dma_table,
    dump_json,
    read_events_csv,
    run_campaign,
    summary,
    write_class_csv,
    write_dma_csv,
    write_events_csv,
)
from .hydraulics import ConvergenceError, DisconnectedError, HydraulicModel, SolverSettings, mean_state
from .network import MeterConfig, Network, NetworkError, ParseError, ValidationError, load_network
from .scenariodb import (
    BuildAborted,
    DatabaseFormatError,
    FingerprintMismatch,
    build_random_db,
    build_scenario_db,
    default_workers,
    export_csv,
    file_hash,
    load_db,
    persist_db,
)

log = logging.getLogger("leakhunt")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_NUMERIC, EXIT_FINGERPRINT = 0, 1, 2, 3, 4
PROVENANCE_PREFIX = "# leakhunt "
# run-specific keys that must not influence reproduced outputs
_NOT_PROVENANCE = {"out", "replay", "config", "workers", "func", "csv"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _settings(args) -> SolverSettings:
    return SolverSettings(args.head_tol, args.flow_tol, args.max_iter)


def _load_net(path) -> Network:
    return load_network(path)


def _load_meters(path, net: Network) -> MeterConfig:
    """Meter layout file: ``{"name": ..., "pressure": [{"node": ..., "tag": ...}, ...]}``."""
    data = json.loads(Path(path).read_text())
    pressure = data.get("pressure", data if isinstance(data, list) else [])
    nodes, tags = [], []
    for e in pressure:
        if isinstance(e, dict):
            nodes.append(str(e["node"]))
            tags.append(str(e.get("tag", "boundary")))
        else:
            nodes.append(str(e))
            tags.append("boundary")
    mc = MeterConfig(tuple(nodes), tuple(tags), tuple(data.get("flow", ())) if isinstance(data, dict) else (), str(data.get("name", Path(path).stem)) if isinstance(data, dict) else Path(path).stem)
    bad = [n for n in mc.pressure_nodes if n not in net.nodes or net.nodes[n].is_reservoir]
    if bad:
        raise CliError(f"meter file {path}: not junctions of the network: {', '.join(bad)}", EXIT_INVALID)
    return mc


def effective_config(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _NOT_PROVENANCE or callable(v):
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def provenance(args, hashes: dict) -> dict:
    return {
        "tool": "leakhunt",
        "version": __version__,
        "command": args.command,
        "hashes": hashes,
        "seed": getattr(args, "seed", None),
        "config": effective_config(args),
    }


def header_lines(prov: dict) -> list[str]:
    return [PROVENANCE_PREFIX + json.dumps(prov, sort_keys=True, separators=(",", ":"))]


def read_provenance(path) -> dict:
    with open(path) as fh:
        for line in fh:
            if line.startswith(PROVENANCE_PREFIX):
                return json.loads(line[len(PROVENANCE_PREFIX):])
            if not line.startswith("#"):
                break
    raise CliError(f"{path}: no provenance header found", EXIT_INVALID)


def _echo_config(args) -> None:
    print("leakhunt effective config: " + json.dumps(effective_config(args), sort_keys=True), file=sys.stderr)


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        net = _load_net(args.network)
    except ValidationError as exc:
        print(f"{args.network}: invalid", file=sys.stderr)
        for v in exc.violations:
            print(f"  - {v}", file=sys.stderr)
        return EXIT_INVALID
    print(
        f"{args.network}: valid ({net.n_p} pipes, {net.n_n} junctions, {net.n_0} reservoirs, "
        f"{len(net.dmas)} DMAs, {len(net.meters)} pressure meters, fingerprint {net.fingerprint()})"
    )
    return EXIT_OK


def _state_rows(label, model: HydraulicModel, st):
    heads = [(label, n, st.H[i], st.pressure[i], st.served[i], st.punctual[i]) for i, n in enumerate(st.junction_ids)]
    flows = [(label, p, st.Q[i], st.P_pipe[i], st.d_leak[i]) for i, p in enumerate(st.pipe_ids)]
    return heads, flows


def _write_rows(path, header, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def cmd_solve(args) -> int:
    net = _load_net(args.network)
    model = HydraulicModel(net, _settings(args))
    states = []
    mults = list(net.cycle.multipliers) if args.cycle else [args.multiplier]
    x0 = None
    for m in mults:
        st = model.solve(m, x0)
        if not st.converged:
            print(
                f"no convergence at multiplier {m} after {st.iterations} iterations: "
                f"max mass residual {st.mass_residual:.3e} m3/s, max head residual {st.head_residual:.3e} m",
                file=sys.stderr,
            )
            return EXIT_NUMERIC
        states.append(st)
        x0 = (np.concatenate([st.Q[model.open_pipe_pos], st.Q_valve]), st.H)
    prov = provenance(args, {"network": net.fingerprint()})
    hdr = header_lines(prov)
    heads, flows = [], []
    for m, st in zip(mults, states):
        h, f = _state_rows(f"m={m!r}", model, st)
        heads += h
        flows += f
    mean = mean_state(states)
    if args.cycle:
        h, f = _state_rows("mean", model, mean)
        heads += h
        flows += f
    if args.out:
        out = _out_dir(args.out)
        _write_rows(out / "heads.csv", hdr, ("state", "node", "head", "pressure", "served", "punctual"), heads)
        _write_rows(out / "flows.csv", hdr, ("state", "pipe", "flow", "mean_pressure", "diffuse_leak"), flows)
        write_amsi_csv(amsi_rows(net, states, states), out / "amsi.csv", hdr)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        for line in hdr:
            sys.stdout.write(line + "\n")
        w.writerow(("state", "node", "head", "pressure", "served", "punctual"))
        for r in heads:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    print(
        f"solved {len(states)} state(s): iterations {[s.iterations for s in states]}, "
        f"diffuse leakage {mean.total_diffuse * 1000:.4f} L/s (mean)",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_build_db(args) -> int:
    net = _load_net(args.network)
    meters = _load_meters(args.meters, net) if args.meters else net.meters
    db = build_scenario_db(
        net, meters,
        (args.orifice_min, args.orifice_max), args.orifice_steps,
        (args.demand_min, args.demand_max), args.demand_steps,
        _settings(args), args.workers,
    )
    persist_db(db, args.out)
    if args.csv:
        export_csv(db, args.csv)
    print(f"{args.out}: {len(db)} scenarios, {db.n_failed} failed, content {db.content_hash()}", file=sys.stderr)
    return EXIT_OK


def cmd_build_random_db(args) -> int:
    net = _load_net(args.network)
    meters = _load_meters(args.meters, net) if args.meters else net.meters
    db = build_random_db(
        net, meters,
        (args.orifice_min, args.orifice_max), (args.demand_min, args.demand_max),
        args.events, args.seed, _settings(args), args.workers,
    )
    persist_db(db, args.out)
    if args.csv:
        export_csv(db, args.csv)
    print(f"{args.out}: {len(db)} events, {db.n_failed} failed, content {db.content_hash()}", file=sys.stderr)
    return EXIT_OK


def _detection_cfg(args) -> DetectionConfig:
    window = None
    if getattr(args, "demand_window", None):
        window = tuple(args.demand_window)
    return DetectionConfig(args.amsi_threshold, args.meter_error, args.aggregation, args.noise, window)


def _read_observation(path, net: Network, db, settings: SolverSettings):
    """Observation file plus baselines derived from the intact network model."""
    data = json.loads(Path(path).read_text())
    mult = data.get("multiplier", 1.0)
    model = HydraulicModel(net, settings)
    if mult == "cycle":
        states = [model.solve(m) for m in net.cycle.multipliers]
        base = mean_state(states)
    else:
        base = model.solve(float(mult))
    if not base.converged:
        raise ConvergenceError("baseline solve did not converge", None, base)
    idx = DmaIndex(net)
    dmas = data.get("dmas", {})
    missing = [d for d in net.dmas if d not in dmas]
    if missing:
        raise CliError(f"observation lacks dma entries: {', '.join(missing)}", EXIT_INVALID)
    base_dens = idx.density(base)
    p_ref, a_ref = idx.reference(base)
    density = {d: float(dmas[d]["density"]) for d in net.dmas}
    bd = np.array([float(dmas[d].get("baseline_density", base_dens[k])) for k, d in enumerate(net.dmas)])
    baselines = baselines_from_arrays(net.dmas, bd, np.power(p_ref, a_ref), a_ref)
    jpos = {n: i for i, n in enumerate(base.junction_ids)}
    meters = {m["node"]: m for m in data.get("meters", [])}
    cur, ref = [], []
    for n in db.meter_nodes:
        if n not in meters:
            raise CliError(f"observation lacks meter '{n}'", EXIT_INVALID)
        cur.append(float(meters[n]["current"]))
        ref.append(float(meters[n].get("baseline", base.pressure[jpos[n]])))
    dp = {d: float(v["p_ref"]) for d, v in dmas.items() if "p_ref" in v}
    return Observation(density, np.array(cur), np.array(ref), dp), baselines


def cmd_detect(args) -> int:
    net = _load_net(args.network)
    db = load_db(args.db)
    db.check(net, MeterConfig(db.meter_nodes))
    cfg = _detection_cfg(args)
    obs, baselines = _read_observation(args.obs, net, db, _settings(args))
    rep = detect(obs, baselines, db, cfg, net)
    prov = provenance(args, {"network": net.fingerprint(), "db": file_hash(args.db), "obs": file_hash(args.obs)})
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(rep.to_dict(), out, prov)
    for d, seq in rep.sequences.items():
        _write_rows(
            out.with_name(f"{out.stem}_{d}.csv"), header_lines(prov),
            ("position", "pipe", "score", "cumulative_length", "degenerate"),
            [(k + 1, it.pipe, it.score, it.cumulative_length, int(it.degenerate)) for k, it in enumerate(seq)],
        )
    if rep.identified:
        top = rep.identified[0][0]
        print(f"identified {', '.join(rep.identified_dmas)}; first pipe in {top}: {rep.sequences[top][0].pipe}", file=sys.stderr)
    else:
        print("no DMA exceeds the AMSI threshold", file=sys.stderr)
    return EXIT_OK


def _campaign_outputs(results, net, out: Path, prov: dict):
    hdr = header_lines(prov)
    write_events_csv(results, out / "events.csv", hdr)
    ind = detection_indicators(results, net.total_length())
    write_class_csv(ind, out / "classes.csv", hdr)
    write_dma_csv(dma_table(results, net), out / "dmas.csv", hdr)
    dump_json(_clean(summary(results, net)), out / "summary.json", prov)


def _clean(obj):
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def cmd_campaign(args) -> int:
    if args.replay:
        prov = read_provenance(args.replay)
        if prov.get("command") != "campaign":
            raise CliError(f"{args.replay} was not produced by 'campaign'", EXIT_INVALID)
        out, workers = args.out, args.workers
        for k, v in prov["config"].items():
            setattr(args, k, tuple(v) if k == "demand_window" and v else v)
        args.out = out or str(Path(args.replay).parent)
        args.workers = workers
        args.replay = None
        expected = prov["hashes"]
        _echo_config(args)
        got = _campaign_hashes(args)
        if got != expected:
            raise CliError(f"inputs changed since the recorded run: expected {expected}, found {got}", EXIT_FINGERPRINT)
    if not args.out:
        raise CliError("--out is required", EXIT_INVALID)
    for name in ("network", "db", "random_db"):
        if not getattr(args, name, None):
            raise CliError(f"--{name.replace('_', '-')} is required", EXIT_INVALID)
        # absolute paths keep the header replayable from any directory
        setattr(args, name, os.path.abspath(getattr(args, name)))
    net = _load_net(args.network)
    sdb = load_db(args.db)
    rdb = load_db(args.random_db)
    sdb.check(net, MeterConfig(sdb.meter_nodes))
    rdb.check(net, MeterConfig(sdb.meter_nodes))
    net = net.with_meters(MeterConfig(sdb.meter_nodes))
    cfg = _detection_cfg(args)
    results = run_campaign(rdb, sdb, net, cfg, args.noise_magnitude, args.seed, args.workers)
    prov = provenance(args, _campaign_hashes(args))
    out = _out_dir(args.out)
    _campaign_outputs(results, net, out, prov)
    s = summary(results, net)
    print(
        f"{len(results)} events: detection rate {s['detection_rate']:.2f} %, "
        f"mean prediction index {s['mean_prediction_index']:.4f}",
        file=sys.stderr,
    )
    return EXIT_OK


def _campaign_hashes(args) -> dict:
    return {
        "network": _load_net(args.network).fingerprint(),
        "db": file_hash(args.db),
        "random_db": file_hash(args.random_db),
    }


def _tag_layouts(net: Network) -> list[MeterConfig]:
    """Nested layouts from the network's meter tags: boundary, + internal, + peripheral."""
    m = net.meters
    layouts = []
    order = ("boundary", "internal", "peripheral")
    for k, tag in enumerate(order):
        keep = set(order[: k + 1])
        sel = [(n, t) for n, t in zip(m.pressure_nodes, m.tags) if t in keep]
        if sel and (not layouts or len(sel) > len(layouts[-1])):
            layouts.append(MeterConfig(tuple(n for n, _ in sel), tuple(t for _, t in sel), m.flow_pipes, tag))
    return layouts


def cmd_compare_meters(args) -> int:
    net = _load_net(args.network)
    configs = [_load_meters(p, net) for p in args.meters] if args.meters else _tag_layouts(net)
    cfg = DetectionConfig(args.amsi_threshold, args.meter_error, args.aggregation, args.noise)
    rows = compare_meter_configs(
        configs, net,
        (args.orifice_min, args.orifice_max), args.orifice_steps,
        (args.demand_min, args.demand_max), args.demand_steps,
        args.events, args.seed, cfg, args.workers, _settings(args),
    )
    prov = provenance(args, {"network": net.fingerprint()})
    _write_rows(
        args.out, header_lines(prov),
        ("layout", "n_meters", "always_predicted", "never_predicted", "predicted", "not_predicted", "n_pipes", "excluded_pipes"),
        [(r.name, r.n_meters, r.always_predicted, r.never_predicted, r.predicted, r.not_predicted, r.n_pipes, len(r.excluded_pipes)) for r in rows],
    )
    for r in rows:
        print(f"{r.name or '-'}: {r.n_meters} meters, always {r.always_predicted:.2f} %, never {r.never_predicted:.2f} %", file=sys.stderr)
    return EXIT_OK


def cmd_report(args) -> int:
    net = _load_net(args.network)
    results = read_events_csv(args.events)
    try:
        prov = read_provenance(args.events)
    except CliError:
        prov = None
    if prov and prov.get("hashes", {}).get("network") not in (None, net.fingerprint()):
        raise CliError("events were produced for a different network", EXIT_FINGERPRINT)
    out = _out_dir(args.out)
    # pressure meters do not affect the recomputed indicators beyond the count
    _campaign_outputs(results, net, out, prov or provenance(args, {"network": net.fingerprint()}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _solver_flags(p):
    p.add_argument("--head-tol", type=float, default=1e-6, help="head tolerance, m (default 1e-6)")
    p.add_argument("--flow-tol", type=float, default=1e-6, help="flow tolerance, m3/s (default 1e-6)")
    p.add_argument("--max-iter", type=int, default=200, help="Newton iteration limit (default 200)")


def _range_flags(p, orifice=(0.005, 0.02)):
    p.add_argument("--orifice-min", type=float, default=orifice[0], help=f"m (default {orifice[0]})")
    p.add_argument("--orifice-max", type=float, default=orifice[1], help=f"m (default {orifice[1]})")
    p.add_argument("--demand-min", type=float, default=0.5, help="demand multiplier (default 0.5)")
    p.add_argument("--demand-max", type=float, default=1.5, help="demand multiplier (default 1.5)")


def _detect_flags(p, threshold=0.1, error=0.5):
    p.add_argument("--amsi-threshold", type=float, default=threshold, help=f"Phase 1 threshold (default {threshold})")
    p.add_argument("--meter-error", type=float, default=error, help=f"meter error bound, m (default {error})")
    p.add_argument("--aggregation", choices=("max", "mean"), default="max", help="pipe score over its scenarios (default max)")
    p.add_argument("--noise", choices=("uniform", "gaussian"), default="uniform", help="meter noise distribution (default uniform)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leakhunt", description="Model-based leak detection for water networks.")
    ap.add_argument("--version", action="version", version=f"leakhunt {__version__}")
    ap.add_argument("--config", help="JSON file with option defaults; command-line flags win")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a network file")
    p.add_argument("--network", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="solve one steady state or the operative cycle")
    p.add_argument("--network", required=True)
    p.add_argument("--multiplier", type=float, default=1.0, help="demand multiplier (default 1.0)")
    p.add_argument("--cycle", action="store_true", help="solve every multiplier of the network's cycle and their mean")
    p.add_argument("--out", help="output directory for heads.csv, flows.csv, amsi.csv (default: heads to stdout)")
    _solver_flags(p)
    p.set_defaults(func=cmd_solve)

    workers = default_workers()
    for name, func, help_ in (
        ("build-db", cmd_build_db, "build the scenario database"),
        ("build-random-db", cmd_build_random_db, "build the random event database"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--network", required=True)
        p.add_argument("--meters", help="meter layout JSON (default: the network's meters)")
        _range_flags(p)
        if name == "build-db":
            p.add_argument("--orifice-steps", type=int, default=10, help="default 10")
            p.add_argument("--demand-steps", type=int, default=10, help="default 10")
        else:
            p.add_argument("--events", type=int, default=10000, help="default 10000")
            p.add_argument("--seed", type=int, default=0, help="default 0")
        p.add_argument("--out", required=True)
        p.add_argument("--csv", help="also export the database as CSV")
        p.add_argument("--workers", type=int, default=workers, help=f"worker processes (default {workers})")
        _solver_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("detect", help="run both detection phases on one observation")
    p.add_argument("--network", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--obs", required=True, help="observation JSON")
    p.add_argument("--out", required=True, help="report JSON; sequences go to <stem>_<dma>.csv")
    p.add_argument("--demand-window", type=float, nargs=2, metavar=("LO", "HI"), help="only use scenarios in this multiplier range")
    _detect_flags(p)
    _solver_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("campaign", help="evaluate the detector on a random database")
    p.add_argument("--network")
    p.add_argument("--db")
    p.add_argument("--random-db")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    p.add_argument("--noise-magnitude", type=float, default=None, help="meter noise, m (default: --meter-error)")
    p.add_argument("--demand-window", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--replay", help="rerun from the provenance header of a campaign output file")
    p.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    _detect_flags(p)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("compare-meters", help="sampling indicators for several meter layouts")
    p.add_argument("--network", required=True)
    p.add_argument("--meters", nargs="*", help="meter layout JSON files (default: nested layouts from meter tags)")
    _range_flags(p, (0.005, 0.01))
    p.add_argument("--orifice-steps", type=int, default=10)
    p.add_argument("--demand-steps", type=int, default=10)
    p.add_argument("--events", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV table")
    p.add_argument("--workers", type=int, default=workers)
    _detect_flags(p, threshold=0.0, error=0.0)
    _solver_flags(p)
    p.set_defaults(func=cmd_compare_meters)

    p = sub.add_parser("report", help="recompute indicator tables from a per-event CSV")
    p.add_argument("--network", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def _apply_config_file(ap: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = ap.parse_args(argv)
    if not args.config:
        return args
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {args.config}", EXIT_IO) from None
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {args.config}: {exc}", EXIT_INVALID) from None
    sub = ap._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
    return ap.parse_args(argv)


def main(argv=None) -> int:
    level = os.environ.get("LEAKHUNT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    ap = build_parser()
    try:
        args = _apply_config_file(ap, argv)
        _echo_config(args)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ParseError, DatabaseFormatError, DetectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FingerprintMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FINGERPRINT
    except (ConvergenceError, BuildAborted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DisconnectedError, NetworkError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
