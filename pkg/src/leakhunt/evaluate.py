"""Campaigns over random leak events and the indicators computed from them."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .detect import DetectionConfig, Observation, baselines_from_arrays, detect, inject_errors
from .network import MeterConfig, Network
from .scenariodb import (
    FingerprintMismatch,
    ScenarioDatabase,
    build_random_db,
    build_scenario_db,
    leak_pipes,
    sample_events,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OutflowClass:
    label: str
    low: float  # L/s
    high: float
    low_inclusive: bool = False

    def contains(self, q: float) -> bool:
        above = q >= self.low if self.low_inclusive else q > self.low
        return above and q <= self.high


OUTFLOW_CLASSES = (
    OutflowClass("small", 0.19, 1.0, low_inclusive=True),
    OutflowClass("medium-small", 1.0, 2.0),
    OutflowClass("medium-high", 2.0, 3.0),
    OutflowClass("high", 3.0, math.inf),
)
ANY = "any"


def outflow_class(q: float, classes: Sequence[OutflowClass] = OUTFLOW_CLASSES) -> str | None:
    for c in classes:
        if c.contains(q):
            return c.label
    return None


@dataclass(frozen=True)
class EventResult:
    event: int
    pipe: str
    dma: str
    detected: bool  # true DMA among the identified ones
    first_hit: bool  # true DMA identified first
    wrong_dma: bool  # something identified, true DMA not among it
    identified: tuple[str, ...]
    rank: int | None
    inspected_length: float | None
    leak_outflow: float  # L/s
    score: float | None
    n_dma_pipes: int
    failed: bool = False


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------

def event_observation(rdb: ScenarioDatabase, i: int, noise: float = 0.0, seed: int = 0, distribution: str = "uniform"):
    """Observation and baselines for event ``i`` of a random database."""
    deltas = rdb.meter_deltas[i]
    if noise > 0:
        deltas = inject_errors(deltas, noise, np.random.default_rng([seed, i]), distribution)
    dens = dict(zip(rdb.dma_ids, (float(x) for x in rdb.dma_density[i])))
    obs = Observation.from_deltas(dens, deltas, rdb.meter_baseline[i])
    base = baselines_from_arrays(rdb.dma_ids, rdb.baseline_density[i], rdb.amsi_scale[i])
    return obs, base


def _evaluate_event(rdb, sdb, net, cfg, noise, seed, i, dma_pipes) -> EventResult:
    pipe = rdb.pipe_of(i)
    dma = rdb.dma_of(i)
    q = float(rdb.leak_outflow[i])
    n_pipes = len(dma_pipes[dma])
    if rdb.failed[i]:
        return EventResult(i, pipe, dma, False, False, False, (), None, None, q, None, n_pipes, failed=True)
    obs, base = event_observation(rdb, i, noise, seed, cfg.noise)
    rep = detect(obs, base, sdb, cfg, net)
    ident = tuple(rep.identified_dmas)
    detected = dma in ident
    rank = length = score = None
    if detected:
        seq = rep.sequences[dma]
        for k, item in enumerate(seq):
            if item.pipe == pipe:
                rank, length, score = k + 1, item.cumulative_length, item.score
                break
    return EventResult(
        i, pipe, dma, detected, bool(ident) and ident[0] == dma, bool(ident) and not detected,
        ident, rank, length, q, score, n_pipes,
    )


def _dma_pipes(net: Network) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {d: [] for d in net.dmas}
    for p in net.pipes.values():
        if p.is_open and p.dma is not None:
            out[p.dma].append(p.id)
    return out


_CW: dict = {}


def _campaign_init(rdb, sdb, net_dict, cfg, noise, seed):
    from .network import network_from_dict

    net = network_from_dict(net_dict)
    _CW.update(rdb=rdb, sdb=sdb, net=net, cfg=cfg, noise=noise, seed=seed, dp=_dma_pipes(net))


def _campaign_chunk(idx):
    w = _CW
    return [_evaluate_event(w["rdb"], w["sdb"], w["net"], w["cfg"], w["noise"], w["seed"], int(i), w["dp"]) for i in idx]


def run_campaign(
    rdb: ScenarioDatabase,
    sdb: ScenarioDatabase,
    net: Network,
    cfg: DetectionConfig = DetectionConfig(),
    noise: float | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[EventResult]:
    """Detect every event of ``rdb`` using ``sdb`` as reference.

    ``noise`` is the meter error magnitude added to the pressure drops
    (defaults to ``cfg.meter_error``). Event ``i`` uses its own random
    stream derived from ``(seed, i)``, so results do not depend on worker
    count or order.
    """
    sdb.check(net, MeterConfig(sdb.meter_nodes))
    if rdb.network_fingerprint != sdb.network_fingerprint or rdb.meter_fingerprint != sdb.meter_fingerprint:
        raise FingerprintMismatch("random and scenario databases were built for different networks or meters")
    noise = cfg.meter_error if noise is None else float(noise)
    n = len(rdb)
    if n == 0:
        return []
    if workers <= 1:
        dp = _dma_pipes(net)
        return [_evaluate_event(rdb, sdb, net, cfg, noise, seed, i, dp) for i in range(n)]
    chunks = np.array_split(np.arange(n), max(1, min(n, workers * 4)))
    with ProcessPoolExecutor(workers, initializer=_campaign_init, initargs=(rdb, sdb, net.to_dict(), cfg, noise, seed)) as ex:
        out: list[EventResult] = []
        for part in ex.map(_campaign_chunk, chunks):
            out.extend(part)
    return out


def random_ranking_campaign(pipes: Sequence[str], net: Network, seed: int = 0, outflows: Sequence[float] | None = None) -> list[EventResult]:
    """Reference campaign: the leak's DMA is known and its pipes are inspected in random order.

    ``pipes`` lists the true leak pipe of each event (for instance
    ``[rdb.pipe_of(i) for i in range(len(rdb))]``).
    """
    dp = _dma_pipes(net)
    out = []
    for i, pipe in enumerate(pipes):
        dma = net.pipes[pipe].dma
        order = list(dp[dma])
        perm = np.random.default_rng([seed, i]).permutation(len(order))
        cum = 0.0
        rank = length = None
        for k, j in enumerate(perm):
            cum += net.pipes[order[j]].length
            if order[j] == pipe:
                rank, length = k + 1, cum
                break
        q = float(outflows[i]) if outflows is not None else float("nan")
        out.append(EventResult(i, pipe, dma, True, True, False, (dma,), rank, length, q, None, len(order)))
    return out


def uniform_pipe_draws(net: Network, n_events: int, seed: int = 0) -> list[str]:
    """Leak pipes drawn exactly as the random database draws them."""
    pipes = leak_pipes(net)
    idx, _, _ = sample_events(len(pipes), (1.0, 1.0), (1.0, 1.0), n_events, seed)
    return [pipes[k] for k in idx]


# ---------------------------------------------------------------------------
# Indicators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingIndicators:
    always_predicted: float
    never_predicted: float
    predicted: float
    not_predicted: float
    n_meters: int
    n_pipes: int
    excluded_pipes: tuple[str, ...] = ()
    name: str = ""


def sampling_indicators(results: Iterable[EventResult], n_meters: int = 0, all_pipes: Iterable[str] = (), name: str = "") -> SamplingIndicators:
    """Share of pipes always / never ranked first over their detected events."""
    by_pipe: dict[str, list[int]] = {}
    for r in results:
        if r.detected and r.rank is not None:
            by_pipe.setdefault(r.pipe, []).append(r.rank)
    excluded = tuple(sorted(p for p in all_pipes if p not in by_pipe))
    n = len(by_pipe)
    if n == 0:
        nan = float("nan")
        return SamplingIndicators(nan, nan, nan, nan, n_meters, 0, excluded, name)
    always = 100.0 * sum(all(k == 1 for k in v) for v in by_pipe.values()) / n
    never = 100.0 * sum(all(k != 1 for k in v) for v in by_pipe.values()) / n
    return SamplingIndicators(always, never, 100.0 - never, 100.0 - always, n_meters, n, excluded, name)


@dataclass(frozen=True)
class ClassIndicators:
    label: str
    n_events: int
    true_prediction: float  # % of events ranked first
    average_prediction: float  # mean rank
    length_to_inspect: float  # m
    percentage_to_inspect: float  # % of network length


def detection_indicators(
    results: Iterable[EventResult],
    total_length: float,
    classes: Sequence[OutflowClass] = OUTFLOW_CLASSES,
) -> dict[str, ClassIndicators | None]:
    """Rank indicators per outflow class over detected events; empty classes map to ``None``."""
    det = [r for r in results if r.detected and r.rank is not None]
    groups: dict[str, list[EventResult]] = {c.label: [] for c in classes}
    for r in det:
        lab = outflow_class(r.leak_outflow, classes)
        if lab is not None:
            groups[lab].append(r)
    groups[ANY] = det
    out: dict[str, ClassIndicators | None] = {}
    for lab, rs in groups.items():
        if not rs:
            out[lab] = None
            continue
        ranks = np.array([r.rank for r in rs], dtype=float)
        lens = np.array([r.inspected_length for r in rs], dtype=float)
        out[lab] = ClassIndicators(
            lab,
            len(rs),
            100.0 * float(np.mean(ranks == 1)),
            float(ranks.mean()),
            float(lens.mean()),
            100.0 * float(lens.mean()) / total_length,
        )
    return out


def detection_rate(results: Sequence[EventResult]) -> float:
    ok = [r for r in results if not r.failed]
    if not ok:
        return float("nan")
    return 100.0 * sum(r.detected for r in ok) / len(ok)


def prediction_index(avg_position: float, n_pipes: int) -> float:
    """Map a mean rank in a sequence of ``n_pipes`` onto [1, 2]; a single pipe gives 1."""
    if n_pipes < 1:
        raise ValueError("n_pipes must be >= 1")
    if not 1.0 <= avg_position <= n_pipes:
        raise ValueError(f"average position {avg_position} outside [1, {n_pipes}]")
    if n_pipes == 1:
        return 1.0
    return 1.0 + (avg_position - 1.0) / (n_pipes - 1.0)


def random_baseline(n_dmas: int) -> float:
    """Expected share of network length (%) inspected when searching at random in the right DMA."""
    if n_dmas < 1:
        raise ValueError("n_dmas must be >= 1")
    return 50.0 / n_dmas


@dataclass(frozen=True)
class DmaEvalRow:
    dma: str
    n_pipes: int
    total_length: float
    avg_pipe_length: float
    n_events: int
    avg_outflow: float | None
    avg_position: float | None
    prediction_index: float | None
    avg_inspection_length: float | None
    absent: bool = False


def dma_table(results: Iterable[EventResult], net: Network) -> list[DmaEvalRow]:
    dp = _dma_pipes(net)
    det: dict[str, list[EventResult]] = {d: [] for d in net.dmas}
    for r in results:
        if r.detected and r.rank is not None:
            det[r.dma].append(r)
    rows = []
    for d in net.dmas:
        n = len(dp[d])
        total = float(sum(net.pipes[p].length for p in dp[d]))
        rs = det[d]
        if not rs:
            rows.append(DmaEvalRow(d, n, total, total / n if n else 0.0, 0, None, None, None, None, absent=True))
            continue
        pos = float(np.mean([r.rank for r in rs]))
        rows.append(
            DmaEvalRow(
                d, n, total, total / n, len(rs),
                float(np.mean([r.leak_outflow for r in rs])),
                pos,
                prediction_index(pos, n),
                float(np.mean([r.inspected_length for r in rs])),
            )
        )
    return rows


def mean_prediction_index(results: Sequence[EventResult], net: Network) -> float:
    """Event-weighted mean of the per-DMA prediction indices."""
    rows = [r for r in dma_table(results, net) if not r.absent]
    tot = sum(r.n_events for r in rows)
    return sum(r.prediction_index * r.n_events for r in rows) / tot if tot else float("nan")


def compare_meter_configs(
    configs: Sequence[MeterConfig],
    net: Network,
    orifice_range=(0.005, 0.01),
    n_orifices: int = 10,
    demand_range=(0.5, 1.5),
    n_demands: int = 10,
    n_events: int = 1000,
    seed: int = 0,
    cfg: DetectionConfig = DetectionConfig(amsi_threshold=0.0, meter_error=0.0),
    workers: int = 1,
    settings=None,
) -> list[SamplingIndicators]:
    """One sampling-indicator row per meter layout, error-free by default.

    Every layout gets its own scenario and random database (the pressure-drop
    vectors depend on where meters are); the random events are the same for
    all layouts because they depend only on the seed.
    """
    cache: dict[str, SamplingIndicators] = {}
    rows = []
    pipes = [p.id for p in net.pipes.values() if p.is_open and p.dma is not None]
    for mc in configs:
        key = mc.fingerprint()
        if key not in cache:
            sdb = build_scenario_db(net, mc, orifice_range, n_orifices, demand_range, n_demands, settings, workers)
            rdb = build_random_db(net, mc, orifice_range, demand_range, n_events, seed, settings, workers)
            res = run_campaign(rdb, sdb, net.with_meters(mc), cfg, seed=seed, workers=workers)
            cache[key] = sampling_indicators(res, len(mc), pipes)
        rows.append(dataclasses.replace(cache[key], name=mc.name))
    return rows


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

EVENT_COLUMNS = (
    "event", "pipe", "dma", "detected", "first_hit", "wrong_dma", "identified",
    "rank", "inspected_length", "leak_outflow", "outflow_class", "score", "n_dma_pipes", "failed",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header_lines, columns, rows):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def write_events_csv(results: Sequence[EventResult], path, header_lines: Sequence[str] = ()) -> None:
    rows = [
        (r.event, r.pipe, r.dma, r.detected, r.first_hit, r.wrong_dma, ";".join(r.identified), r.rank,
         r.inspected_length, r.leak_outflow, outflow_class(r.leak_outflow) or "", r.score, r.n_dma_pipes, r.failed)
        for r in results
    ]
    _write_csv(path, header_lines, EVENT_COLUMNS, rows)


def read_events_csv(path) -> list[EventResult]:
    """Inverse of :func:`write_events_csv` (provenance comment lines are skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        def opt(key, conv):
            return conv(row[key]) if row[key] != "" else None

        out.append(
            EventResult(
                int(row["event"]), row["pipe"], row["dma"], row["detected"] == "1", row["first_hit"] == "1",
                row["wrong_dma"] == "1", tuple(x for x in row["identified"].split(";") if x),
                opt("rank", int), opt("inspected_length", float), float(row["leak_outflow"]),
                opt("score", float), int(row["n_dma_pipes"]), row["failed"] == "1",
            )
        )
    return out


HIST_COLUMNS = ("class", "n_events", "true_prediction", "average_prediction", "length_to_inspect", "percentage_to_inspect")


def write_class_csv(ind: dict[str, ClassIndicators | None], path, header_lines: Sequence[str] = ()) -> None:
    rows = []
    for lab, c in ind.items():
        if c is None:
            rows.append((lab, 0, None, None, None, None))
        else:
            rows.append((lab, c.n_events, c.true_prediction, c.average_prediction, c.length_to_inspect, c.percentage_to_inspect))
    _write_csv(path, header_lines, HIST_COLUMNS, rows)


DMA_COLUMNS = tuple(f.name for f in dataclasses.fields(DmaEvalRow))


def write_dma_csv(rows: Sequence[DmaEvalRow], path, header_lines: Sequence[str] = ()) -> None:
    _write_csv(path, header_lines, DMA_COLUMNS, [dataclasses.astuple(r) for r in rows])


def summary(results: Sequence[EventResult], net: Network, rank_dmas: int | None = None) -> dict:
    """JSON-ready campaign summary."""
    total = net.total_length()
    ind = detection_indicators(results, total)
    ok = [r for r in results if not r.failed]
    return {
        "n_events": len(results),
        "n_failed": len(results) - len(ok),
        "detection_rate": detection_rate(results),
        "first_hit_rate": 100.0 * sum(r.first_hit for r in ok) / len(ok) if ok else float("nan"),
        "wrong_dma_rate": 100.0 * sum(r.wrong_dma for r in ok) / len(ok) if ok else float("nan"),
        "undetected_rate": 100.0 * sum((not r.detected) and not r.wrong_dma for r in ok) / len(ok) if ok else float("nan"),
        "mean_prediction_index": mean_prediction_index(results, net),
        "random_baseline_percentage": random_baseline(rank_dmas or len(net.dmas)),
        "classes": {k: (dataclasses.asdict(v) if v is not None else None) for k, v in ind.items()},
        "sampling": dataclasses.asdict(sampling_indicators(results, len(net.meters))),
    }


def dump_json(obj, path, header: dict | None = None) -> None:
    payload = {"provenance": header, **obj} if header is not None else obj
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))
