"""Offline leak scenario databases.

A scenario is one punctual leak (pipe, orifice diameter, demand multiplier)
solved against its matched baseline: the same network split at the same pipe
midpoint with a closed (zero) orifice, at the same multiplier. Each scenario
stores the pressure drop at every meter, the AMSI change of every DMA and the
leak outflow.

Every scenario follows the same fixed chain of solves, so any cell can be
recomputed on its own and reproduces bit for bit:

1. intact network at the nearest reference multiplier (cold start);
2. split network, zero orifice, at the scenario multiplier (warm start from 1);
3. split network with the orifice open (warm start from 2).
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import logging
import os
import zipfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .amsi import DmaIndex
from .hydraulics import ConvergenceError, HydraulicModel, HydraulicState, SolverSettings
from .network import MeterConfig, Network, insert_midpoint_leak

log = logging.getLogger(__name__)

DB_FORMAT = 1
MAX_FAILURE_SHARE = 0.05
MIN_ORIFICES = 5
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


class DatabaseError(Exception):
    """Base class for database problems."""


class DatabaseFormatError(DatabaseError):
    """File is truncated, corrupt or of another format version."""


class FingerprintMismatch(DatabaseError):
    pass


class BuildAborted(DatabaseError):
    pass


@dataclass(frozen=True)
class LeakScenario:
    pipe_id: str
    orifice_diameter: float
    demand_multiplier: float
    leak_outflow: float  # L/s
    meter_deltas: np.ndarray  # baseline minus leak pressure, m
    dma_amsi_deltas: np.ndarray


@dataclass
class ScenarioDatabase:
    """Columnar store of leak scenarios plus the metadata needed to trust it.

    Row ``i`` describes the leak on ``pipe_ids[pipe_index[i]]``. Failed cells
    keep their row with ``failed[i] = True`` and NaN payload.
    """

    network_fingerprint: str
    meter_fingerprint: str
    meter_nodes: tuple[str, ...]
    dma_ids: tuple[str, ...]
    pipe_ids: tuple[str, ...]
    pipe_dma: tuple[str, ...]
    pipe_length: np.ndarray
    reference_multipliers: np.ndarray
    pipe_index: np.ndarray
    orifice: np.ndarray
    multiplier: np.ndarray
    leak_outflow: np.ndarray  # L/s
    meter_deltas: np.ndarray  # (n, n_meters)
    amsi_deltas: np.ndarray  # (n, n_dmas)
    dma_density: np.ndarray  # observed leak density per DMA, m3/day/km
    baseline_density: np.ndarray
    amsi_scale: np.ndarray  # baseline p_ref ** alpha_ref per DMA
    meter_baseline: np.ndarray  # baseline meter pressures, m
    failed: np.ndarray
    orifice_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    demand_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    settings: dict = field(default_factory=dict)
    kind: str = "grid"
    seed: int | None = None
    orifice_range: tuple[float, float] | None = None
    demand_range: tuple[float, float] | None = None

    def __len__(self) -> int:
        return len(self.pipe_index)

    @property
    def n_failed(self) -> int:
        return int(self.failed.sum())

    def pipe_of(self, i: int) -> str:
        return self.pipe_ids[self.pipe_index[i]]

    def dma_of(self, i: int) -> str:
        return self.pipe_dma[self.pipe_index[i]]

    def scenario(self, i: int) -> LeakScenario:
        return LeakScenario(
            self.pipe_of(i),
            float(self.orifice[i]),
            float(self.multiplier[i]),
            float(self.leak_outflow[i]),
            self.meter_deltas[i].copy(),
            self.amsi_deltas[i].copy(),
        )

    def check(self, net: Network, meters: MeterConfig | None = None) -> None:
        """Raise :class:`FingerprintMismatch` unless built for ``net`` and ``meters``."""
        meters = net.meters if meters is None else meters
        if net.fingerprint() != self.network_fingerprint:
            raise FingerprintMismatch(
                f"database built for network {self.network_fingerprint}, got {net.fingerprint()}"
            )
        if meters.fingerprint() != self.meter_fingerprint:
            raise FingerprintMismatch(
                f"database built for meter layout {self.meter_fingerprint}, got {meters.fingerprint()}"
            )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self._meta(), sort_keys=True).encode())
        for name in _ARRAYS:
            a = np.ascontiguousarray(getattr(self, name))
            h.update(name.encode())
            h.update(str(a.dtype).encode() + str(a.shape).encode())
            h.update(a.tobytes())
        return h.hexdigest()[:16]

    def _meta(self) -> dict:
        return {
            "format": DB_FORMAT,
            "tool_version": __version__,
            "kind": self.kind,
            "network_fingerprint": self.network_fingerprint,
            "meter_fingerprint": self.meter_fingerprint,
            "meter_nodes": list(self.meter_nodes),
            "dma_ids": list(self.dma_ids),
            "pipe_ids": list(self.pipe_ids),
            "pipe_dma": list(self.pipe_dma),
            "settings": self.settings,
            "seed": self.seed,
            "orifice_range": list(self.orifice_range) if self.orifice_range else None,
            "demand_range": list(self.demand_range) if self.demand_range else None,
        }

    def equals(self, other: "ScenarioDatabase") -> bool:
        if self._meta() != other._meta():
            return False
        for name in _ARRAYS:
            a, b = getattr(self, name), getattr(other, name)
            if a.shape != b.shape or a.dtype != b.dtype:
                return False
            if not np.array_equal(a, b, equal_nan=a.dtype.kind == "f"):
                return False
        return True


class RandomDatabase(ScenarioDatabase):
    """Uniformly sampled leak events, same columns as a grid database."""

    @property
    def n_events(self) -> int:
        return len(self)


_ARRAYS = (
    "pipe_length",
    "reference_multipliers",
    "pipe_index",
    "orifice",
    "multiplier",
    "leak_outflow",
    "meter_deltas",
    "amsi_deltas",
    "dma_density",
    "baseline_density",
    "amsi_scale",
    "meter_baseline",
    "failed",
    "orifice_grid",
    "demand_grid",
)


# ---------------------------------------------------------------------------
# Solving one pipe's cells
# ---------------------------------------------------------------------------

def reference_grid(demand_range: tuple[float, float], n: int = 11) -> np.ndarray:
    lo, hi = demand_range
    if hi == lo:
        return np.array([float(lo)])
    return np.linspace(lo, hi, n)


class _PipeSolver:
    """Solves every requested (orifice, multiplier) cell of one pipe."""

    def __init__(self, net: Network, pipe_id: str, refs: dict[float, HydraulicState], settings: SolverSettings, meters):
        self.pipe_id = pipe_id
        self.split = insert_midpoint_leak(net, pipe_id, 0.0)
        self.model = HydraulicModel(self.split, settings)
        self.refs = refs
        self.ref_keys = np.array(sorted(refs))
        self.index = DmaIndex(self.split)
        jpos = {n: i for i, n in enumerate(self.model.junction_ids)}
        self.meter_pos = np.array([jpos[n] for n in meters.pressure_nodes], dtype=int)
        self.leak_pos = jpos[self.split.leaks[pipe_id].node]
        self.leak_node = self.split.leaks[pipe_id].node
        self._baselines: dict[float, HydraulicState] = {}

    def nearest_ref(self, m: float) -> HydraulicState:
        k = self.ref_keys[int(np.argmin(np.abs(self.ref_keys - m)))]
        return self.refs[float(k)]

    def baseline(self, m: float) -> HydraulicState:
        if m not in self._baselines:
            self.model.set_orifice(self.leak_node, 0.0)
            st = self.model.solve(m, self.model.warm_start(self.nearest_ref(m)))
            if not st.converged:
                raise ConvergenceError(f"baseline for pipe {self.pipe_id} did not converge", m, st)
            self._baselines[m] = st
        return self._baselines[m]

    def cell(self, d: float, m: float):
        base = self.baseline(m)
        self.model.set_orifice(self.leak_node, d)
        st = self.model.solve(m, self.model.warm_start(base))
        self.model.set_orifice(self.leak_node, 0.0)
        if not st.converged:
            raise ConvergenceError(f"leak on pipe {self.pipe_id} did not converge", m, st)
        idx = self.index
        dens = idx.density(st)
        base_dens = idx.density(base)
        scale = idx.scale(base)
        with np.errstate(divide="ignore", invalid="ignore"):
            amsi_delta = (dens - base_dens) / scale
        p_base = base.pressure[self.meter_pos]
        return (
            1000.0 * float(st.punctual[self.leak_pos]),
            p_base - st.pressure[self.meter_pos],
            amsi_delta,
            dens,
            base_dens,
            scale,
            p_base,
        )


def reference_states(net: Network, multipliers, settings: SolverSettings) -> dict[float, HydraulicState]:
    model = HydraulicModel(net, settings)
    out = {}
    for m in multipliers:
        st = model.solve(float(m))
        if not st.converged:
            raise ConvergenceError(f"intact network did not converge at multiplier {m}", float(m), st)
        out[float(m)] = st
    return out


def solve_scenario(
    net: Network,
    pipe_id: str,
    orifice: float,
    multiplier: float,
    reference_multipliers,
    settings: SolverSettings | None = None,
    meters: MeterConfig | None = None,
) -> LeakScenario:
    """Recompute one scenario from scratch along the database's solve chain."""
    settings = settings or SolverSettings()
    meters = net.meters if meters is None else meters
    refs = reference_states(net, reference_multipliers, settings)
    ps = _PipeSolver(net, pipe_id, refs, settings, meters)
    q, deltas, amsi, *_ = ps.cell(float(orifice), float(multiplier))
    return LeakScenario(pipe_id, float(orifice), float(multiplier), q, deltas, amsi)


# Worker-side globals so the network is shipped once per process.
_W: dict = {}


def _init_worker(net_dict, meters, settings, ref_mults):
    from .network import network_from_dict

    net = network_from_dict(net_dict)
    _W["net"] = net
    _W["meters"] = meters
    _W["settings"] = settings
    _W["refs"] = reference_states(net, ref_mults, settings)


def _solve_pipe_cells(task):
    """Solve the cells of one pipe; ``task`` = (pipe_id, rows, orifices, multipliers)."""
    pipe_id, rows, ds, ms = task
    net, meters, settings = _W["net"], _W["meters"], _W["settings"]
    n_m, n_d = len(meters.pressure_nodes), len(net.dmas)
    n = len(rows)
    out = {
        "rows": np.asarray(rows, dtype=np.int64),
        "q": np.full(n, np.nan),
        "dp": np.full((n, n_m), np.nan),
        "amsi": np.full((n, n_d), np.nan),
        "dens": np.full((n, n_d), np.nan),
        "bdens": np.full((n, n_d), np.nan),
        "scale": np.full((n, n_d), np.nan),
        "pbase": np.full((n, n_m), np.nan),
        "failed": np.zeros(n, dtype=bool),
    }
    try:
        ps = _PipeSolver(net, pipe_id, _W["refs"], settings, meters)
    except Exception as exc:  # noqa: BLE001 - recorded per cell
        log.warning("pipe %s: setup failed: %s", pipe_id, exc)
        out["failed"][:] = True
        return out
    for j, (d, m) in enumerate(zip(ds, ms)):
        try:
            q, dp, am, dens, bdens, scale, pbase = ps.cell(float(d), float(m))
        except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
            log.warning("pipe %s, orifice %.4g, multiplier %.4g failed: %s", pipe_id, d, m, exc)
            out["failed"][j] = True
            continue
        out["q"][j] = q
        out["dp"][j] = dp
        out["amsi"][j] = am
        out["dens"][j] = dens
        out["bdens"][j] = bdens
        out["scale"][j] = scale
        out["pbase"][j] = pbase
    return out


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def _run_tasks(net, meters, settings, ref_mults, tasks, workers):
    init = (net.to_dict(), meters, settings, [float(x) for x in ref_mults])
    if workers <= 1:
        _init_worker(*init)
        try:
            yield from map(_solve_pipe_cells, tasks)
        finally:
            _W.clear()
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=init) as pool:
        yield from pool.map(_solve_pipe_cells, tasks, chunksize=1)


def leak_pipes(net: Network) -> list[str]:
    return [p.id for p in net.pipes.values() if p.is_open and p.dma is not None and p.origin is None]


def _assemble(net, meters, settings, ref_mults, pipes, pipe_index, orifice, mult, tasks, workers, **extra):
    n = len(pipe_index)
    n_m, n_d = len(meters.pressure_nodes), len(net.dmas)
    cols = {
        "q": np.full(n, np.nan),
        "dp": np.full((n, n_m), np.nan),
        "amsi": np.full((n, n_d), np.nan),
        "dens": np.full((n, n_d), np.nan),
        "bdens": np.full((n, n_d), np.nan),
        "scale": np.full((n, n_d), np.nan),
        "pbase": np.full((n, n_m), np.nan),
        "failed": np.zeros(n, dtype=bool),
    }
    if tasks:
        try:
            reference_states(net, ref_mults, settings)
        except ConvergenceError as exc:
            raise BuildAborted(f"intact network cannot be solved: {exc}") from exc
    for res in _run_tasks(net, meters, settings, ref_mults, tasks, workers):
        rows = res["rows"]
        for k in cols:
            cols[k][rows] = res[k]
    n_failed = int(cols["failed"].sum())
    if n and n_failed > MAX_FAILURE_SHARE * n:
        raise BuildAborted(f"{n_failed} of {n} cells failed (limit {MAX_FAILURE_SHARE:.0%})")
    if n_failed:
        log.warning("%d of %d cells failed and are marked in the database", n_failed, n)
    kind = extra.pop("kind", "grid")
    cls = RandomDatabase if kind == "random" else ScenarioDatabase
    return cls(
        network_fingerprint=net.fingerprint(),
        meter_fingerprint=meters.fingerprint(),
        meter_nodes=tuple(meters.pressure_nodes),
        dma_ids=tuple(net.dmas),
        pipe_ids=tuple(pipes),
        pipe_dma=tuple(net.pipes[p].dma for p in pipes),
        pipe_length=np.array([net.pipes[p].length for p in pipes]),
        reference_multipliers=np.asarray(ref_mults, dtype=float),
        pipe_index=np.asarray(pipe_index, dtype=np.int64),
        orifice=np.asarray(orifice, dtype=float),
        multiplier=np.asarray(mult, dtype=float),
        leak_outflow=cols["q"],
        meter_deltas=cols["dp"],
        amsi_deltas=cols["amsi"],
        dma_density=cols["dens"],
        baseline_density=cols["bdens"],
        amsi_scale=cols["scale"],
        meter_baseline=cols["pbase"],
        failed=cols["failed"],
        settings=dataclasses.asdict(settings),
        kind=kind,
        **extra,
    )


def _prepare(net: Network, meters: MeterConfig | None):
    meters = net.meters if meters is None else meters
    if not meters.pressure_nodes:
        raise ValueError("meter configuration has no pressure meters")
    missing = [n for n in meters.pressure_nodes if n not in net.nodes or net.nodes[n].is_reservoir]
    if missing:
        raise ValueError(f"pressure meters not at junctions: {', '.join(missing)}")
    if net.leaks:
        raise ValueError("database must be built on an intact network (no inserted leaks)")
    return meters


def build_scenario_db(
    net: Network,
    meters: MeterConfig | None = None,
    orifice_range: tuple[float, float] = (0.005, 0.02),
    n_orifices: int = 10,
    demand_range: tuple[float, float] = (0.5, 1.5),
    n_demands: int = 10,
    settings: SolverSettings | None = None,
    workers: int = 1,
    pipes: list[str] | None = None,
) -> ScenarioDatabase:
    """Leak on every pipe for every equally spaced orifice diameter and multiplier."""
    meters = _prepare(net, meters)
    settings = settings or SolverSettings()
    if n_orifices < MIN_ORIFICES:
        raise ValueError(f"at least {MIN_ORIFICES} orifice sizes are required")
    if n_demands < 1:
        raise ValueError("at least one demand level is required")
    lo, hi = orifice_range
    if not 0 < lo <= hi:
        raise ValueError("orifice range must satisfy 0 < min <= max")
    if not 0 < demand_range[0] <= demand_range[1]:
        raise ValueError("demand range must satisfy 0 < min <= max")
    d_grid = np.linspace(lo, hi, n_orifices)
    m_grid = np.linspace(demand_range[0], demand_range[1], n_demands) if n_demands > 1 else np.array([demand_range[0]])
    pipes = list(pipes) if pipes is not None else leak_pipes(net)
    per_pipe = n_orifices * n_demands
    dd, mm = np.meshgrid(d_grid, m_grid, indexing="ij")
    dd, mm = dd.ravel(), mm.ravel()
    # demand-major inside a pipe so each split baseline is reused by all orifices
    order = np.lexsort((dd, mm))
    tasks = []
    pipe_index = np.repeat(np.arange(len(pipes)), per_pipe)
    orifice = np.tile(dd, len(pipes))
    mult = np.tile(mm, len(pipes))
    for k, pid in enumerate(pipes):
        rows = k * per_pipe + order
        tasks.append((pid, rows, dd[order], mm[order]))
    log.info("building scenario database: %d pipes x %d orifices x %d demands", len(pipes), n_orifices, n_demands)
    return _assemble(
        net, meters, settings, m_grid, pipes, pipe_index, orifice, mult, tasks, workers,
        orifice_grid=d_grid, demand_grid=m_grid,
        orifice_range=(float(lo), float(hi)), demand_range=(float(demand_range[0]), float(demand_range[1])),
    )


def sample_events(n_pipes: int, orifice_range, demand_range, n_events: int, seed: int):
    """Per-event draws; event ``i`` depends only on ``(seed, i)``."""
    pipe = np.empty(n_events, dtype=np.int64)
    d = np.empty(n_events)
    m = np.empty(n_events)
    for i in range(n_events):
        rng = np.random.default_rng([seed, i])
        pipe[i] = rng.integers(n_pipes)
        d[i] = rng.uniform(*orifice_range)
        m[i] = rng.uniform(*demand_range)
    return pipe, d, m


def build_random_db(
    net: Network,
    meters: MeterConfig | None = None,
    orifice_range: tuple[float, float] = (0.005, 0.02),
    demand_range: tuple[float, float] = (0.5, 1.5),
    n_events: int = 10000,
    seed: int = 0,
    settings: SolverSettings | None = None,
    workers: int = 1,
    n_reference: int = 11,
) -> RandomDatabase:
    """Uniformly drawn leak events (pipe, diameter, multiplier)."""
    meters = _prepare(net, meters)
    settings = settings or SolverSettings()
    if n_events < 0:
        raise ValueError("n_events must be >= 0")
    if not 0 < orifice_range[0] <= orifice_range[1]:
        raise ValueError("orifice range must satisfy 0 < min <= max")
    if not 0 < demand_range[0] <= demand_range[1]:
        raise ValueError("demand range must satisfy 0 < min <= max")
    pipes = leak_pipes(net)
    pidx, d, m = sample_events(len(pipes), orifice_range, demand_range, n_events, seed)
    ref = reference_grid(demand_range, n_reference)
    tasks = []
    for k, pid in enumerate(pipes):
        rows = np.flatnonzero(pidx == k)
        if len(rows):
            tasks.append((pid, rows, d[rows], m[rows]))
    log.info("building random database: %d events, seed %d", n_events, seed)
    return _assemble(
        net, meters, settings, ref, pipes, pidx, d, m, tasks, workers,
        kind="random", seed=int(seed),
        orifice_range=(float(orifice_range[0]), float(orifice_range[1])),
        demand_range=(float(demand_range[0]), float(demand_range[1])),
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def _zip_write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def persist_db(db: ScenarioDatabase, path: str | Path) -> None:
    """Write ``db`` as a deterministic zip of .npy columns plus JSON metadata."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _zip_write(zf, "meta.json", json.dumps(db._meta(), sort_keys=True, indent=1).encode())
        for name in _ARRAYS:
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(getattr(db, name)), allow_pickle=False)
            _zip_write(zf, f"{name}.npy", buf.getvalue())
    os.replace(tmp, path)


def load_db(path: str | Path, net: Network | None = None, meters: MeterConfig | None = None) -> ScenarioDatabase:
    """Read a database; with ``net`` given, also verify it was built for that network."""
    path = Path(path)
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {name: np.load(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False) for name in _ARRAYS}
    except FileNotFoundError:
        raise
    except (zipfile.BadZipFile, KeyError, EOFError, ValueError, OSError, zipfile.LargeZipFile) as exc:
        raise DatabaseFormatError(f"{path}: not a readable scenario database ({exc})") from None
    if meta.get("format") != DB_FORMAT:
        raise DatabaseFormatError(f"{path}: database format {meta.get('format')!r}, expected {DB_FORMAT}")
    cls = RandomDatabase if meta["kind"] == "random" else ScenarioDatabase
    db = cls(
        network_fingerprint=meta["network_fingerprint"],
        meter_fingerprint=meta["meter_fingerprint"],
        meter_nodes=tuple(meta["meter_nodes"]),
        dma_ids=tuple(meta["dma_ids"]),
        pipe_ids=tuple(meta["pipe_ids"]),
        pipe_dma=tuple(meta["pipe_dma"]),
        settings=meta["settings"],
        kind=meta["kind"],
        seed=meta["seed"],
        orifice_range=tuple(meta["orifice_range"]) if meta["orifice_range"] else None,
        demand_range=tuple(meta["demand_range"]) if meta["demand_range"] else None,
        **arrays,
    )
    if net is not None:
        db.check(net, meters)
    return db


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def export_csv(db: ScenarioDatabase, path: str | Path) -> None:
    """One row per scenario with meter deltas and DMA AMSI deltas as columns."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["row", "pipe", "dma", "orifice_m", "multiplier", "leak_outflow_Ls", "failed"]
            + [f"dp:{n}" for n in db.meter_nodes]
            + [f"damsi:{d}" for d in db.dma_ids]
        )
        for i in range(len(db)):
            w.writerow(
                [i, db.pipe_of(i), db.dma_of(i), repr(float(db.orifice[i])), repr(float(db.multiplier[i])),
                 repr(float(db.leak_outflow[i])), int(db.failed[i])]
                + [repr(float(x)) for x in db.meter_deltas[i]]
                + [repr(float(x)) for x in db.amsi_deltas[i]]
            )
