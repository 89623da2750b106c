"""Two-phase leak detection.

Phase 1 flags districts whose AMSI rose by more than a threshold. Phase 2
orders the pipes of each flagged district by how well the observed meter
pressure drops correlate with the simulated drops stored in a scenario
database.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .amsi import AmsiRecord
from .network import Network
from .scenariodb import ScenarioDatabase

log = logging.getLogger(__name__)

AGGREGATIONS = ("max", "mean")
# AMSI increases below this fraction of the baseline are floating-point residue
ROUNDOFF = 1e-12
NOISE_MODELS = ("uniform", "gaussian")


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionConfig:
    amsi_threshold: float = 0.1
    meter_error: float = 0.5  # m, bound used to discard uninformative meters
    aggregation: str = "max"
    noise: str = "uniform"
    # restrict Phase 2 to scenarios whose multiplier lies in this window
    demand_window: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.amsi_threshold >= 0:
            raise ValueError("amsi_threshold must be >= 0")
        if not self.meter_error >= 0:
            raise ValueError("meter_error must be >= 0")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        if self.noise not in NOISE_MODELS:
            raise ValueError(f"noise must be one of {NOISE_MODELS}")


@dataclass
class Observation:
    """What the field instruments report for one leak situation.

    ``dma_density`` is the metered leak density per DMA (m3/day/km).
    ``dma_pressure`` optionally overrides the baseline reference pressure.
    """

    dma_density: dict[str, float]
    current_pressure: np.ndarray
    baseline_pressure: np.ndarray
    dma_pressure: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.current_pressure = np.asarray(self.current_pressure, dtype=float)
        self.baseline_pressure = np.asarray(self.baseline_pressure, dtype=float)
        if self.current_pressure.shape != self.baseline_pressure.shape:
            raise DetectionError("current and baseline pressure vectors differ in length")

    @property
    def deltas(self) -> np.ndarray:
        return self.baseline_pressure - self.current_pressure

    @classmethod
    def from_deltas(cls, dma_density: dict[str, float], deltas, baseline=None) -> "Observation":
        deltas = np.asarray(deltas, dtype=float)
        base = np.zeros_like(deltas) if baseline is None else np.asarray(baseline, dtype=float)
        return cls(dict(dma_density), base - deltas, base)


@dataclass(frozen=True)
class InspectionItem:
    pipe: str
    score: float
    cumulative_length: float
    degenerate: bool = False


@dataclass
class DetectionReport:
    identified: list[tuple[str, float]]  # (dma, AMSI increase), descending
    sequences: dict[str, list[InspectionItem]]
    meters_used: tuple[int, ...]

    @property
    def identified_dmas(self) -> list[str]:
        return [d for d, _ in self.identified]

    def to_dict(self) -> dict:
        return {
            "identified_dmas": [{"dma": d, "amsi_delta": v} for d, v in self.identified],
            "meters_used": list(self.meters_used),
            "sequences": {
                d: [
                    {"pipe": it.pipe, "score": it.score, "cumulative_length": it.cumulative_length, "degenerate": it.degenerate}
                    for it in seq
                ]
                for d, seq in self.sequences.items()
            },
        }


# ---------------------------------------------------------------------------
# Phase 1
# ---------------------------------------------------------------------------

def observed_amsi(obs: Observation, baselines: Mapping[str, AmsiRecord]) -> dict[str, float]:
    out = {}
    for dma, base in baselines.items():
        if dma not in obs.dma_density:
            raise DetectionError(f"observation lacks a metered density for dma '{dma}'")
        p = obs.dma_pressure.get(dma, base.p_ref)
        out[dma] = obs.dma_density[dma] / p**base.alpha_ref
    return out


def identify_dmas(obs: Observation, baselines: Mapping[str, AmsiRecord], cfg: DetectionConfig = DetectionConfig()):
    """DMAs whose AMSI increase exceeds the threshold, largest first.

    An increase must also clear ``ROUNDOFF`` times the baseline AMSI, so a
    zero threshold does not flag DMAs whose change is pure rounding.
    """
    missing = [d for d in obs.dma_density if d not in baselines]
    if missing:
        raise DetectionError(f"no baseline AMSI for dma(s): {', '.join(missing)}")
    cur = observed_amsi(obs, baselines)
    deltas = [(d, cur[d] - baselines[d].amsi) for d in baselines]
    hits = [(d, v) for d, v in deltas if v > cfg.amsi_threshold and v > ROUNDOFF * abs(baselines[d].amsi)]
    hits.sort(key=lambda t: (-t[1], t[0]))
    return hits


# ---------------------------------------------------------------------------
# Phase 2
# ---------------------------------------------------------------------------

def filter_meters(deltas, error_bound: float) -> np.ndarray:
    """Indices of meters whose drop exceeds the measurement error bound.

    Falls back to every meter when fewer than two survive, since a
    correlation needs at least two points.
    """
    deltas = np.asarray(deltas, dtype=float)
    keep = np.flatnonzero(np.abs(deltas) > error_bound)
    if len(keep) < 2:
        return np.arange(len(deltas))
    return keep


def _degenerate(c: np.ndarray, raw: np.ndarray) -> np.ndarray:
    n = raw.shape[-1]
    norm = np.sqrt(np.sum(c * c, axis=-1))
    scale = np.max(np.abs(raw), axis=-1)
    return norm <= 1e-12 * math.sqrt(n) * scale, norm


def pearson(x, y) -> tuple[float, bool]:
    """Sample Pearson coefficient and a flag that is True when it is undefined."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DetectionError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.ndim != 1 or len(x) < 2:
        raise DetectionError("pearson needs vectors of length >= 2")
    r, deg = pearson_rows(x[None, :], y)
    return float(r[0]), bool(deg[0])


def pearson_rows(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Correlation of every row of ``X`` with ``y``; degenerate rows give 0."""
    yc = y - y.mean()
    Xc = X - X.mean(axis=1, keepdims=True)
    ydeg, ynorm = _degenerate(yc, y)
    xdeg, xnorm = _degenerate(Xc, X)
    deg = xdeg | bool(ydeg)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (Xc @ yc) / (xnorm * ynorm)
    r = np.where(deg | ~np.isfinite(r), 0.0, np.clip(r, -1.0, 1.0))
    return r, deg


def _rows_by_dma(db: ScenarioDatabase) -> dict[str, np.ndarray]:
    cache = getattr(db, "_rows_cache", None)
    if cache is None:
        dma_of_pipe = np.array([db.dma_ids.index(d) for d in db.pipe_dma], dtype=int) if db.pipe_ids else np.zeros(0, int)
        row_dma = dma_of_pipe[db.pipe_index] if len(db) else np.zeros(0, int)
        ok = ~db.failed
        cache = {d: np.flatnonzero((row_dma == k) & ok) for k, d in enumerate(db.dma_ids)}
        db._rows_cache = cache
    return cache


def rank_pipes(
    deltas,
    db: ScenarioDatabase,
    dma_id: str,
    cfg: DetectionConfig = DetectionConfig(),
    meters: np.ndarray | None = None,
    net: Network | None = None,
) -> list[InspectionItem]:
    """Inspection sequence for one DMA, best-correlated pipe first.

    Pipes are scored by the best (or mean) correlation over their scenarios
    and ordered by descending score, then pipe id. Pipes whose correlation is
    undefined score 0 and go last. With ``net`` given, DMA pipes missing from
    the database are appended as undefined too.
    """
    deltas = np.asarray(deltas, dtype=float)
    if deltas.shape != (len(db.meter_nodes),):
        raise DetectionError(f"expected {len(db.meter_nodes)} meter deltas, got {deltas.shape}")
    if dma_id not in db.dma_ids:
        raise DetectionError(f"unknown dma '{dma_id}'")
    rows = _rows_by_dma(db)[dma_id]
    if cfg.demand_window is not None:
        lo, hi = cfg.demand_window
        rows = rows[(db.multiplier[rows] >= lo) & (db.multiplier[rows] <= hi)]
    if len(rows) == 0:
        raise DetectionError(f"scenario database has no usable scenarios for dma '{dma_id}'")
    idx = filter_meters(deltas, cfg.meter_error) if meters is None else np.asarray(meters)

    r, deg = pearson_rows(db.meter_deltas[np.ix_(rows, idx)], deltas[idx])
    pipes = db.pipe_index[rows]
    uniq, inv = np.unique(pipes, return_inverse=True)
    n = len(uniq)
    all_deg = np.ones(n, dtype=bool)
    np.logical_and.at(all_deg, inv, deg)
    if cfg.aggregation == "max":
        score = np.full(n, -np.inf)
        np.maximum.at(score, inv, np.where(deg, -np.inf, r))
    else:
        tot = np.bincount(inv, weights=np.where(deg, 0.0, r), minlength=n)
        cnt = np.bincount(inv, weights=(~deg).astype(float), minlength=n)
        with np.errstate(invalid="ignore", divide="ignore"):
            score = tot / cnt
    score = np.where(all_deg, 0.0, score)

    entries = [(db.pipe_ids[p], float(s), bool(dg), float(db.pipe_length[p])) for p, s, dg in zip(uniq, score, all_deg)]
    if net is not None:
        have = {e[0] for e in entries}
        for p in net.pipes.values():
            if p.dma == dma_id and p.is_open and p.id not in have:
                entries.append((p.id, 0.0, True, float(p.length)))
    entries.sort(key=lambda e: (e[2], -e[1], e[0]))
    out = []
    cum = 0.0
    for pid, s, dg, length in entries:
        cum += length
        out.append(InspectionItem(pid, s, cum, dg))
    return out


def inject_errors(deltas, magnitude: float, seed=0, distribution: str = "uniform") -> np.ndarray:
    """Add independent zero-mean noise to each meter reading.

    ``uniform`` draws from [-magnitude, magnitude]; ``gaussian`` uses
    ``magnitude`` as the standard deviation.
    """
    if not magnitude >= 0:
        raise ValueError("noise magnitude must be >= 0")
    deltas = np.asarray(deltas, dtype=float)
    if magnitude == 0:
        return deltas.copy()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if distribution == "uniform":
        noise = rng.uniform(-magnitude, magnitude, size=deltas.shape)
    elif distribution == "gaussian":
        noise = rng.normal(0.0, magnitude, size=deltas.shape)
    else:
        raise ValueError(f"unknown noise distribution '{distribution}'")
    return deltas + noise


def detect(
    obs: Observation,
    baselines: Mapping[str, AmsiRecord],
    db: ScenarioDatabase,
    cfg: DetectionConfig = DetectionConfig(),
    net: Network | None = None,
) -> DetectionReport:
    """Run both phases; Phase 2 only for DMAs flagged by Phase 1."""
    identified = identify_dmas(obs, baselines, cfg)
    deltas = obs.deltas
    meters = filter_meters(deltas, cfg.meter_error)
    seqs = {d: rank_pipes(deltas, db, d, cfg, meters, net) for d, _ in identified}
    return DetectionReport(identified, seqs, tuple(int(i) for i in meters))


def baselines_from_arrays(dma_ids: Sequence[str], density, scale, alpha=None) -> dict[str, AmsiRecord]:
    """Baseline records from per-DMA arrays (density and ``p_ref ** alpha_ref``).

    When only the combined scale is known the record stores ``alpha_ref = 1``
    and ``p_ref = scale``, which gives the same AMSI.
    """
    out = {}
    for k, d in enumerate(dma_ids):
        s = float(scale[k])
        a = 1.0 if alpha is None else float(alpha[k])
        p = s if alpha is None else s ** (1.0 / a) if a else 1.0
        out[d] = AmsiRecord(d, float(density[k]), p, a, float(density[k]) / s)
    return out
