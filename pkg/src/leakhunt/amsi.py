"""Leak density and AMSI indicators at pipe and DMA level.

AMSI (asset management support indicator) is the diffuse leak density of a
pipe or district divided by its reference pressure raised to a reference
exponent. Under the power leakage law with the matching exponent it reduces
to ``8.64e7 * beta`` and no longer depends on the pressure level.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .hydraulics import HydraulicState
from .network import LeakModel, Network, Pipe

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
CSV_COLUMNS = ("scope", "leak_density", "p_ref", "alpha_ref", "amsi", "baseline_amsi", "delta")


@dataclass(frozen=True)
class AmsiRecord:
    scope: str
    leak_density: float  # m3/day/km
    p_ref: float  # m
    alpha_ref: float
    amsi: float


def _as_list(states) -> list[HydraulicState]:
    if isinstance(states, HydraulicState):
        return [states]
    states = list(states)
    if not states:
        raise ValueError("at least one hydraulic state is required")
    return states


def _segments(net: Network, pipe_id: str) -> list[str]:
    if pipe_id in net.leaks:
        return list(net.leaks[pipe_id].halves)
    if pipe_id not in net.pipes:
        raise KeyError(f"unknown pipe '{pipe_id}'")
    return [pipe_id]


def pipe_leak_density(states, net: Network, pipe_id: str) -> float:
    """Cycle-mean diffuse leakage of a pipe in m3/day per km of pipe."""
    states = _as_list(states)
    segs = _segments(net, pipe_id)
    length = net.original_length(pipe_id)
    if not length > 0:
        raise ValueError(f"pipe '{pipe_id}' has non-positive length")
    pos = [states[0].pipe_ids.index(s) for s in segs]
    mean_q = float(np.mean([sum(st.d_leak[i] for i in pos) for st in states]))
    return SECONDS_PER_DAY / (length / 1000.0) * mean_q


def pipe_amsi(density: float, p_ref: float, alpha_ref: float) -> float:
    if not p_ref > 0:
        raise ValueError(f"reference pressure must be > 0, got {p_ref}")
    return density / p_ref**alpha_ref


def reference_pressure(states, net: Network, pipe_id: str) -> float:
    """Cycle-mean pipe pressure; split pipes average their halves by length."""
    states = _as_list(states)
    segs = _segments(net, pipe_id)
    pos = [states[0].pipe_ids.index(s) for s in segs]
    lens = np.array([net.pipes[s].length for s in segs])
    vals = [float(np.dot(lens, st.P_pipe[pos]) / lens.sum()) for st in states]
    return float(np.mean(vals))


def reference_exponent(pipe: Pipe, p_ref: float) -> float:
    """Pressure exponent of the pipe's leak law at ``p_ref``.

    Exact for the power law. For FAVAD the local (elasticity) exponent
    ``0.5 + M P / (beta + M P)`` is used, which lies between 0.5 and 1.5.
    """
    lp = pipe.leak
    if lp.model is LeakModel.POWER:
        return lp.alpha
    mp = lp.m_coeff * max(p_ref, 0.0)
    if lp.beta + mp == 0:
        return 0.5
    return 0.5 + mp / (lp.beta + mp)


def pipe_record(states, net: Network, pipe_id: str, baseline=None) -> AmsiRecord:
    """AMSI of one pipe; reference pressure comes from ``baseline`` when given."""
    ref_states = states if baseline is None else baseline
    d = pipe_leak_density(states, net, pipe_id)
    p = reference_pressure(ref_states, net, pipe_id)
    pipe = net.leaks[pipe_id].pipe if pipe_id in net.leaks else net.pipes[pipe_id]
    a = reference_exponent(pipe, p)
    return AmsiRecord(pipe_id, d, p, a, pipe_amsi(d, p, a) if p > 0 else float("nan"))


class DmaIndex:
    """Vectorised per-DMA aggregation for one network layout."""

    def __init__(self, net: Network):
        self.net = net
        self.dmas = tuple(net.dmas)
        pos = {d: i for i, d in enumerate(self.dmas)}
        pipes = list(net.pipes.values())
        self.pipe_dma = np.array([pos[p.dma] if (p.dma in pos and p.is_open) else -1 for p in pipes], dtype=int)
        self.pipe_len = np.array([p.length for p in pipes])
        self.pipe_alpha = np.array([p.leak.alpha for p in pipes])
        self.power = np.array([p.leak.model is LeakModel.POWER for p in pipes], dtype=bool)
        self.beta = np.array([p.leak.beta for p in pipes])
        self.m_coeff = np.array([p.leak.m_coeff for p in pipes])
        junctions = net.junctions
        self.node_dma = np.array([pos.get(net.nodes[n].dma, -1) for n in junctions], dtype=int)
        nd = len(self.dmas)
        sel = self.pipe_dma >= 0
        self.length = np.bincount(self.pipe_dma[sel], weights=self.pipe_len[sel], minlength=nd)
        self.n_pipes = np.bincount(self.pipe_dma[sel], minlength=nd)

    def _sum(self, values, index):
        sel = index >= 0
        return np.bincount(index[sel], weights=values[sel], minlength=len(self.dmas))

    def density(self, state: HydraulicState, include_punctual: bool = True) -> np.ndarray:
        """Leak outflow per DMA in m3/day/km, optionally counting orifice outflow."""
        q = self._sum(state.d_leak, self.pipe_dma)
        if include_punctual:
            q = q + self._sum(state.punctual, self.node_dma)
        with np.errstate(divide="ignore", invalid="ignore"):
            return SECONDS_PER_DAY * q / (self.length / 1000.0)

    def reference(self, state: HydraulicState) -> tuple[np.ndarray, np.ndarray]:
        """Length-weighted reference pressure and exponent per DMA."""
        P = state.P_pipe
        mp = self.m_coeff * P
        with np.errstate(divide="ignore", invalid="ignore"):
            favad = np.where(self.beta + mp > 0, 0.5 + mp / (self.beta + mp), 0.5)
        alpha = np.where(self.power, self.pipe_alpha, favad)
        w = self.pipe_len
        with np.errstate(divide="ignore", invalid="ignore"):
            p_ref = self._sum(w * P, self.pipe_dma) / self.length
            a_ref = self._sum(w * alpha, self.pipe_dma) / self.length
        return p_ref, a_ref

    def scale(self, state: HydraulicState) -> np.ndarray:
        """``p_ref ** alpha_ref`` per DMA, the AMSI denominator."""
        p, a = self.reference(state)
        return np.power(p, a)


def _mean_state(states) -> HydraulicState:
    from .hydraulics import mean_state

    return mean_state(_as_list(states))


def dma_amsi(
    net: Network,
    dma_id: str,
    states=None,
    density: float | None = None,
    baseline=None,
    include_punctual: bool = True,
) -> AmsiRecord:
    """AMSI of a district from model states or from a metered density.

    The reference pressure and exponent are length-weighted over the DMA's
    pipes and taken from ``baseline`` when supplied (otherwise from
    ``states``). The cycle mean of leak outflows equals the outflow of the
    averaged state, so the mean state is used throughout.
    """
    if dma_id not in net.dmas:
        raise KeyError(f"unknown dma '{dma_id}'")
    idx = DmaIndex(net)
    k = idx.dmas.index(dma_id)
    if idx.n_pipes[k] == 0:
        raise ValueError(f"dma '{dma_id}' has no open pipes")
    ref_src = baseline if baseline is not None else states
    if ref_src is None:
        raise ValueError("model states or a baseline are required for the reference pressure")
    ref_state = _mean_state(ref_src)
    p_ref, a_ref = idx.reference(ref_state)
    if density is None:
        if states is None:
            raise ValueError("either states or a metered density must be given")
        density = float(idx.density(_mean_state(states), include_punctual)[k])
    p, a = float(p_ref[k]), float(a_ref[k])
    return AmsiRecord(dma_id, float(density), p, a, pipe_amsi(density, p, a) if p > 0 else float("nan"))


def metered_dma_density(inflow: float, outflow: float, consumption: float, length_km: float) -> float:
    """Water balance of a DMA (all in m3/day) turned into a leak density per km."""
    if length_km < 0:
        raise ValueError("dma length must be >= 0")
    if length_km == 0:
        raise ValueError("dma length must be > 0")
    balance = inflow - outflow - consumption
    if balance < 0:
        warnings.warn(f"negative DMA water balance ({balance:.6g} m3/day) floored at 0", RuntimeWarning, stacklevel=2)
        log.warning("negative DMA water balance %.6g m3/day floored at 0", balance)
        balance = 0.0
    return balance / length_km


def amsi_rows(net: Network, states, baseline) -> list[dict]:
    """Pipe and DMA AMSI rows with the matching baseline and their difference."""
    rows = []
    for pid in net.original_pipes():
        pipe = net.leaks[pid].pipe if pid in net.leaks else net.pipes[pid]
        if not pipe.is_open or pipe.dma is None:
            continue
        cur = pipe_record(states, net, pid, baseline)
        base = pipe_record(baseline, net, pid, baseline)
        rows.append(_row(cur, base.amsi))
    for d in net.dmas:
        cur = dma_amsi(net, d, states, baseline=baseline)
        base = dma_amsi(net, d, baseline, baseline=baseline)
        rows.append(_row(cur, base.amsi))
    return rows


def _row(rec: AmsiRecord, base_amsi: float) -> dict:
    return {
        "scope": rec.scope,
        "leak_density": rec.leak_density,
        "p_ref": rec.p_ref,
        "alpha_ref": rec.alpha_ref,
        "amsi": rec.amsi,
        "baseline_amsi": base_amsi,
        "delta": rec.amsi - base_amsi,
    }


def write_amsi_csv(rows: Sequence[dict], path: str | Path, header_lines: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
