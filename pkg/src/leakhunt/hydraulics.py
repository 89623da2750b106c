"""Steady-state pressure-driven hydraulics with pipe-level leakage.

The network equations are solved in mixed form (pipe flows and junction heads
together) by Newton iteration with adaptive step relaxation:

    h_k(Q_k) + H_to - H_from = 0                    (one row per open link)
    sum_k A_kn Q_k - d_n(H) = 0                    (one row per junction)

``d_n`` collects pressure-driven customer demand, half of the diffuse leakage
of every incident pipe and the orifice outflow of punctual leak nodes.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.linalg import solveh_banded
from scipy.sparse import csgraph

from .network import (
    DemandModel,
    HeadlossModel,
    LeakModel,
    LinkStatus,
    Network,
    NetworkError,
    OperativeCycle,
    Pipe,
    unreachable_junctions,
)

log = logging.getLogger(__name__)

G = 9.81
KINEMATIC_VISCOSITY = 1.004e-6  # m2/s, water at 20 C
HW_EXPONENT = 1.852
HW_COEFF = 10.67
CD_DEFAULT = 0.6

MAX_HEAD_STEP = 10.0
MAX_BANDWIDTH = 96
_P_EPS = 1e-6  # m, floor used only for derivatives of sqrt-like laws


class DisconnectedError(NetworkError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, multiplier: float | None = None, state: "HydraulicState | None" = None):
        super().__init__(message)
        self.multiplier = multiplier
        self.state = state


@dataclass(frozen=True)
class SolverSettings:
    head_tolerance: float = 1e-6
    flow_tolerance: float = 1e-6
    max_iterations: int = 200
    under_relaxation: float = 1.0
    discharge_coefficient: float = CD_DEFAULT

    def __post_init__(self):
        if not (self.head_tolerance > 0 and self.flow_tolerance > 0):
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.under_relaxation <= 1:
            raise ValueError("under_relaxation must lie in (0, 1]")


@dataclass
class HydraulicState:
    pipe_ids: tuple[str, ...]
    junction_ids: tuple[str, ...]
    Q: np.ndarray  # per pipe, m3/s (0 for closed pipes)
    H: np.ndarray  # per junction, m
    pressure: np.ndarray  # per junction, m
    P_pipe: np.ndarray  # per pipe mean pressure, floored at 0
    d_leak: np.ndarray  # per pipe diffuse leakage, m3/s
    punctual: np.ndarray  # per junction orifice outflow, m3/s
    served: np.ndarray  # per junction customer demand actually delivered, m3/s
    multiplier: float = 1.0
    converged: bool = True
    iterations: int = 0
    mass_residual: float = 0.0
    head_residual: float = 0.0
    valve_ids: tuple[str, ...] = ()
    Q_valve: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def head(self, node_id: str) -> float:
        return float(self.H[self.junction_ids.index(node_id)])

    def flow(self, pipe_id: str) -> float:
        return float(self.Q[self.pipe_ids.index(pipe_id)])

    @property
    def total_diffuse(self) -> float:
        return float(self.d_leak.sum())

    @property
    def total_punctual(self) -> float:
        return float(self.punctual.sum())


# ---------------------------------------------------------------------------
# Constitutive laws
# ---------------------------------------------------------------------------

def hw_resistance(diameter, roughness):
    """Hazen-Williams resistance per unit length (SI)."""
    return HW_COEFF / (np.power(roughness, HW_EXPONENT) * np.power(diameter, 4.8704))


def _swamee_jain(re, rel_rough):
    lg = np.log10(rel_rough / 3.7 + 5.74 / np.power(re, 0.9))
    f = 0.25 / lg**2
    # d f / d Re
    dlg = (-0.9 * 5.74 * np.power(re, -1.9)) / ((rel_rough / 3.7 + 5.74 / np.power(re, 0.9)) * math.log(10))
    df = -0.5 / lg**3 * dlg
    return f, df


def _dw_loss(Q, length, diameter, roughness_mm):
    """Darcy-Weisbach head loss and derivative (laminar below Re 2000, Swamee-Jain above)."""
    Q = np.asarray(Q, dtype=float)
    aq = np.abs(Q)
    re = 4.0 * aq / (math.pi * diameter * KINEMATIC_VISCOSITY)
    c = 8.0 * length / (G * math.pi**2 * np.power(diameter, 5))
    lam_coeff = 128.0 * KINEMATIC_VISCOSITY * length / (G * math.pi * np.power(diameter, 4))
    turb = re > 2000.0
    h = lam_coeff * Q
    dh = lam_coeff * np.ones_like(Q)
    if np.any(turb):
        rr = (roughness_mm / 1000.0) / diameter
        f, df = _swamee_jain(re[turb], rr[turb] if np.ndim(rr) else rr)
        ct = c[turb] if np.ndim(c) else c
        h = np.where(turb, 0.0, h)
        dh = np.where(turb, 0.0, dh)
        h[turb] = f * ct * Q[turb] * aq[turb]
        dh[turb] = ct * aq[turb] * (2.0 * f + re[turb] * df)
    return h, dh


def head_loss(pipe: Pipe, Q: float, model: HeadlossModel = HeadlossModel.HAZEN_WILLIAMS) -> float:
    """Head loss (m) from ``from_node`` to ``to_node`` for flow ``Q`` (m3/s)."""
    if model is HeadlossModel.HAZEN_WILLIAMS:
        r = hw_resistance(pipe.diameter, pipe.roughness) * pipe.length
        return float(r * Q * abs(Q) ** (HW_EXPONENT - 1.0))
    h, _ = _dw_loss(np.array([Q], dtype=float), pipe.length, np.array([pipe.diameter]), np.array([pipe.roughness]))
    return float(h[0])


def nodal_demand(pressure, base, multiplier: float, model: DemandModel):
    """Served demand under the Wagner law: zero below p_min, full above p_service."""
    s = np.clip((np.asarray(pressure, dtype=float) - model.p_min) / (model.p_service - model.p_min), 0.0, 1.0)
    out = np.asarray(base, dtype=float) * multiplier * np.sqrt(s)
    return float(out) if out.ndim == 0 else out


def pipe_diffuse_leak(pipe: Pipe, P: float) -> float:
    """Diffuse leakage (m3/s) of a whole pipe at mean pressure ``P`` (m)."""
    lp = pipe.leak
    P = max(float(P), 0.0)
    if lp.model is LeakModel.POWER:
        return lp.beta * P**lp.alpha * pipe.length
    return (lp.beta + lp.m_coeff * P) * math.sqrt(P) * pipe.length


def orifice_outflow(diameter: float, P: float, cd: float = CD_DEFAULT) -> float:
    """Torricelli outflow (m3/s) through a circular orifice."""
    return cd * math.pi * diameter**2 / 4.0 * math.sqrt(2.0 * G * max(float(P), 0.0))


# ---------------------------------------------------------------------------
# Compiled model
# ---------------------------------------------------------------------------

class HydraulicModel:
    """Array form of a :class:`Network`, reusable across many solves.

    Orifices may be changed in place with :meth:`set_orifice` so a leak
    sweep on one pipe needs a single compilation.
    """

    def __init__(self, net: Network, settings: SolverSettings | None = None):
        self.net = net
        self.settings = settings or SolverSettings()
        bad = unreachable_junctions(net)
        if bad:
            raise DisconnectedError(f"junctions not connected to a reservoir: {', '.join(bad[:10])}")

        self.junction_ids = tuple(net.junctions)
        self.reservoir_ids = tuple(net.reservoirs)
        self.pipe_ids = tuple(net.pipes)
        self.valve_ids = tuple(net.valves)
        n_n = len(self.junction_ids)
        idx = {n: i for i, n in enumerate(self.junction_ids)}
        idx.update({n: n_n + i for i, n in enumerate(self.reservoir_ids)})
        self.node_index = idx
        self.n_n = n_n

        nodes = net.nodes
        self.z = np.array([nodes[n].elevation for n in self.junction_ids])
        self.base = np.array([nodes[n].demand for n in self.junction_ids])
        self.orifice = np.array([nodes[n].orifice for n in self.junction_ids])
        self.H0 = np.array([nodes[n].head for n in self.reservoir_ids], dtype=float)
        self.z0 = np.array([nodes[n].elevation for n in self.reservoir_ids], dtype=float)

        pipes = [net.pipes[p] for p in self.pipe_ids]
        self.pipe_open = np.array([p.is_open for p in pipes], dtype=bool)
        open_pipes = [p for p in pipes if p.is_open]
        self.open_pipe_pos = np.flatnonzero(self.pipe_open)
        valves = [net.valves[v] for v in self.valve_ids]
        self.valve_user_status = [v.status for v in valves]

        self.n_pipe_links = len(open_pipes)
        self.n_links = self.n_pipe_links + len(valves)
        self.frm = np.array([idx[p.from_node] for p in open_pipes] + [idx[v.from_node] for v in valves], dtype=int)
        self.to = np.array([idx[p.to_node] for p in open_pipes] + [idx[v.to_node] for v in valves], dtype=int)

        self.length = np.array([p.length for p in open_pipes])
        self.diameter = np.array([p.diameter for p in open_pipes])
        self.roughness = np.array([p.roughness for p in open_pipes])
        self.hw_r = hw_resistance(self.diameter, self.roughness) * self.length if open_pipes else np.zeros(0)
        self.valve_r = np.array([8.0 * v.minor_loss / (G * math.pi**2 * v.diameter**4) for v in valves])
        self.valve_setting = np.array([v.setting for v in valves])
        self.valve_to_z = np.array([nodes[v.to_node].elevation for v in valves])

        self.leak_power = np.array([p.leak.model is LeakModel.POWER for p in open_pipes], dtype=bool)
        self.beta = np.array([p.leak.beta for p in open_pipes])
        self.alpha = np.array([p.leak.alpha for p in open_pipes])
        self.m_coeff = np.array([p.leak.m_coeff for p in open_pipes])

        self._build_pattern()

    # -- topology pattern -------------------------------------------------
    def _build_pattern(self):
        nl, nn = self.n_links, self.n_n
        links = np.arange(nl)
        fj = self.frm < nn
        tj = self.to < nn
        np_ = self.n_pipe_links
        pj = np.arange(np_)
        both = fj[:np_] & tj[:np_]
        rows = [
            links,  # dh/dQ diagonal
            links[tj], links[fj],  # A_pn entries: +1 at to, -1 at from
            nl + self.to[tj], nl + self.frm[fj],  # A_np (transpose)
            nl + np.arange(nn),  # -G diagonal (demand, orifice, leak self terms)
            nl + self.frm[:np_][both], nl + self.to[:np_][both],  # -G leak couplings
        ]
        cols = [
            links,
            nl + self.to[tj], nl + self.frm[fj],
            links[tj], links[fj],
            nl + np.arange(nn),
            nl + self.to[:np_][both], nl + self.frm[:np_][both],
        ]
        self._rows = np.concatenate(rows)
        self._cols = np.concatenate(cols)
        self._tj, self._fj = tj, fj
        self._both = both
        self._pj = pj
        self._size = nl + nn
        # reduced (junction-only) system pattern
        jj = tj & fj
        self._s_rows = np.concatenate([self.to[tj], self.frm[fj], self.frm[jj], self.to[jj], np.arange(nn),
                                       self.frm[:np_][both], self.to[:np_][both]])
        self._s_cols = np.concatenate([self.to[tj], self.frm[fj], self.to[jj], self.frm[jj], np.arange(nn),
                                       self.to[:np_][both], self.frm[:np_][both]])
        self._jj = jj
        self._setup_banded()

    def _setup_banded(self):
        """Reverse Cuthill-McKee ordering so the reduced system can use banded Cholesky."""
        nn = self.n_n
        self._band = None
        if nn == 0:
            return
        pattern = sp.csr_matrix((np.ones(len(self._s_rows)), (self._s_rows, self._s_cols)), shape=(nn, nn))
        perm = csgraph.reverse_cuthill_mckee(pattern, symmetric_mode=True)
        inv = np.empty(nn, dtype=int)
        inv[perm] = np.arange(nn)
        r, c = inv[self._s_rows], inv[self._s_cols]
        bw = int(np.max(np.abs(r - c))) if len(r) else 0
        if bw > MAX_BANDWIDTH:
            return
        upper = r <= c
        # row index inside LAPACK upper banded storage: ab[bw + i - j, j]
        flat = (bw + r[upper] - c[upper]) * nn + c[upper]
        self._band = (perm, upper, flat, bw)

    def set_orifice(self, node_id: str, diameter: float) -> None:
        self.orifice[self.node_index[node_id]] = diameter

    def set_reservoir_head(self, node_id: str, head: float) -> None:
        self.H0[self.node_index[node_id] - self.n_n] = head

    # -- evaluation -----------------------------------------------------------
    def _heads_full(self, H):
        return np.concatenate([H, self.H0])

    def _pressures_full(self, H):
        return np.concatenate([H - self.z, self.H0 - self.z0])

    def _link_loss(self, Q):
        np_ = self.n_pipe_links
        h = np.empty_like(Q)
        dh = np.empty_like(Q)
        qp = Q[:np_]
        if self.net.headloss is HeadlossModel.HAZEN_WILLIAMS:
            aq = np.abs(qp)
            pw = np.power(aq, HW_EXPONENT - 1.0)
            h[:np_] = self.hw_r * qp * pw
            dh[:np_] = HW_EXPONENT * self.hw_r * pw
        else:
            h[:np_], dh[:np_] = _dw_loss(qp, self.length, self.diameter, self.roughness)
        qv = Q[np_:]
        h[np_:] = self.valve_r * qv * np.abs(qv)
        dh[np_:] = 2.0 * self.valve_r * np.abs(qv)
        return h, np.maximum(dh, 1e-10)

    def pipe_pressure(self, H):
        pf = self._pressures_full(H)
        np_ = self.n_pipe_links
        return np.maximum(0.5 * (pf[self.frm[:np_]] + pf[self.to[:np_]]), 0.0)

    def _diffuse(self, Pk):
        Pd = np.maximum(Pk, _P_EPS)
        power = self.leak_power
        q = np.where(
            power,
            self.beta * np.power(Pk, self.alpha),
            (self.beta + self.m_coeff * Pk) * np.sqrt(Pk),
        ) * self.length
        dq = np.where(
            power,
            self.alpha * self.beta * np.power(Pd, self.alpha - 1.0),
            0.5 * self.beta / np.sqrt(Pd) + 1.5 * self.m_coeff * np.sqrt(Pd),
        ) * self.length
        dq = np.where(Pk > 0, dq, 0.0)
        return q, dq

    def _demand_terms(self, H, mult):
        """Junction outflows d(H) and their Jacobian pieces."""
        cd = self.settings.discharge_coefficient
        dm = self.net.demand_model
        P = H - self.z
        span = dm.p_service - dm.p_min
        s = np.clip((P - dm.p_min) / span, 0.0, 1.0)
        served = self.base * mult * np.sqrt(s)
        inside = (s > 0) & (s < 1)
        ds = np.where(inside, self.base * mult * 0.5 / np.sqrt(np.maximum(s, 1e-6)) / span, 0.0)

        area = cd * math.pi * self.orifice**2 / 4.0
        Pp = np.maximum(P, 0.0)
        punct = area * np.sqrt(2.0 * G * Pp)
        dpunct = np.where(P > 0, area * math.sqrt(2.0 * G) * 0.5 / np.sqrt(np.maximum(P, _P_EPS)), 0.0)

        Pk = self.pipe_pressure(H)
        qk, dqk = self._diffuse(Pk)
        nn = self.n_n
        np_ = self.n_pipe_links
        fr, to = self.frm[:np_], self.to[:np_]
        leak_alloc = np.bincount(fr, weights=0.5 * qk, minlength=nn + len(self.H0))[:nn]
        leak_alloc += np.bincount(to, weights=0.5 * qk, minlength=nn + len(self.H0))[:nn]
        # d(0.5 q_k)/dH_end = 0.25 dq_k (each end contributes half of P_k)
        w = 0.25 * dqk
        gdiag = ds + dpunct
        gdiag = gdiag + np.bincount(fr, weights=w * (fr < nn), minlength=nn + len(self.H0))[:nn]
        gdiag = gdiag + np.bincount(to, weights=w * (to < nn), minlength=nn + len(self.H0))[:nn]
        goff = w[self._both]
        d = served + punct + leak_alloc
        return d, gdiag, goff, (served, punct, Pk, qk)

    def _residual(self, Q, H, mult, active):
        hf = self._heads_full(H)
        h, dh = self._link_loss(Q)
        r1 = h + hf[self.to] - hf[self.frm]
        if active.any():
            nv = self.n_pipe_links
            va = np.flatnonzero(active)
            r1[nv + va] = hf[self.to[nv + va]] - (self.valve_to_z[va] + self.valve_setting[va])
        d, gdiag, goff, extra = self._demand_terms(H, mult)
        nn = self.n_n
        inflow = np.bincount(self.to, weights=Q, minlength=nn + len(self.H0))[:nn]
        inflow -= np.bincount(self.frm, weights=Q, minlength=nn + len(self.H0))[:nn]
        r2 = inflow - d
        return r1, r2, dh, gdiag, goff, extra

    def _jacobian(self, dh, gdiag, goff, active):
        nl = self.n_links
        tj, fj = self._tj, self._fj
        a_to = np.ones(tj.sum())
        a_fr = -np.ones(fj.sum())
        dd = dh.copy()
        if active.any():
            nv = self.n_pipe_links
            rows = nv + np.flatnonzero(active)
            dd[rows] = 0.0
            # momentum row of an active valve is H_to - H_set: drop the from-term
            fr_rows = np.flatnonzero(fj)
            a_fr = np.where(np.isin(fr_rows, rows), 0.0, a_fr)
        data = np.concatenate([dd, a_to, a_fr, np.ones(tj.sum()), -np.ones(fj.sum()), -gdiag, -goff, -goff])
        return sp.csc_matrix((data, (self._rows, self._cols)), shape=(self._size, self._size))

    def _step(self, r1, r2, dh, gd, go, active):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spl.MatrixRankWarning)
            if active.any():
                J = self._jacobian(dh, gd, go, active)
                rhs = -np.concatenate([r1, r2])
                try:
                    return spl.splu(J, permc_spec="COLAMD").solve(rhs)
                except RuntimeError:
                    return spl.lsqr(J, rhs)[0]
            # Schur complement on junction heads: (A' D^-1 A + G) dH = r2 - A' D^-1 r1
            nn = self.n_n
            w = 1.0 / dh
            tj, fj, jj = self._tj, self._fj, self._jj
            data = np.concatenate([w[tj], w[fj], -w[jj], -w[jj], gd, go, go])
            y = w * r1
            rhs = r2 - (np.bincount(self.to[tj], weights=y[tj], minlength=nn) - np.bincount(self.frm[fj], weights=y[fj], minlength=nn))
            dH = None
            if self._band is not None:
                perm, upper, flat, bw = self._band
                ab = np.bincount(flat, weights=data[upper], minlength=(bw + 1) * nn).reshape(bw + 1, nn)
                try:
                    dH = np.empty(nn)
                    dH[perm] = solveh_banded(ab, rhs[perm], check_finite=False)
                except np.linalg.LinAlgError:
                    dH = None
            if dH is None:
                M = sp.csc_matrix((data, (self._s_rows, self._s_cols)), shape=(nn, nn))
                try:
                    dH = spl.splu(M, permc_spec="MMD_AT_PLUS_A").solve(rhs)
                except RuntimeError:
                    dH = spl.lsqr(M, rhs)[0]
            hf = np.concatenate([dH, np.zeros(len(self.H0))])
            dQ = -w * (r1 + hf[self.to] - hf[self.frm])
            return np.concatenate([dQ, dH])

    def initial_guess(self, mult: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        area = math.pi * self.diameter**2 / 4.0
        Q = np.concatenate([0.1 * area, np.full(self.n_links - self.n_pipe_links, 1e-3)])
        top = float(self.H0.max()) if len(self.H0) else 0.0
        H = np.full(self.n_n, top) - 0.01
        return Q, H

    # -- Newton ---------------------------------------------------------------
    def _newton(self, Q, H, mult, active):
        """Newton iteration; the relaxation factor halves whenever the residual grows.

        Head corrections are additionally capped at ``MAX_HEAD_STEP`` per
        iteration, which stops the pressure-driven demand law from flipping
        between fully served and unserved states on hard starts.
        """
        st = self.settings
        htol, ftol = st.head_tolerance, st.flow_tolerance
        nl = self.n_links

        def merit(r1, r2):
            a = np.max(np.abs(r1)) / htol if len(r1) else 0.0
            b = np.max(np.abs(r2)) / ftol if len(r2) else 0.0
            return max(a, b)

        r1, r2, dh, gd, go, _ = self._residual(Q, H, mult, active)
        m = merit(r1, r2)
        relax = st.under_relaxation
        polished = False
        it = 0
        while it < st.max_iterations:
            if m <= 1.0 and (m <= 1e-3 or polished):
                break
            if m <= 1.0:
                polished = True
            dx = self._step(r1, r2, dh, gd, go, active)
            if not np.all(np.isfinite(dx)):
                break
            lam = 1.0 if polished else relax
            big = np.max(np.abs(dx[nl:])) if self.n_n else 0.0
            if lam * big > MAX_HEAD_STEP:
                lam = MAX_HEAD_STEP / big
            Q = Q + lam * dx[:nl]
            H = H + lam * dx[nl:]
            r1, r2, dh, gd, go, _ = self._residual(Q, H, mult, active)
            m_new = merit(r1, r2)
            if m_new > m:
                relax = max(relax * 0.5, 1.0 / 64)
            else:
                relax = min(relax * 2.0, st.under_relaxation)
            m = m_new
            it += 1
        converged = m <= 1.0
        return Q, H, it, converged, r1, r2

    def solve(self, multiplier: float = 1.0, x0: tuple[np.ndarray, np.ndarray] | None = None) -> HydraulicState:
        Q, H = x0 if x0 is not None else self.initial_guess(multiplier)
        Q, H = np.array(Q, dtype=float), np.array(H, dtype=float)
        nv = len(self.valve_ids)
        active = np.array([s is LinkStatus.ACTIVE for s in self.valve_user_status], dtype=bool)
        closed = np.array([s is LinkStatus.CLOSED for s in self.valve_user_status], dtype=bool)
        if closed.any():
            # closed valves carry no flow: emulate with a huge resistance
            self.valve_r = np.where(closed, 1e12, self.valve_r)
        total_it = 0
        for _ in range(10):
            Q, H, it, converged, r1, r2 = self._newton(Q, H, multiplier, active)
            total_it += it
            if nv == 0:
                break
            new_active = self._update_valves(Q, H, active, closed)
            if np.array_equal(new_active, active):
                break
            active = new_active
        return self._state(Q, H, multiplier, converged, total_it, r1, r2)

    def _update_valves(self, Q, H, active, closed):
        nv = self.n_pipe_links
        hf = self._heads_full(H)
        tol = self.settings.head_tolerance * 10
        out = active.copy()
        for i in range(len(self.valve_ids)):
            if closed[i]:
                continue
            h_set = self.valve_to_z[i] + self.valve_setting[i]
            h_up = hf[self.frm[nv + i]]
            h_dn = hf[self.to[nv + i]]
            if active[i] and (h_up < h_set - tol or Q[nv + i] < 0):
                out[i] = False
            elif not active[i] and h_dn > h_set + tol:
                out[i] = True
        return out

    def _state(self, Q, H, mult, converged, it, r1, r2) -> HydraulicState:
        d, _, _, (served, punct, Pk, qk) = self._demand_terms(H, mult)
        n_all = len(self.pipe_ids)
        Qp = np.zeros(n_all)
        Qp[self.open_pipe_pos] = Q[: self.n_pipe_links]
        Pall = np.zeros(n_all)
        Pall[self.open_pipe_pos] = Pk
        dl = np.zeros(n_all)
        dl[self.open_pipe_pos] = qk
        return HydraulicState(
            pipe_ids=self.pipe_ids,
            junction_ids=self.junction_ids,
            Q=Qp,
            H=H.copy(),
            pressure=H - self.z,
            P_pipe=Pall,
            d_leak=dl,
            punctual=punct,
            served=served,
            multiplier=float(mult),
            converged=bool(converged),
            iterations=int(it),
            mass_residual=float(np.max(np.abs(r2))) if len(r2) else 0.0,
            head_residual=float(np.max(np.abs(r1))) if len(r1) else 0.0,
            valve_ids=self.valve_ids,
            Q_valve=Q[self.n_pipe_links:].copy(),
        )

    def warm_start(self, state: HydraulicState) -> tuple[np.ndarray, np.ndarray]:
        """Initial guess taken from a state of a (possibly different) network.

        Matching is by id; leak-node heads and split-pipe flows fall back to
        the neighbouring values.
        """
        Q0, H0 = self.initial_guess()
        jpos = {n: i for i, n in enumerate(state.junction_ids)}
        for i, n in enumerate(self.junction_ids):
            if n in jpos:
                H0[i] = state.H[jpos[n]]
        ppos = {p: i for i, p in enumerate(state.pipe_ids)}
        open_ids = [self.pipe_ids[i] for i in self.open_pipe_pos]
        leaks = self.net.leaks
        for k, pid in enumerate(open_ids):
            if pid in ppos:
                Q0[k] = state.Q[ppos[pid]]
            else:
                origin = self.net.pipes[pid].origin
                if origin is not None and origin in ppos:
                    Q0[k] = state.Q[ppos[origin]]
        for site in leaks.values():
            a, b = site.pipe.from_node, site.pipe.to_node
            ha = H0[self.node_index[a]] if self.node_index[a] < self.n_n else self.H0[self.node_index[a] - self.n_n]
            hb = H0[self.node_index[b]] if self.node_index[b] < self.n_n else self.H0[self.node_index[b] - self.n_n]
            if site.node not in jpos:
                H0[self.node_index[site.node]] = 0.5 * (ha + hb)
        if len(state.Q_valve) == len(self.valve_ids):
            Q0[self.n_pipe_links:] = state.Q_valve
        return Q0, H0


def solve_steady_state(net: Network, multiplier: float = 1.0, settings: SolverSettings | None = None) -> HydraulicState:
    return HydraulicModel(net, settings).solve(multiplier)


def solve_cycle(
    net: Network,
    cycle: OperativeCycle | None = None,
    settings: SolverSettings | None = None,
    model: HydraulicModel | None = None,
) -> tuple[list[HydraulicState], HydraulicState]:
    """Solve every snapshot of an operative cycle and their arithmetic mean."""
    cycle = cycle or net.cycle
    model = model or HydraulicModel(net, settings)
    states = []
    x0 = None
    for m in cycle.multipliers:
        st = model.solve(m, x0)
        if not st.converged:
            raise ConvergenceError(f"solver did not converge at multiplier {m}", m, st)
        states.append(st)
        x0 = (np.concatenate([st.Q[model.open_pipe_pos], st.Q_valve]), st.H)
    return states, mean_state(states)


def mean_state(states: list[HydraulicState]) -> HydraulicState:
    if len(states) == 1:
        return states[0]
    first = states[0]

    def avg(name):
        return np.mean([getattr(s, name) for s in states], axis=0)

    return HydraulicState(
        pipe_ids=first.pipe_ids,
        junction_ids=first.junction_ids,
        Q=avg("Q"),
        H=avg("H"),
        pressure=avg("pressure"),
        P_pipe=avg("P_pipe"),
        d_leak=avg("d_leak"),
        punctual=avg("punctual"),
        served=avg("served"),
        multiplier=float(np.mean([s.multiplier for s in states])),
        converged=all(s.converged for s in states),
        iterations=sum(s.iterations for s in states),
        mass_residual=max(s.mass_residual for s in states),
        head_residual=max(s.head_residual for s in states),
        valve_ids=first.valve_ids,
        Q_valve=avg("Q_valve"),
    )
