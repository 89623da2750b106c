"""Deterministic synthetic networks used as bundled fixtures.

Each DMA is a small grid of looped mains with a few dead-end branches and one
inlet main. DMAs are fed either straight from the reservoir or through the
previous DMA, so boundary flows are nested like in real districtualized
systems.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from .network import (
    DemandModel,
    LeakModel,
    LeakParams,
    LinkStatus,
    MeterConfig,
    Network,
    Node,
    NodeKind,
    OperativeCycle,
    Pipe,
    load_network,
)

FIXTURES = {
    "single_pipe": "single_pipe.json",
    "triangle": "triangle.json",
    "dma3": "dma3.json",
    "dma5": "dma5.json",
    "dma9": "dma9.json",
    "large853": "large853.json",
}

DEFAULT_CYCLE = (0.6, 0.5, 0.7, 1.2, 1.4, 1.1, 1.3, 0.9)


def fixture_path(name: str) -> Path:
    return Path(str(resources.files("leakhunt") / "data" / FIXTURES[name]))


def load_fixture(name: str) -> Network:
    return load_network(fixture_path(name))


def single_pipe(head: float = 50.0, demand: float = 0.0, beta: float = 0.0) -> Network:
    nodes = {
        "R": Node("R", head, 0.0, NodeKind.RESERVOIR, head),
        "J": Node("J", 0.0, demand, dma="A"),
    }
    pipes = {"P1": Pipe("P1", "R", "J", 1000.0, 0.2, 130.0, dma="A", leak=LeakParams(beta=beta))}
    return Network(nodes, pipes, dmas=("A",), meters=MeterConfig(("J",), ("boundary",)), name="single_pipe")


def triangle(head: float = 40.0, beta: float = 0.0) -> Network:
    lp = LeakParams(beta=beta)
    nodes = {
        "R": Node("R", head, 0.0, NodeKind.RESERVOIR, head),
        "J1": Node("J1", 5.0, 0.004, dma="A"),
        "J2": Node("J2", 8.0, 0.006, dma="A"),
    }
    pipes = {
        "P1": Pipe("P1", "R", "J1", 500.0, 0.15, 120.0, dma="A", leak=lp),
        "P2": Pipe("P2", "R", "J2", 800.0, 0.10, 110.0, dma="A", leak=lp),
        "P3": Pipe("P3", "J1", "J2", 400.0, 0.10, 100.0, dma="A", leak=lp),
    }
    return Network(
        nodes,
        pipes,
        dmas=("A",),
        meters=MeterConfig(("J1", "J2"), ("boundary", "internal")),
        demand_model=DemandModel(0.0, 20.0),
        name="triangle",
    )


def _grid_shape(n_grid_pipes: int) -> tuple[int, int]:
    """Largest looped r x c grid (aspect at most 1:3) within ``n_grid_pipes`` pipes.

    Pipes left over become diagonals. Tiny budgets fall back to a line.
    """
    best, key = (1, max(2, n_grid_pipes + 1)), (-1, 0)
    if n_grid_pipes < 4:
        return best
    for r in range(2, 40):
        for c in range(r, 3 * r + 1):
            cnt = r * (c - 1) + c * (r - 1)
            if cnt <= n_grid_pipes and (cnt, -abs(r - c)) > key:
                best, key = (r, c), (cnt, -abs(r - c))
    return best


def dma_network(
    pipes_per_dma: list[int],
    seed: int = 0,
    head: float = 75.0,
    lengths: tuple[float, float] | None = None,
    demand_range: tuple[float, float] = (2e-4, 6e-4),
    beta_range: tuple[float, float] = (2e-9, 6e-9),
    branch_share: float = 0.2,
    gates: bool = False,
    name: str = "",
) -> Network:
    """Build a districtualized network with the given number of pipes per DMA.

    ``lengths=None`` makes every pipe 100 m; otherwise lengths are uniform in
    the given range. Each DMA gets a boundary meter at its inlet node, one
    internal meter near its grid centre and peripheral meters at branch ends.
    """
    rng = np.random.default_rng(seed)
    nodes: dict[str, Node] = {"R": Node("R", head, 0.0, NodeKind.RESERVOIR, head)}
    pipes: dict[str, Pipe] = {}
    dmas: list[str] = []
    meter_nodes: list[str] = []
    tags: list[str] = []
    flow_meters: list[str] = []
    far_corner: dict[int, str] = {}
    grids: list[list[list[str]]] = []

    def plen():
        if lengths is None:
            return 100.0
        return float(np.round(rng.uniform(*lengths), 1))

    for d, n_pipes in enumerate(pipes_per_dma):
        dma = chr(ord("A") + d) if len(pipes_per_dma) <= 26 else f"D{d + 1}"
        dmas.append(dma)
        beta = float(rng.uniform(*beta_range))
        lp = LeakParams(LeakModel.POWER, beta, 1.0, 0.0)
        budget = n_pipes - 1  # inlet
        n_branch = max(1, int(round(branch_share * budget))) if budget >= 4 else max(0, budget - 3)
        r, c = _grid_shape(budget - n_branch)
        n_grid = r * (c - 1) + c * (r - 1)
        n_extra = budget - n_branch - n_grid  # diagonals
        ox = d * (c + 2)
        ids = [[f"{dma}{i}_{j}" for j in range(c)] for i in range(r)]
        grids.append(ids)
        for i in range(r):
            for j in range(c):
                x, y = ox + j, i
                z = 10.0 + 6.0 * math.sin(0.35 * x) + 4.0 * math.cos(0.5 * y) + rng.uniform(-1, 1)
                nodes[ids[i][j]] = Node(ids[i][j], round(z, 2), round(float(rng.uniform(*demand_range)), 6), dma=dma)
        k = 0

        def add(a, b, diam, kind="m"):
            nonlocal k
            k += 1
            pid = f"{dma}-{kind}{k}"
            pipes[pid] = Pipe(pid, a, b, plen(), diam, 120.0, dma=dma, leak=lp)
            return pid

        big = 0.2 if len(pipes_per_dma) < 6 else 0.3
        # inlet
        if d % 2 == 0 or d == 0:
            inlet = add("R", ids[0][0], big, "in")
        else:
            inlet = add(far_corner[d - 1], ids[0][0], big * 0.75, "in")
        flow_meters.append(inlet)
        main = 0.15 if r * c > 12 else 0.125
        for i in range(r):
            for j in range(c - 1):
                add(ids[i][j], ids[i][j + 1], main if i == 0 else 0.1)
        for i in range(r - 1):
            for j in range(c):
                add(ids[i][j], ids[i + 1][j], main if j == 0 else 0.1)
        cells = [(i, j) for i in range(r - 1) for j in range(c - 1)]
        for e in range(n_extra):
            i, j = cells[e % len(cells)] if cells else (0, 0)
            if cells and e < len(cells):
                add(ids[i][j], ids[i + 1][j + 1], 0.08)
            else:
                i, j = (e * 7) % r, (e * 3) % max(1, c - 1)
                add(ids[i][j], ids[(i + 1) % r][j + 1], 0.08)
        # dead-end branches hanging off grid nodes, some of them two pipes long
        tips = []
        b = 0
        while b < n_branch:
            i, j = int(rng.integers(r)), int(rng.integers(c))
            base = ids[i][j]
            bid = f"{dma}b{b}"
            nodes[bid] = Node(
                bid, round(nodes[base].elevation + float(rng.uniform(-2, 3)), 2), round(float(rng.uniform(*demand_range)), 6), dma=dma
            )
            add(base, bid, 0.08, "b")
            b += 1
            tip = bid
            if b < n_branch and rng.random() < 0.35:
                bid2 = f"{dma}b{b}"
                nodes[bid2] = Node(
                    bid2, round(nodes[bid].elevation + float(rng.uniform(-2, 2)), 2), round(float(rng.uniform(*demand_range)), 6), dma=dma
                )
                add(bid, bid2, 0.06, "b")
                b += 1
                tip = bid2
            tips.append(tip)
        far_corner[d] = ids[r - 1][c - 1]
        meter_nodes.append(ids[0][0])
        tags.append("boundary")
        centre = ids[r // 2][c // 2]
        if centre != ids[0][0]:
            meter_nodes.append(centre)
            tags.append("internal")
        for tip in tips[: max(1, len(tips) // 2)]:
            meter_nodes.append(tip)
            tags.append("peripheral")

    if gates:
        # closed boundary valves between consecutive DMAs
        for d in range(len(dmas) - 1):
            a = grids[d][0][-1]
            b = grids[d + 1][-1][0]
            gid = f"gate{d + 1}"
            pipes[gid] = Pipe(gid, a, b, 50.0, 0.1, 120.0, LinkStatus.CLOSED, None)

    return Network(
        nodes,
        pipes,
        dmas=tuple(dmas),
        meters=MeterConfig(tuple(meter_nodes), tuple(tags), tuple(flow_meters), "peripheral"),
        cycle=OperativeCycle(3600.0 * 24 / len(DEFAULT_CYCLE), DEFAULT_CYCLE),
        demand_model=DemandModel(0.0, 20.0),
        name=name,
    )


def dma3() -> Network:
    return dma_network([10, 10, 10], seed=3, head=70.0, name="dma3")


def dma5() -> Network:
    net = dma_network([40, 40, 40, 40, 36], seed=5, head=95.0, lengths=(40.0, 160.0), gates=True, name="dma5")
    return net


def dma9() -> Network:
    return dma_network([25] * 9, seed=9, head=85.0, lengths=(50.0, 150.0), name="dma9")


def large853() -> Network:
    sizes = [95] * 8 + [93]
    return dma_network(sizes, seed=853, head=90.0, lengths=(20.0, 110.0), demand_range=(5e-5, 2e-4), name="large853")


BUILDERS = {
    "single_pipe": lambda: single_pipe(50.0, 0.0),
    "triangle": triangle,
    "dma3": dma3,
    "dma5": dma5,
    "dma9": dma9,
    "large853": large853,
}
