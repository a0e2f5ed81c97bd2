"""Generic hybrid-system executor over a directed cycle of domains.

Continuous arcs are integrated with the shared RK45 kernel; guard crossings
are localized by bisection on the dense output, resets are applied, and the
whole trajectory (including per-sample probe data such as torques and contact
forces) is recorded for logging.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from gaitlab.numerics.ode import IntegrationError, integrate

ZENO_DT = 1e-6


class SimulationError(RuntimeError):
    pass


class NoEventError(SimulationError):
    """Continuous arc hit max_time without reaching its guard."""

    def __init__(self, message, arc=None):
        super().__init__(message)
        self.arc = arc


class ZenoError(SimulationError):
    """Two consecutive events closer than the Zeno window."""


@dataclass
class Edge:
    target: str
    guard: Callable[[np.ndarray], float]          # signed height, event at 0 descending
    reset: Callable[[np.ndarray], np.ndarray]
    armed: Optional[Callable[[np.ndarray], bool]] = None  # extra validity predicate


@dataclass
class Vertex:
    name: str
    field: Callable[[float, np.ndarray], np.ndarray]
    edge: Edge
    # optional per-sample probe for logging: (t, x) -> {column: value}
    probe: Optional[Callable[[float, np.ndarray], dict]] = None
    # optional quadratures integrated along the arc: {name: fn(t, x)}
    quads: dict = field(default_factory=dict)


@dataclass
class HybridSystemSpec:
    vertices: dict[str, Vertex]
    start: str

    def __post_init__(self):
        for name, v in self.vertices.items():
            if v.edge.target not in self.vertices:
                raise ValueError(f"edge of '{name}' targets unknown vertex '{v.edge.target}'")
        targets = {v.edge.target for v in self.vertices.values()}
        if targets != set(self.vertices):
            raise ValueError("edges must form a single directed cycle covering all vertices")


@dataclass
class Arc:
    vertex: str
    t: np.ndarray
    x: np.ndarray
    probes: dict = field(default_factory=dict)      # column -> array
    quads: dict = field(default_factory=dict)       # name -> integrated value
    event_time: Optional[float] = None
    pre_event: Optional[np.ndarray] = None
    post_event: Optional[np.ndarray] = None


@dataclass
class HybridTrajectory:
    arcs: list = field(default_factory=list)

    @property
    def events(self):
        return [(a.event_time, a.pre_event, a.post_event) for a in self.arcs
                if a.event_time is not None]

    def section_states(self) -> list[np.ndarray]:
        """Post-reset states, one per completed step."""
        return [a.post_event for a in self.arcs if a.post_event is not None]

    @property
    def total_time(self) -> float:
        return sum(float(a.t[-1] - a.t[0]) for a in self.arcs)


def simulate_arc(
    spec: HybridSystemSpec,
    vertex: str,
    x0: np.ndarray,
    max_time: float,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    t0: float = 0.0,
    sample_dt: Optional[float] = None,
) -> Arc:
    """Integrate one continuous arc until the vertex's guard fires.

    Returns the arc with event data; if no event occurs within max_time the
    arc is returned with event_time=None (callers that require an event, such
    as simulate_steps, treat that as a failure).  sample_dt resamples the arc
    on a uniform grid from the dense output (solver steps otherwise).
    """
    v = spec.vertices[vertex]
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    quad_names = list(v.quads)

    if quad_names:
        def f_aug(t, z):
            dx = v.field(t, z[:n])
            dw = [v.quads[name](t, z[:n]) for name in quad_names]
            return np.concatenate([np.asarray(dx, dtype=float), dw])
        z0 = np.concatenate([x0, np.zeros(len(quad_names))])
    else:
        f_aug = v.field
        z0 = x0

    try:
        res = integrate(
            f_aug,
            z0,
            (0.0, max_time),
            rtol=rtol,
            atol=atol,
            event=lambda z: v.edge.guard(z[:n]),
            armed=(lambda z: v.edge.armed(z[:n])) if v.edge.armed is not None else None,
        )
    except IntegrationError as exc:
        raise SimulationError(f"integrator failed on vertex '{vertex}': {exc}") from exc

    if sample_dt is not None:
        t_end = res.t[-1]
        grid = np.arange(res.t[0], t_end, sample_dt)
        if grid.size == 0 or t_end - grid[-1] > 1e-12:
            grid = np.append(grid, t_end)
        z = np.array([res.sol(ti) for ti in grid])
        t = grid + t0
        x = z[:, :n]
    else:
        t = res.t + t0
        x = res.x[:, :n]
    quads = {name: float(res.x[-1, n + i]) for i, name in enumerate(quad_names)}

    probes = {}
    if v.probe is not None:
        rows = [v.probe(float(ti), xi) for ti, xi in zip(t - t0, x)]
        for key in rows[0]:
            probes[key] = np.array([r[key] for r in rows])

    arc = Arc(vertex=vertex, t=t, x=x, probes=probes, quads=quads)
    if res.terminated_by_event:
        arc.event_time = float(res.event_time) + t0
        arc.pre_event = res.event_state[:n]
    return arc


def simulate_steps(
    spec: HybridSystemSpec,
    x0: np.ndarray,
    n_steps: int,
    max_arc_time: float = 10.0,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    sample_dt: Optional[float] = None,
) -> HybridTrajectory:
    """Chain arcs and resets around the directed cycle.

    A "step" is one traversal of an edge; n_steps >= 1 required.  Raises
    NoEventError if any arc times out (e.g. the walker falls) and ZenoError if
    successive events bunch closer than the Zeno window.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    traj = HybridTrajectory()
    vertex = spec.start
    x = np.asarray(x0, dtype=float)
    t_clock = 0.0

    for k in range(n_steps):
        arc = simulate_arc(spec, vertex, x, max_arc_time, rtol=rtol, atol=atol,
                           t0=t_clock, sample_dt=sample_dt)
        if arc.event_time is None:
            raise NoEventError(
                f"no guard event within {max_arc_time} s on step {k + 1} (vertex '{vertex}')",
                arc=arc,
            )
        if arc.event_time - t_clock < ZENO_DT:
            raise ZenoError(
                f"inter-event time {arc.event_time - t_clock:.3e} s below Zeno window on step {k + 1}"
            )
        edge = spec.vertices[vertex].edge
        arc.post_event = np.asarray(edge.reset(arc.pre_event), dtype=float)
        traj.arcs.append(arc)
        vertex = edge.target
        x = arc.post_event
        t_clock = arc.event_time

    return traj
