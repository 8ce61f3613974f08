"""Expanding-spheres toy model.

Each sphere keeps its centre and grows at speed ``v``.  When two spheres
touch, both collapse to minute spheres of radius ``r_min`` whose new
centres are drawn inside the pre-collapse balls, and both start growing
again.  Between events everything is deterministic, so the event log
reproduces the state at any time.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class SphereToyConfig:
    """Initial spheres and collapse rules.

    ``relocation`` is ``"uniform"`` (density constant over the ball) or
    ``"gaussian"`` (density ``exp(-s^2 / 2 (scale R)^2)`` truncated to the ball
    of radius ``R``).
    """

    centers: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
    radii: tuple[float, ...] = (0.0, 0.0)
    speed: float = 1.0
    r_min: float = 1e-3
    relocation: str = "uniform"
    relocation_scale: float = 0.5
    horizon: float = 10.0
    max_events: int = 100_000

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.ndim != 2 or c.shape[1] != 3 or len(c) < 2:
            raise ConfigError("need at least two 3D centres", "sphere_toy.centers")
        if len(self.radii) != len(c) or min(self.radii) < 0:
            raise ConfigError("need one nonnegative radius per sphere", "sphere_toy.radii")
        if not self.speed > 0:
            raise ConfigError("growth speed must be positive", "sphere_toy.speed")
        if self.relocation not in ("uniform", "gaussian"):
            raise ConfigError(f"unknown relocation density {self.relocation!r}", "sphere_toy.relocation")
        if not self.relocation_scale > 0:
            raise ConfigError("relocation_scale must be positive", "sphere_toy.relocation_scale")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive", "sphere_toy.horizon")
        gaps = _gaps(c, np.asarray(self.radii, dtype=float))
        if gaps.min() <= 0:
            raise ConfigError("spheres must start disjoint", "sphere_toy.radii")
        d = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
        if not 0 < self.r_min < 1e-2 * d[np.triu_indices(len(c), 1)].min():
            raise ConfigError("r_min must be positive and minute compared with the separations",
                              "sphere_toy.r_min")


def _gaps(c: np.ndarray, r: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(c[:, None] - c[None, :], axis=-1)
    iu = np.triu_indices(len(c), 1)
    return (d - r[:, None] - r[None, :])[iu]


def contact_time(xi, xj, ri: float, rj: float, v: float, now: float = 0.0) -> float:
    """When two spheres growing at ``v`` from radii ``ri, rj`` at ``now`` first touch."""
    gap = float(np.linalg.norm(np.asarray(xi) - np.asarray(xj))) - ri - rj
    return now + max(gap, 0.0) / (2.0 * v)


def sample_in_ball(rng: np.random.Generator, center: np.ndarray, radius: float, density: str = "uniform",
                   scale: float = 0.5) -> np.ndarray:
    if density == "uniform":
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        return center + radius * rng.random() ** (1 / 3) * direction
    while True:
        x = rng.normal(scale=scale * radius, size=3)
        if np.dot(x, x) <= radius**2:
            return center + x


@dataclass(frozen=True)
class SphereEvent:
    t: float
    pair: tuple[int, int]
    old_centers: tuple[tuple[float, ...], tuple[float, ...]]
    old_radii: tuple[float, float]
    new_centers: tuple[tuple[float, ...], tuple[float, ...]]


@dataclass
class SphereState:
    centers: np.ndarray
    radii: np.ndarray  # radii at time ``since``
    since: np.ndarray

    def radius(self, i: int, t: float, v: float) -> float:
        return self.radii[i] + v * (t - self.since[i])


@dataclass
class SphereRun:
    events: list[SphereEvent] = field(default_factory=list)
    final: SphereState | None = None


def _initial_state(cfg: SphereToyConfig) -> SphereState:
    n = len(cfg.centers)
    return SphereState(np.asarray(cfg.centers, dtype=float).copy(), np.asarray(cfg.radii, dtype=float).copy(),
                       np.zeros(n))


def run_sphere_toy(cfg: SphereToyConfig, rng: np.random.Generator, horizon: float | None = None) -> SphereRun:
    """Event-driven run up to ``horizon`` (default: the config's)."""
    horizon = cfg.horizon if horizon is None else horizon
    v = cfg.speed
    st = _initial_state(cfg)
    n = len(st.centers)
    version = np.zeros(n, dtype=int)
    queue: list = []

    def push(i, j, now):
        t = contact_time(st.centers[i], st.centers[j], st.radius(i, now, v), st.radius(j, now, v), v, now)
        heapq.heappush(queue, (t, i, j, version[i], version[j]))

    for i in range(n):
        for j in range(i + 1, n):
            push(i, j, 0.0)
    run = SphereRun()
    while queue and len(run.events) < cfg.max_events:
        t, i, j, vi, vj = heapq.heappop(queue)
        if vi != version[i] or vj != version[j]:
            continue
        if t > horizon:
            break
        old_c = (tuple(st.centers[i]), tuple(st.centers[j]))
        old_r = (st.radius(i, t, v), st.radius(j, t, v))
        for k, r in zip((i, j), old_r):
            st.centers[k] = sample_in_ball(rng, st.centers[k], r, cfg.relocation, cfg.relocation_scale)
            st.radii[k] = cfg.r_min
            st.since[k] = t
            version[k] += 1
        run.events.append(SphereEvent(t, (i, j), old_c, old_r, (tuple(st.centers[i]), tuple(st.centers[j]))))
        for k in (i, j):
            for m in range(n):
                if m != k and not (k == j and m == i):
                    push(min(k, m), max(k, m), t)
    run.final = st
    return run


def replay(cfg: SphereToyConfig, events: list[SphereEvent], t: float) -> tuple[np.ndarray, np.ndarray]:
    """Centres and radii at time ``t`` rebuilt from the event log alone."""
    st = _initial_state(cfg)
    for ev in events:
        if ev.t > t:
            break
        for k, c in zip(ev.pair, ev.new_centers):
            st.centers[k] = c
            st.radii[k] = cfg.r_min
            st.since[k] = ev.t
    radii = np.array([st.radius(i, t, cfg.speed) for i in range(len(st.centers))])
    return st.centers.copy(), radii
