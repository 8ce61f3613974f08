"""Localization on a photographic plate.

A 1D packet crosses a row of detector cells.  Each cell is one
dissociation channel; all of them become asymptotic together once the
packet has passed, so a single categorical draw decides which cell (if
any) fires.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..numerics import Grid, WaveFunction, gaussian_profile, normalize


@dataclass(frozen=True)
class PacketComponent:
    x0: float
    p0: float = 0.0
    sigma: float = 1.0
    weight: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "weight", complex(self.weight))


@dataclass(frozen=True)
class PlateConfig:
    """Packet over the plate, detector cells and coupling efficiency.

    ``cells`` holds ``(centre, width)`` pairs; the packet is a normalized
    superposition of Gaussian components on a line of ``n_points`` spanning
    ``length``.
    """

    packet: tuple[PacketComponent, ...] = (PacketComponent(0.0, 0.0, 2.0),)
    cells: tuple[tuple[float, float], ...] = tuple((-7.5 + i, 1.0) for i in range(16))
    efficiency: float = 1.0
    n_points: int = 1024
    length: float = 40.0

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise ConfigError(f"efficiency must lie in (0, 1], got {self.efficiency!r}", "plate.efficiency")
        if not self.cells:
            raise ConfigError("need at least one detector cell", "plate.cells")
        if not self.packet:
            raise ConfigError("need at least one packet component", "plate.packet")
        spans = sorted((c - w / 2, c + w / 2) for c, w in self.cells)
        for lo, hi in spans:
            if not hi > lo:
                raise ConfigError("cell widths must be positive", "plate.cells")
        for (_, hi), (lo, _) in zip(spans, spans[1:]):
            if lo < hi - 1e-12:
                raise ConfigError("detector cells overlap", "plate.cells")
        half = self.length / 2
        if spans[0][0] < -half or spans[-1][1] > half:
            raise ConfigError("detector cells extend beyond the grid", "plate.cells")

    @property
    def grid(self) -> Grid:
        return Grid.line(self.n_points, self.length)

    def wavefunction(self) -> WaveFunction:
        g = self.grid
        ax = g.axes[0]
        amp = sum(complex(c.weight) * gaussian_profile(ax, c.x0, c.p0, c.sigma) for c in self.packet)
        return normalize(WaveFunction(g, amp))


def site_probabilities(cfg: PlateConfig, psi: WaveFunction | None = None) -> np.ndarray:
    """``p_i = eta * integral over cell i of |psi|^2``, with ``p_none`` appended last."""
    psi = cfg.wavefunction() if psi is None else psi
    ax = psi.grid.axes[0]
    x = ax.coords
    rho = np.abs(psi.amplitudes) ** 2
    # trapezoid cumulative mass, interpolated at the cell edges
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * ax.dx)])
    edges = np.array([(c - w / 2, c + w / 2) for c, w in cfg.cells])
    F = np.interp(edges, x, cum)
    p = (F[:, 1] - F[:, 0]) * cfg.efficiency
    total = p.sum()
    if total > 1 + 1e-12:
        raise ConfigError(f"cell probabilities sum to {total!r} > 1", "plate.cells")
    return np.append(p, max(0.0, 1.0 - total))


def draw_site(probs: np.ndarray, u: float) -> int | None:
    """Categorical outcome for one draw ``u``; ``None`` when no cell fires."""
    cum = np.cumsum(probs[:-1])
    i = int(np.searchsorted(cum, u, side="right"))
    return i if i < len(probs) - 1 else None


def run_plate(cfg: PlateConfig, rng: np.random.Generator, probs: np.ndarray | None = None) -> int | None:
    """One passage of the packet: the index of the single dissociated site, or ``None``."""
    probs = site_probabilities(cfg) if probs is None else probs
    return draw_site(probs, float(rng.random()))
