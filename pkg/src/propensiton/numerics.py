"""Grids, wavefunctions and the basic linear algebra on them.

Everything lives on uniform periodic grids with one or two axes.  Inner
products are Riemann sums with the product of the axis spacings as weight,
which makes the orthonormal DFT exactly unitary with respect to them.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy.special import erfc

from .errors import (
    BoundaryMassError,
    GridMismatchError,
    NormalizationError,
    NullStateError,
    ResolutionError,
)

NORM_TOL = 1e-10
BOUNDARY_FRACTION = 0.05
BOUNDARY_TOL = 1e-6


@dataclass(frozen=True)
class UnitsConfig:
    hbar: float = 1.0
    length: str = "a.u."
    time: str = "a.u."
    mass: str = "a.u."

    def __post_init__(self):
        if not self.hbar > 0:
            raise ValueError("hbar must be positive")


@dataclass(frozen=True)
class Axis:
    n: int
    x_min: float
    dx: float
    label: str = "x"

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"axis {self.label!r}: n_points must be a power of two >= 8, got {self.n}")
        if not self.dx > 0:
            raise ValueError(f"axis {self.label!r}: dx must be positive")

    @classmethod
    def centered(cls, n: int, length: float, label: str = "x") -> "Axis":
        """Axis of ``n`` points spanning ``[-length/2, length/2)``."""
        if n < 1:
            raise ValueError(f"axis {label!r}: n_points must be a power of two >= 8, got {n}")
        return cls(n, -0.5 * length, length / n, label)

    @property
    def length(self) -> float:
        return self.n * self.dx

    @property
    def x_max(self) -> float:
        return self.x_min + (self.n - 1) * self.dx

    @property
    def coords(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.dx)

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / (self.n * self.dx)


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        if len(self.axes) not in (1, 2):
            raise ValueError("only 1D and 2D grids are supported")
        labels = [a.label for a in self.axes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate axis labels {labels}")

    @classmethod
    def line(cls, n: int, length: float, label: str = "x") -> "Grid":
        return cls((Axis.centered(n, length, label),))

    @classmethod
    def plane(cls, n0: int, length0: float, n1: int, length1: float,
              labels: tuple[str, str] = ("R", "r")) -> "Grid":
        return cls((Axis.centered(n0, length0, labels[0]), Axis.centered(n1, length1, labels[1])))

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.axes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(a.label for a in self.axes)

    @property
    def weight(self) -> float:
        return float(np.prod([a.dx for a in self.axes]))

    def axis_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise GridMismatchError(f"grid has no axis {label!r} (axes: {self.labels})") from None

    def axis(self, label: str) -> Axis:
        return self.axes[self.axis_index(label)]

    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[a.coords for a in self.axes], indexing="ij"))

    def kmesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[a.k for a in self.axes], indexing="ij"))


@dataclass
class WaveFunction:
    """Complex field on a grid.

    ``space`` is ``"x"`` for position amplitudes and ``"k"`` for the output of
    :func:`momentum_transform`.  The momentum representation carries the
    same discrete norm as the position one when both use the grid weight.
    """

    grid: Grid
    amplitudes: np.ndarray
    normalized: bool = False
    space: str = "x"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.shape != self.grid.shape:
            raise GridMismatchError(
                f"amplitude shape {self.amplitudes.shape} does not match grid {self.grid.shape}")
        if self.normalized and abs(norm(self) - 1.0) > NORM_TOL:
            raise NormalizationError(f"state flagged normalized has norm {norm(self)!r}")

    def copy(self) -> "WaveFunction":
        return replace(self, amplitudes=self.amplitudes.copy(), meta=dict(self.meta))

    def with_amplitudes(self, amplitudes: np.ndarray, normalized: bool = False) -> "WaveFunction":
        return WaveFunction(self.grid, amplitudes, normalized=normalized, space=self.space)

    def __mul__(self, scalar):
        return self.with_amplitudes(self.amplitudes * scalar)

    __rmul__ = __mul__


def _check_same_grid(a: WaveFunction, b: WaveFunction):
    if a.grid != b.grid:
        raise GridMismatchError("states live on different grids")
    if a.space != b.space:
        raise GridMismatchError(f"cannot combine {a.space}-space and {b.space}-space states")


def inner_product(bra: WaveFunction, ket: WaveFunction) -> complex:
    """Discrete <bra|ket> with the bra conjugated."""
    _check_same_grid(bra, ket)
    return complex(np.vdot(bra.amplitudes, ket.amplitudes) * bra.grid.weight)


def norm(psi: WaveFunction) -> float:
    a = psi.amplitudes
    return float(np.sqrt(np.vdot(a, a).real * psi.grid.weight))


def normalize(psi: WaveFunction) -> WaveFunction:
    nrm = norm(psi)
    if nrm == 0.0 or not np.isfinite(nrm):
        raise NullStateError("null state: cannot normalize a zero-norm field")
    return WaveFunction(psi.grid, psi.amplitudes / nrm, normalized=True, space=psi.space)


def momentum_transform(psi: WaveFunction, direction: str = "forward") -> WaveFunction:
    """Orthonormal DFT between position and momentum amplitudes.

    Bin ``j`` of the forward transform corresponds to ``grid.axes[i].k[j]``.
    """
    if direction == "forward":
        if psi.space != "x":
            raise ValueError("forward transform expects a position-space state")
        out = sfft.fftn(psi.amplitudes, norm="ortho")
        space = "k"
    elif direction == "inverse":
        if psi.space != "k":
            raise ValueError("inverse transform expects a momentum-space state")
        out = sfft.ifftn(psi.amplitudes, norm="ortho")
        space = "x"
    else:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return WaveFunction(psi.grid, out, space=space)


def gaussian_tail_outside(axis: Axis, x0: float, sigma: float) -> float:
    """Probability mass of |psi|^2 (std ``sigma``) lying outside the axis span."""
    lo = (x0 - axis.x_min) / (sigma * np.sqrt(2.0))
    hi = (axis.x_min + axis.length - x0) / (sigma * np.sqrt(2.0))
    return 0.5 * (erfc(lo) + erfc(hi))


def gaussian_profile(axis: Axis, x0: float, p0: float, sigma: float, hbar: float = 1.0) -> np.ndarray:
    """Normalized 1D Gaussian amplitude; density has standard deviation ``sigma``."""
    if sigma <= 2.0 * axis.dx:
        raise ResolutionError(
            f"axis {axis.label!r}: width sigma={sigma} is under-resolved (needs > 2*dx = {2 * axis.dx})")
    tail = gaussian_tail_outside(axis, x0, sigma)
    if tail >= 1e-8:
        raise ResolutionError(
            f"axis {axis.label!r}: packet at x0={x0} with sigma={sigma} leaks {tail:.3e} of its mass "
            f"outside [{axis.x_min}, {axis.x_min + axis.length})")
    x = axis.coords
    amp = np.exp(-((x - x0) ** 2) / (4.0 * sigma**2) + 1j * (p0 / hbar) * x)
    return amp / np.sqrt(np.sum(np.abs(amp) ** 2) * axis.dx)


def gaussian_packet(grid: Grid, x0, p0, sigma, hbar: float = 1.0) -> WaveFunction:
    """Gaussian wave packet; for 2D grids pass one value per axis."""
    x0, p0, sigma = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (x0, p0, sigma))
    if not (len(x0) == len(p0) == len(sigma) == grid.dims):
        raise ValueError(f"need one (x0, p0, sigma) per axis for a {grid.dims}D grid")
    amp = np.ones((), dtype=complex)
    for ax, c, p, s in zip(grid.axes, x0, p0, sigma):
        amp = np.multiply.outer(amp, gaussian_profile(ax, c, p, s, hbar))
    return normalize(WaveFunction(grid, amp))


def product_state(grid: Grid, *factors: np.ndarray) -> WaveFunction:
    """Outer product of one 1D amplitude array per axis."""
    if len(factors) != grid.dims:
        raise ValueError("need one factor per axis")
    amp = np.ones((), dtype=complex)
    for f in factors:
        amp = np.multiply.outer(amp, np.asarray(f, dtype=complex))
    return WaveFunction(grid, amp)


def position_density(psi: WaveFunction, keep: str | Sequence[str] | None = None) -> np.ndarray:
    """|psi|^2, optionally marginalized onto the axes named in ``keep``."""
    rho = np.abs(psi.amplitudes) ** 2
    if keep is None:
        return rho
    keep = (keep,) if isinstance(keep, str) else tuple(keep)
    idx = [psi.grid.axis_index(lbl) for lbl in keep]
    drop = tuple(i for i in range(psi.grid.dims) if i not in idx)
    if drop:
        rho = rho.sum(axis=drop) * float(np.prod([psi.grid.axes[i].dx for i in drop]))
    return rho


def _require_normalized(psi: WaveFunction, tol: float = 1e-8):
    n = norm(psi)
    if abs(n - 1.0) > tol:
        raise NormalizationError(f"expectation values need a normalized state (norm = {n!r})")


def observable_expectation(psi: WaveFunction, which: str, hamiltonian=None, axis: str | None = None,
                           hbar: float = 1.0) -> float:
    """<x>, <p> along one axis, or <H> for a :class:`~propensiton.dynamics.HamiltonianSpec`."""
    _require_normalized(psi)
    if which == "energy":
        if hamiltonian is None:
            raise ValueError("energy expectation needs a Hamiltonian")
        from .dynamics import apply_hamiltonian

        return inner_product(psi, apply_hamiltonian(hamiltonian, psi)).real
    if axis is None:
        if psi.grid.dims != 1:
            raise ValueError("name the axis for a multi-dimensional state")
        axis = psi.grid.labels[0]
    i = psi.grid.axis_index(axis)
    ax = psi.grid.axes[i]
    if which == "position":
        rho = position_density(psi, keep=axis)
        return float(np.sum(ax.coords * rho) * ax.dx)
    if which == "momentum":
        phat = sfft.fftn(psi.amplitudes, norm="ortho")
        w = np.abs(phat) ** 2
        shape = [1] * psi.grid.dims
        shape[i] = ax.n
        return float(hbar * np.sum(w * ax.k.reshape(shape)) / np.sum(w))
    raise ValueError(f"unknown observable {which!r}")


def boundary_mass(psi: WaveFunction, fraction: float = BOUNDARY_FRACTION) -> float:
    """Largest probability mass found in the outer ``fraction`` of any axis (both ends)."""
    rho = np.abs(psi.amplitudes) ** 2 * psi.grid.weight
    worst = 0.0
    for i, ax in enumerate(psi.grid.axes):
        m = max(1, int(round(fraction * ax.n)))
        prof = rho.sum(axis=tuple(j for j in range(psi.grid.dims) if j != i)) if psi.grid.dims > 1 else rho
        worst = max(worst, float(prof[:m].sum() + prof[-m:].sum()))
    return worst


def check_boundary(psi: WaveFunction, tol: float = BOUNDARY_TOL, fraction: float = BOUNDARY_FRACTION,
                   t: float | None = None):
    m = boundary_mass(psi, fraction)
    if m > tol:
        when = "" if t is None else f" at t={t:.6g}"
        raise BoundaryMassError(
            f"boundary-mass guard breached{when}: {m:.3e} of the density lies in the outer "
            f"{fraction:.0%} of the box (tolerance {tol:.1e}); enlarge the box or shorten the run",
            t=t, mass=m)
