"""Unit-sphere chart, tangent-frame operators and geometry-compatible fluxes.

Chart coordinates are scaled: longitude ``lam`` in [-1, 1] maps to the angle
``pi * lam`` and latitude ``phi`` in [-1, 1] maps to ``pi * phi / 2``. All
functions accept scalars or numpy arrays and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

POLE_EPS = 1e-9
# sampling and quadrature never go closer to a pole than this in |phi|
PHI_GUARD = 1.0 - 1e-6


class SingularityError(ValueError):
    """Evaluation too close to a pole of the chart."""


@dataclass(frozen=True)
class ChartPoint:
    lam: float
    phi: float
    t: float = 0.0

    def __post_init__(self):
        if abs(self.lam) > 1.0 or abs(self.phi) > 1.0 or self.t < 0.0:
            raise ValueError(f"point outside chart: {self}")


@dataclass(frozen=True)
class Domain:
    lambda_range: tuple[float, float] = (-1.0, 1.0)
    phi_range: tuple[float, float] = (-0.5, 0.5)
    periodic_lambda: bool = False
    T: float = 1.0

    def __post_init__(self):
        lo, hi = self.phi_range
        if not (-1.0 <= lo < hi <= 1.0):
            raise ValueError(f"phi_range {self.phi_range} not inside [-1, 1]")
        if self.periodic_lambda and tuple(self.lambda_range) != (-1.0, 1.0):
            raise ValueError("periodic longitude requires lambda_range = (-1, 1)")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def area(self) -> float:
        """Surface area of the chart rectangle."""
        (a, b), (lo, hi) = self.lambda_range, self.phi_range
        return np.pi * (b - a) * (np.sin(np.pi * hi / 2) - np.sin(np.pi * lo / 2))

    @property
    def volume(self) -> float:
        return self.area * self.T

    def edge_lengths(self) -> dict[str, float]:
        """Lengths of the spatial boundary pieces (meridian and latitude edges)."""
        (a, b), (lo, hi) = self.lambda_range, self.phi_range
        edges = {}
        if not self.periodic_lambda:
            edges["lam_lo"] = edges["lam_hi"] = np.pi / 2 * (hi - lo)
        if lo > -1.0:
            edges["phi_lo"] = np.pi * np.cos(np.pi * lo / 2) * (b - a)
        if hi < 1.0:
            edges["phi_hi"] = np.pi * np.cos(np.pi * hi / 2) * (b - a)
        return edges

    @property
    def boundary_length(self) -> float:
        return float(sum(self.edge_lengths().values()))


FULL_SPHERE = Domain(phi_range=(-1.0, 1.0), periodic_lambda=True)


def embed(lam, phi):
    """Map chart coordinates to points of the unit sphere in R^3 (last axis)."""
    lam, phi = np.asarray(lam, float), np.asarray(phi, float)
    c = np.cos(np.pi * phi / 2)
    return np.stack([c * np.cos(np.pi * lam), c * np.sin(np.pi * lam), np.sin(np.pi * phi / 2)], axis=-1)


def tangent_basis(lam, phi):
    """Unit tangent vectors (i_lam, i_phi) as arrays with a trailing axis of 3."""
    lam, phi = np.asarray(lam, float), np.asarray(phi, float)
    s = np.sin(np.pi * phi / 2)
    i_lam = np.stack([-np.sin(np.pi * lam), np.cos(np.pi * lam), np.zeros_like(lam * phi)], axis=-1)
    i_phi = np.stack(
        [-s * np.cos(np.pi * lam), -s * np.sin(np.pi * lam), np.cos(np.pi * phi / 2) + 0 * lam], axis=-1
    )
    return i_lam, i_phi


def _cos_checked(phi):
    c = np.cos(np.pi * np.asarray(phi, float) / 2)
    if np.any(c < POLE_EPS):
        raise SingularityError("chart evaluation at a pole")
    return c


def grad_g(dxi_dlam, dxi_dphi, phi):
    """Surface gradient components along (i_lam, i_phi) from chart partials."""
    c = _cos_checked(phi)
    return np.asarray(dxi_dlam) / (np.pi * c), (2.0 / np.pi) * np.asarray(dxi_dphi)


def div_g(f_lam, f_phi, df_lam_dlam, df_phi_dphi, phi):
    """Surface divergence of ``f_lam i_lam + f_phi i_phi``.

    Needs the field and its chart partials d f_lam / d lam and d f_phi / d phi.
    """
    c = _cos_checked(phi)
    s = np.sin(np.pi * np.asarray(phi, float) / 2)
    # d/dphi (f_phi cos(pi phi/2)) by the product rule
    d_phi_term = np.asarray(df_phi_dphi) * c - np.asarray(f_phi) * (np.pi / 2) * s
    return ((2.0 / np.pi) * d_phi_term + (1.0 / np.pi) * np.asarray(df_lam_dlam)) / c


def area_weight(phi):
    """Surface density per unit d lam d phi."""
    return (np.pi ** 2 / 2) * np.cos(np.pi * np.asarray(phi, float) / 2)


@dataclass(frozen=True)
class FluxSpec:
    """Ambient flux Phi(u) = f1 i1 + f2 i2 + f3 i3 with its u-derivatives."""

    f1: Callable = field(default=lambda u: 0.0 * u)
    f2: Callable = field(default=lambda u: 0.0 * u)
    f3: Callable = field(default=lambda u: 0.0 * u)
    df1: Callable = field(default=lambda u: 0.0 * u)
    df2: Callable = field(default=lambda u: 0.0 * u)
    df3: Callable = field(default=lambda u: 0.0 * u)
    descriptor: str = "zero"


def burgers_flux() -> FluxSpec:
    """f1 = f2 = 0, f3 = (pi/2) u^2: reduces to Burgers' equation in lam."""
    return FluxSpec(
        f3=lambda u: (np.pi / 2) * np.asarray(u, float) ** 2,
        df3=lambda u: np.pi * np.asarray(u, float),
        descriptor="f3=pi/2*u^2",
    )


def flux_components(u, lam, phi, spec: FluxSpec):
    """Tangent components (f_lam, f_phi) of n(x) x Phi(u)."""
    u, lam, phi = (np.asarray(a, float) for a in (u, lam, phi))
    s, c = np.sin(np.pi * phi / 2), np.cos(np.pi * phi / 2)
    f1, f2, f3 = spec.f1(u), spec.f2(u), spec.f3(u)
    f_lam = f1 * s * np.cos(np.pi * lam) + f2 * s * np.sin(np.pi * lam) + f3 * c
    f_phi = -f1 * np.sin(np.pi * lam) + f2 * np.cos(np.pi * lam)
    return f_lam, f_phi


def flux_field_partials(u, lam, phi, spec: FluxSpec):
    """Chart partials (d f_lam / d lam, d f_phi / d phi) at a frozen state u.

    Closed form; with u held constant the phi-component has no phi dependence.
    """
    u, lam, phi = (np.asarray(a, float) for a in (u, lam, phi))
    s = np.sin(np.pi * phi / 2)
    f1, f2 = spec.f1(u), spec.f2(u)
    dflam = np.pi * s * (-f1 * np.sin(np.pi * lam) + f2 * np.cos(np.pi * lam))
    dfphi = np.zeros_like(dflam)
    return dflam, dfphi


def frozen_state_divergence(u, lam, phi, spec: FluxSpec):
    """div_g f_x(u) at a frozen state; zero for geometry-compatible fluxes."""
    f_lam, f_phi = flux_components(u, lam, phi, spec)
    dflam, dfphi = flux_field_partials(u, lam, phi, spec)
    return div_g(f_lam, f_phi, dflam, dfphi, phi)
