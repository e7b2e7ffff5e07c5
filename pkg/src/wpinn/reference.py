"""Reference entropy solutions for the spherical Burgers benchmarks.

With f3(u) = (pi/2) u^2 and f1 = f2 = 0 the sphere problem reduces to
Burgers' equation ``u_t + (u^2/2)_lam = 0`` in the longitude, and
``u(lam, phi, t) = u1d(lam, t) * uhat(phi)`` solves the sphere problem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from wpinn.autodiff import ConfigurationError
from wpinn.geometry import Domain

EXPERIMENTS = ("standing", "moving", "rarefaction", "sine")


class NumericalError(RuntimeError):
    """Raised when a numerical procedure cannot proceed (CFL violation, zero norm)."""


def initial_1d(name: str, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if name == "standing":
        return np.where(lam < 0, 1.0, -1.0)
    if name == "moving":
        return np.where(lam < 0, 1.0, 0.0)
    if name == "rarefaction":
        return np.where(lam < 0, -1.0, 1.0)
    if name == "sine":
        return -np.sin(np.pi * lam)
    raise ConfigurationError(f"unknown experiment {name!r}")


def exact_1d(name: str, lam, t) -> np.ndarray:
    """Closed-form entropy solution of the three Riemann-type benchmarks."""
    lam = np.asarray(lam, dtype=np.float64)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), np.broadcast(lam, np.asarray(t)).shape)
    lam = np.broadcast_to(lam, t.shape)
    if name == "standing":
        return np.where(lam < 0, 1.0, -1.0)
    if name == "moving":
        return np.where(lam < t / 2, 1.0, 0.0)
    if name == "rarefaction":
        safe_t = np.where(t > 0, t, 1.0)
        fan = np.clip(lam / safe_t, -1.0, 1.0)
        return np.where(t > 0, fan, initial_1d(name, lam))
    if name == "sine":
        raise ConfigurationError("the sine wave has no closed form; use godunov_1d")
    raise ConfigurationError(f"unknown experiment {name!r}")


# -- Godunov ---------------------------------------------------------------


def burgers_godunov_flux(ul: np.ndarray, ur: np.ndarray) -> np.ndarray:
    """Exact Riemann (Godunov) flux for f(u) = u^2 / 2."""
    return np.maximum(0.5 * np.maximum(ul, 0.0) ** 2, 0.5 * np.minimum(ur, 0.0) ** 2)


@dataclass
class GodunovRun:
    """Cell averages on a periodic grid, stored at ``times``."""

    x_edges: np.ndarray
    times: np.ndarray
    u: np.ndarray  # (len(times), cells) or (len(times), batch, cells)
    dts: np.ndarray
    cfl: float

    @property
    def centers(self):
        return 0.5 * (self.x_edges[1:] + self.x_edges[:-1])

    @property
    def dx(self) -> float:
        return float(self.x_edges[1] - self.x_edges[0])


def godunov_1d(u0, cells: int, T: float, cfl: float = 0.9, n_slices: int = 65,
               domain=(-1.0, 1.0), track_steps: bool = False, step_hook=None) -> GodunovRun:
    """First-order Godunov scheme for Burgers' equation with periodic boundaries.

    ``u0`` is a callable of the cell centres or an array of cell averages; an
    array of shape (batch, cells) evolves several data with shared time steps.
    The solution is stored at ``n_slices`` equispaced times (steps are shortened
    to land on them). ``step_hook(u_old, u_new)`` is called after every step.
    """
    if cells < 16:
        raise ConfigurationError("need at least 16 cells")
    if not 0.0 < cfl <= 0.9:
        raise ConfigurationError("cfl must lie in (0, 0.9]")
    a, b = domain
    edges = np.linspace(a, b, cells + 1)
    centers = 0.5 * (edges[1:] + edges[:-1])
    dx = (b - a) / cells
    u = np.array(u0(centers) if callable(u0) else u0, dtype=np.float64)
    if u.shape[-1] != cells:
        raise ConfigurationError("initial data does not match the grid")
    times = np.linspace(0.0, T, n_slices)
    out = [u.copy()]
    dts = []
    t = 0.0
    for target in times[1:]:
        while t < target - 1e-14:
            speed = float(np.max(np.abs(u)))
            dt = cfl * dx / speed if speed > 0 else target - t
            dt = min(dt, target - t)
            if speed * dt / dx > 1.0 + 1e-12:
                raise NumericalError("CFL condition violated")
            flux = burgers_godunov_flux(u, np.roll(u, -1, axis=-1))  # at right faces
            new = u - dt / dx * (flux - np.roll(flux, 1, axis=-1))
            if not np.all(np.isfinite(new)):
                raise NumericalError("non-finite state in Godunov update")
            if step_hook is not None:
                step_hook(u, new)
            u = new
            t += dt
            if track_steps:
                dts.append(dt)
        out.append(u.copy())
    return GodunovRun(edges, times, np.array(out), np.array(dts), cfl)


@dataclass
class ReferenceSolution:
    """Evaluator of the 1D reference u(lam, t)."""

    kind: str  # "closed-form" | "godunov-grid"
    name: str
    run: GodunovRun | None = None

    def __call__(self, lam, t) -> np.ndarray:
        if self.kind == "closed-form":
            return exact_1d(self.name, lam, t)
        return _bilinear(self.run, lam, t)


def _bilinear(run: GodunovRun, lam, t) -> np.ndarray:
    lam, t = np.broadcast_arrays(np.asarray(lam, float), np.asarray(t, float))
    xc = run.centers
    dx = run.dx
    a = run.x_edges[0]
    length = run.x_edges[-1] - a
    # periodic interpolation between cell centres
    s = ((lam - a) % length) / dx - 0.5
    i0 = np.floor(s).astype(int)
    wx = s - i0
    n = len(xc)
    i0m, i1m = i0 % n, (i0 + 1) % n
    tt = np.clip(t, run.times[0], run.times[-1])
    dt = run.times[1] - run.times[0]
    k = np.clip(np.floor((tt - run.times[0]) / dt).astype(int), 0, len(run.times) - 2)
    wt = (tt - run.times[k]) / dt
    u = run.u

    def at(kk):
        return (1 - wx) * u[kk, i0m] + wx * u[kk, i1m]

    return (1 - wt) * at(k) + wt * at(k + 1)


# -- reference cache ----------------------------------------------------------


def save_reference(path, run: GodunovRun, flux_tag: str = "burgers") -> Path:
    """Binary cache: one JSON header line, then row-major float64 time slices."""
    path = Path(path)
    header = {
        "cells": int(run.u.shape[-1]),
        "T": float(run.times[-1]),
        "cfl": run.cfl,
        "flux": flux_tag,
        "slices": int(len(run.times)),
        "domain": [float(run.x_edges[0]), float(run.x_edges[-1])],
    }
    with path.open("wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(np.ascontiguousarray(run.u, dtype="<f8").tobytes())
    return path


def load_reference(path) -> GodunovRun:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype="<f8")
    u = data.reshape(header["slices"], header["cells"]).copy()
    edges = np.linspace(*header["domain"], header["cells"] + 1)
    return GodunovRun(edges, np.linspace(0.0, header["T"], header["slices"]), u, np.zeros(0), header["cfl"])


def default_cache_dir() -> Path:
    import os

    return Path(os.environ.get("WPINN_CACHE", Path.home() / ".cache" / "wpinn"))


def sine_reference(T: float = 0.5, cells: int = 8192, cfl: float = 0.9, n_slices: int = 129,
                   cache_dir=None) -> ReferenceSolution:
    """High-resolution Godunov reference for the sine wave, cached on disk."""
    cache_dir = default_cache_dir() if cache_dir is None else Path(cache_dir)
    path = cache_dir / f"sine_c{cells}_T{T:g}_cfl{cfl:g}_s{n_slices}.ref"
    run = None
    if path.exists():
        try:
            run = load_reference(path)
        except (ValueError, KeyError, json.JSONDecodeError):
            run = None
    if run is None:
        run = godunov_1d(lambda x: initial_1d("sine", x), cells, T, cfl, n_slices)
        try:
            cache_dir.mkdir(parents=True, exist_ok=True)
            save_reference(path, run)
        except OSError:
            pass
    return ReferenceSolution("godunov-grid", "sine", run)


# -- experiments --------------------------------------------------------------


DEFAULT_T = {"standing": 1.0, "moving": 1.0, "rarefaction": 1.0, "sine": 0.5}


@dataclass
class ExperimentSpec:
    name: str
    T: float
    domain: Domain
    reference: ReferenceSolution
    uhat: Callable = field(default=lambda phi: np.ones_like(np.asarray(phi, float)))

    @property
    def periodic(self) -> bool:
        return self.domain.periodic_lambda

    def u0(self, x: np.ndarray) -> np.ndarray:
        """Initial data on the sphere at points x = (lam, phi, t)."""
        x = np.atleast_2d(x)
        return initial_1d(self.name, x[:, 0]) * self.uhat(x[:, 1])

    def exact(self, x: np.ndarray) -> np.ndarray:
        """Lifted reference at space-time points x = (lam, phi, t)."""
        x = np.atleast_2d(x)
        return lift_to_sphere(self.reference, self.uhat, x)

    def u0_range(self) -> tuple[float, float]:
        lam = np.linspace(-1, 1, 4001)
        v = initial_1d(self.name, lam)
        return float(v.min()), float(v.max())


def get_experiment(name: str, T: float | None = None, cache_dir=None) -> ExperimentSpec:
    if name not in EXPERIMENTS:
        raise ConfigurationError(f"unknown experiment {name!r}; choose from {EXPERIMENTS}")
    T = DEFAULT_T[name] if T is None else float(T)
    periodic = name == "sine"
    domain = Domain((-1.0, 1.0), (-0.5, 0.5), periodic, T)
    if periodic:
        ref = sine_reference(T=T, cache_dir=cache_dir)
    else:
        ref = ReferenceSolution("closed-form", name)
    return ExperimentSpec(name, T, domain, ref)


def lift_to_sphere(ref: Callable, uhat: Callable, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    return ref(x[:, 0], x[:, 2]) * uhat(x[:, 1])


# -- error metric --------------------------------------------------------------


def quadrature_grid(domain: Domain, n_lam: int = 128, n_phi: int = 32, n_t: int = 32):
    """Midpoint tensor grid with area-time weights; returns (points (n, 3), weights)."""
    (a, b), (lo, hi) = domain.lambda_range, domain.phi_range
    lam = a + (b - a) * (np.arange(n_lam) + 0.5) / n_lam
    phi = lo + (hi - lo) * (np.arange(n_phi) + 0.5) / n_phi
    t = domain.T * (np.arange(n_t) + 0.5) / n_t
    L, P, Tt = np.meshgrid(lam, phi, t, indexing="ij")
    cell = (b - a) / n_lam * (hi - lo) / n_phi * domain.T / n_t
    w = (np.pi ** 2 / 2) * np.cos(np.pi * P / 2) * cell
    return np.column_stack([L.ravel(), P.ravel(), Tt.ravel()]), w.ravel()


def l1_test_error(u_pred: Callable, u_ref: Callable, domain: Domain, grid=(128, 32, 32)) -> float:
    """Relative L1 space-time error of ``u_pred`` against ``u_ref``."""
    pts, w = quadrature_grid(domain, *grid)
    ref = u_ref(pts)
    den = float(np.sum(w * np.abs(ref)))
    if den == 0.0:
        raise NumericalError("reference vanishes on the domain")
    return float(np.sum(w * np.abs(u_pred(pts) - ref)) / den)


# -- stability diagnostics ---------------------------------------------------


def total_variation(u: np.ndarray) -> np.ndarray:
    """Periodic discrete total variation along the last axis."""
    return np.abs(np.roll(u, -1, axis=-1) - u).sum(axis=-1)


@dataclass
class ContractionReport:
    times: np.ndarray
    distance: np.ndarray
    tv_u: np.ndarray
    tv_v: np.ndarray
    max_principle: bool
    l1_nonincreasing: bool
    tv_nonincreasing: bool

    @property
    def ok(self) -> bool:
        return self.max_principle and self.l1_nonincreasing and self.tv_nonincreasing


def l1_contraction_check(u0, v0, cells: int = 1024, T: float = 0.5, cfl: float = 0.9,
                         tol: float = 1e-12) -> ContractionReport:
    """Evolve two data with shared steps and check the discrete stability properties.

    Checks, on every step: the L1 distance does not grow, neither total
    variation grows, and the maximum principle holds.
    """
    edges = np.linspace(-1, 1, cells + 1)
    c = 0.5 * (edges[1:] + edges[:-1])
    pair = np.vstack([u0(c) if callable(u0) else u0, v0(c) if callable(v0) else v0])
    dx = 2.0 / cells
    bound = np.abs(pair).max(axis=-1)
    times, dist, tvu, tvv = [0.0], [float(np.abs(pair[0] - pair[1]).sum() * dx)], [], []
    tvu.append(float(total_variation(pair[0])))
    tvv.append(float(total_variation(pair[1])))
    flags = {"max": True, "l1": True, "tv": True}

    def hook(old, new):
        if np.any(np.abs(new).max(axis=-1) > bound + tol):
            flags["max"] = False
        if np.abs(new[0] - new[1]).sum() > np.abs(old[0] - old[1]).sum() * (1 + tol) + tol:
            flags["l1"] = False
        if np.any(total_variation(new) > total_variation(old) * (1 + tol) + tol):
            flags["tv"] = False

    run = godunov_1d(pair, cells, T, cfl, n_slices=33, step_hook=hook)
    for k in range(1, len(run.times)):
        times.append(float(run.times[k]))
        dist.append(float(np.abs(run.u[k, 0] - run.u[k, 1]).sum() * dx))
        tvu.append(float(total_variation(run.u[k, 0])))
        tvv.append(float(total_variation(run.u[k, 1])))
    return ContractionReport(np.array(times), np.array(dist), np.array(tvu), np.array(tvv),
                             flags["max"], flags["l1"], flags["tv"])
