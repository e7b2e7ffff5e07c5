"""Entropy pairs, the weak entropy residual and the training losses.

Everything is built on an autodiff tape so that a loss can be differentiated
with respect to either network. The trial solution ``u`` and the test-function
partials are node ids holding ``(n, 1)`` columns; whichever side is frozen is
simply recorded as constants.

For the reduced flux f1 = f2 = 0 the entropy flux is tangent to latitude
circles, ``F_lam = G(u, c) cos(pi phi / 2)``, ``F_phi = 0``, so the residual
integrand becomes ``-U(u, c) d_t xi - (1/pi) G(u, c) d_lam xi``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from wpinn.autodiff import ConfigurationError, Tape
from wpinn.geometry import POLE_EPS, SingularityError

ENTROPIES = ("kruzkov", "square", "square-printed")
EPS_DEN = 1e-8


@dataclass(frozen=True)
class EntropyPair:
    """Entropy U(u, c) and entropy-flux coefficient G(u, c) for f3 = (pi/2) u^2.

    ``square`` is the consistent pair for U = (u - c)^2, i.e. the integral of
    U'(u) f3'(u) normalised so that G(c, c) = 0. ``square-printed`` keeps the
    flux u^3/3 - u^2 c/2 (scaled by pi), which is half the consistent one and
    does not vanish at u = c.
    """

    kind: str = "kruzkov"

    def __post_init__(self):
        if self.kind not in ENTROPIES:
            raise ConfigurationError(f"unknown entropy {self.kind!r}")

    def U(self, u, c):
        u = np.asarray(u, float)
        return np.abs(u - c) if self.kind == "kruzkov" else (u - c) ** 2

    def G(self, u, c):
        u = np.asarray(u, float)
        if self.kind == "kruzkov":
            return (np.pi / 2) * np.sign(u - c) * (u * u - c * c)
        if self.kind == "square":
            return (np.pi / 3) * (2 * u ** 3 - 3 * c * u ** 2 + c ** 3)
        return np.pi * (u ** 3 / 3 - u ** 2 * c / 2)

    def nodes(self, tape: Tape, u: int, c: float) -> tuple[int, int]:
        d = tape.sub(u, tape.constant(c))
        if self.kind == "kruzkov":
            U = tape.abs(d)
            G = tape.scale(tape.mul(tape.sign(d), tape.sub(tape.square(u), tape.constant(c * c))), np.pi / 2)
            return U, G
        U = tape.square(d)
        u2 = tape.square(u)
        u3 = tape.mul(u2, u)
        if self.kind == "square":
            poly = tape.add(tape.sub(tape.scale(u3, 2.0), tape.scale(u2, 3.0 * c)), tape.constant(c ** 3))
            return U, tape.scale(poly, np.pi / 3)
        return U, tape.scale(tape.sub(tape.scale(u3, 1 / 3), tape.scale(u2, c / 2)), np.pi)


@dataclass(frozen=True)
class LevelSet:
    c_min: float
    c_max: float
    values: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.values)


def sample_levels(c_min: float, c_max: float, n: int, rng: np.random.Generator) -> LevelSet:
    if n < 1:
        raise ConfigurationError("need at least one entropy level")
    if c_max < c_min:
        raise ConfigurationError("empty level interval")
    vals = rng.uniform(c_min, c_max, size=n)
    return LevelSet(float(c_min), float(c_max), tuple(float(v) for v in vals))


def check_poles(phi) -> None:
    if np.any(np.cos(np.pi * np.asarray(phi, float) / 2) < POLE_EPS):
        raise SingularityError("collocation point at a pole")


@dataclass
class XiPartials:
    """Node ids of xi and its chart partials (each an (n, 1) column)."""

    xi: int
    dt: int
    dlam: int
    dphi: int


def r_int_nodes(tape: Tape, u: int, xi: XiPartials, c: float, pair: EntropyPair,
                cos_phi: int | None = None) -> int:
    """Pointwise residual -U d_t xi - <F, grad_g xi> as an (n, 1) node.

    With ``cos_phi`` given (a constant node of cos(pi phi/2)) the lambda term is
    evaluated literally, ``(1/(pi cos)) d_lam xi * G cos``; otherwise in the
    simplified form ``(1/pi) d_lam xi * G``.
    """
    U, G = pair.nodes(tape, u, c)
    t_term = tape.mul(U, xi.dt)
    if cos_phi is None:
        lam_term = tape.scale(tape.mul(xi.dlam, G), 1 / np.pi)
    else:
        f_lam = tape.mul(G, cos_phi)
        lam_term = tape.div(tape.scale(tape.mul(xi.dlam, f_lam), 1 / np.pi), cos_phi)
    # F_phi = 0 for the reduced flux, so the phi term drops
    return tape.scale(tape.add(t_term, lam_term), -1.0)


def denominator_node(tape: Tape, xi: XiPartials, w: int, inv_pi_cos: int, eps: float = EPS_DEN) -> int:
    """Weighted integral of xi^2 + |grad_g xi|^2 plus ``eps``."""
    g_lam = tape.mul(xi.dlam, inv_pi_cos)
    g_phi = tape.scale(xi.dphi, 2 / np.pi)
    dens = tape.add(tape.add(tape.square(xi.xi), tape.square(g_lam)), tape.square(g_phi))
    return tape.add(tape.sum(tape.mul(w, dens)), tape.constant(eps))


def loss_int_node(tape: Tape, r: int, w: int, den: int) -> int:
    """(weighted integral of r)_+^2 / den."""
    num = tape.square(tape.posclip(tape.sum(tape.mul(w, r))))
    return tape.div(num, den)


def loss_l1_node(tape: Tape, u: int, target: np.ndarray, w: np.ndarray) -> int:
    """Weighted integral of |u - target| (initial or boundary misfit)."""
    if len(w) == 0:
        return tape.constant(0.0)
    d = tape.abs(tape.sub(u, tape.constant(np.asarray(target, float).reshape(-1, 1))))
    return tape.sum(tape.mul(tape.constant(np.asarray(w, float).reshape(-1, 1)), d))


@dataclass
class LossTerms:
    total: int  # node of L_max
    l_int: list[int]  # per level
    l_tb: int
    l_sb: int


def loss_total_max(tape: Tape, u_int: int, xi: XiPartials, pair: EntropyPair, levels: Sequence[float],
                   w_int: np.ndarray, phi_int: np.ndarray, u_ini: int, u0: np.ndarray, w_ini: np.ndarray,
                   u_sb: int, g_sb: np.ndarray, w_sb: np.ndarray, rho: float, eps: float = EPS_DEN,
                   den: int | None = None) -> LossTerms:
    """max over levels of L_int(c) + rho (L_tb + L_sb); the max routes gradients to the first maximiser."""
    if len(levels) == 0:
        raise ConfigurationError("empty level set")
    if len(w_int) == 0:
        raise ConfigurationError("empty interior collocation set")
    check_poles(phi_int)
    w = tape.constant(np.asarray(w_int, float).reshape(-1, 1))
    if den is None:
        inv = tape.constant(1.0 / (np.pi * np.cos(np.pi * np.asarray(phi_int, float) / 2)).reshape(-1, 1))
        den = denominator_node(tape, xi, w, inv, eps)
    l_tb = loss_l1_node(tape, u_ini, u0, w_ini)
    l_sb = loss_l1_node(tape, u_sb, g_sb, w_sb)
    penalty = tape.scale(tape.add(l_tb, l_sb), rho)
    l_int, totals = [], []
    for c in levels:
        r = r_int_nodes(tape, u_int, xi, c, pair)
        li = loss_int_node(tape, r, w, den)
        l_int.append(li)
        totals.append(tape.add(li, penalty))
    return LossTerms(tape.max(totals), l_int, l_tb, l_sb)


# -- numeric conveniences -----------------------------------------------------


def _col(v) -> np.ndarray:
    return np.asarray(v, float).reshape(-1, 1)


def r_int_point(u, xi_t, xi_lam, xi_phi, c: float, pair: EntropyPair, phi) -> np.ndarray:
    """Residual integrand at points, from values of u and the test-function partials."""
    check_poles(phi)
    tape = Tape()
    xi = XiPartials(tape.constant(_col(np.zeros_like(np.asarray(xi_t, float)))), tape.constant(_col(xi_t)),
                      tape.constant(_col(xi_lam)), tape.constant(_col(xi_phi)))
    cos_phi = tape.constant(_col(np.cos(np.pi * np.asarray(phi, float) / 2)))
    r = r_int_nodes(tape, tape.constant(_col(u)), xi, c, pair, cos_phi)
    return tape.value(r)[:, 0]


def raw_residual(u, xi_t, xi_lam, c: float, pair: EntropyPair, weights) -> float:
    """Weighted Monte-Carlo estimate of the (unnormalised) entropy residual."""
    r = -pair.U(u, c) * np.asarray(xi_t) - pair.G(u, c) * np.asarray(xi_lam) / np.pi
    return float(np.sum(np.asarray(weights) * r))


def loss_int_value(u, xi, xi_t, xi_lam, xi_phi, c: float, pair: EntropyPair, phi, weights,
                   eps: float = EPS_DEN) -> float:
    """Normalised internal loss from numeric values."""
    num = max(raw_residual(u, xi_t, xi_lam, c, pair, weights), 0.0) ** 2
    cos = np.cos(np.pi * np.asarray(phi, float) / 2)
    g_lam = np.asarray(xi_lam) / (np.pi * cos)
    g_phi = 2 / np.pi * np.asarray(xi_phi)
    den = float(np.sum(np.asarray(weights) * (np.asarray(xi) ** 2 + g_lam ** 2 + g_phi ** 2))) + eps
    return num / den


def loss_l1_value(u, target, weights) -> float:
    return float(np.sum(np.asarray(weights) * np.abs(np.asarray(u) - np.asarray(target))))
