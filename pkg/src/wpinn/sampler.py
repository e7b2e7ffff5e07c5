"""Collocation sets on the space-time chart domain.

Interior and initial points are area-uniform on the sphere: the latitude is
drawn through ``s = sin(pi phi / 2)`` uniform, which is the inverse CDF of the
surface measure. Every point carries the weight ``measure / n``, so a weighted
sum is a Monte-Carlo estimate of the surface(-time) integral.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from wpinn.autodiff import ConfigurationError
from wpinn.geometry import PHI_GUARD, Domain

# Joe & Kuo (new-joe-kuo-6.21201), dimensions 2..4: (s, a, m_1..m_s).
# Dimension 1 is the van der Corput sequence in base 2.
JOE_KUO = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
)
SOBOL_BITS = 32
MAX_SOBOL_DIM = len(JOE_KUO) + 1


def _direction_numbers(dim: int) -> np.ndarray:
    v = np.zeros((dim, SOBOL_BITS), dtype=np.uint64)
    v[0] = [1 << (SOBOL_BITS - 1 - i) for i in range(SOBOL_BITS)]
    for j in range(1, dim):
        s, a, m = JOE_KUO[j - 1]
        for i in range(s):
            v[j, i] = m[i] << (SOBOL_BITS - 1 - i)
        for i in range(s, SOBOL_BITS):
            val = int(v[j, i - s]) ^ (int(v[j, i - s]) >> s)
            for k in range(1, s):
                val ^= ((a >> (s - 1 - k)) & 1) * int(v[j, i - k])
            v[j, i] = val
    return v


def sobol(n: int, dim: int, shift_seed: int | None = None) -> np.ndarray:
    """First ``n`` points of the ``dim``-dimensional Sobol sequence (origin first).

    With ``shift_seed`` a random digital shift (XOR with a fixed random word
    per dimension) is applied, which keeps the net structure.
    """
    if not 1 <= dim <= MAX_SOBOL_DIM:
        raise ConfigurationError(f"Sobol dimension must be in 1..{MAX_SOBOL_DIM}")
    if n < 1:
        raise ConfigurationError("need at least one point")
    v = _direction_numbers(dim)
    out = np.empty((n, dim), dtype=np.uint64)
    x = np.zeros(dim, dtype=np.uint64)
    out[0] = x
    for i in range(1, n):
        c = ((i - 1) ^ ((i - 1) + 1)).bit_length() - 1  # rightmost zero bit of i-1
        x = x ^ v[:, c]
        out[i] = x
    if shift_seed is not None:
        rng = np.random.default_rng(shift_seed)
        out ^= rng.integers(0, 1 << SOBOL_BITS, size=dim, dtype=np.uint64)
    return out.astype(np.float64) / float(1 << SOBOL_BITS)


@dataclass(frozen=True)
class CollocationSet:
    points: np.ndarray  # (n, 3): lam, phi, t
    weights: np.ndarray  # (n,)
    kind: str
    seed: int | None
    generator: str

    def __len__(self) -> int:
        return len(self.points)

    @property
    def lam(self):
        return self.points[:, 0]

    @property
    def phi(self):
        return self.points[:, 1]

    @property
    def t(self):
        return self.points[:, 2]


def _unit_draws(n: int, dim: int, gen: str, seed) -> np.ndarray:
    if gen == "mc":
        return np.random.default_rng(seed).random((n, dim))
    if gen == "sobol":
        return sobol(n, dim, shift_seed=seed)
    raise ConfigurationError(f"unknown generator {gen!r}")


def _map_space(u_lam, u_phi, domain: Domain):
    a, b = domain.lambda_range
    lo, hi = domain.phi_range
    lam = a + (b - a) * u_lam
    s_lo, s_hi = np.sin(np.pi * lo / 2), np.sin(np.pi * hi / 2)
    phi = (2 / np.pi) * np.arcsin(s_lo + (s_hi - s_lo) * u_phi)
    return lam, np.clip(phi, -PHI_GUARD, PHI_GUARD)


def sample_interior(domain: Domain, n: int, gen: str = "mc", seed: int | None = 0) -> CollocationSet:
    if n < 1:
        raise ConfigurationError("need at least one interior point")
    u = _unit_draws(n, 3, gen, seed)
    lam, phi = _map_space(u[:, 0], u[:, 1], domain)
    t = domain.T * u[:, 2]
    pts = np.column_stack([lam, phi, t])
    return CollocationSet(pts, np.full(n, domain.volume / n), "interior", seed, gen)


def sample_initial(domain: Domain, n: int, seed: int | None = 0, gen: str = "mc") -> CollocationSet:
    if n < 1:
        raise ConfigurationError("need at least one initial point")
    u = _unit_draws(n, 2, gen, seed)
    lam, phi = _map_space(u[:, 0], u[:, 1], domain)
    pts = np.column_stack([lam, phi, np.zeros(n)])
    return CollocationSet(pts, np.full(n, domain.area / n), "initial", seed, gen)


def sample_boundary(domain: Domain, n: int, seed: int | None = 0) -> CollocationSet:
    """Points on the spatial boundary times [0, T], split across edges by length.

    Edge counts are multinomial with probabilities proportional to edge length.
    Returns an empty set for a domain without boundary.
    """
    edges = domain.edge_lengths()
    total = sum(edges.values())
    if not edges or total == 0.0 or n == 0:
        return CollocationSet(np.zeros((0, 3)), np.zeros(0), "boundary", seed, "mc")
    rng = np.random.default_rng(seed)
    names = list(edges)
    counts = rng.multinomial(n, [edges[k] / total for k in names])
    (a, b), (lo, hi) = domain.lambda_range, domain.phi_range
    blocks = []
    for name, m in zip(names, counts):
        r = rng.random((m, 2))
        t = domain.T * r[:, 1]
        if name.startswith("lam"):
            lam = np.full(m, a if name == "lam_lo" else b)
            phi = lo + (hi - lo) * r[:, 0]  # arc length is uniform in phi on a meridian
        else:
            lam = a + (b - a) * r[:, 0]
            phi = np.full(m, lo if name == "phi_lo" else hi)
        blocks.append(np.column_stack([lam, phi, t]))
    pts = np.vstack(blocks)
    return CollocationSet(pts, np.full(n, total * domain.T / n), "boundary", seed, "mc")


def dump_csv(path, *sets: CollocationSet) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "phi", "t", "weight", "kind"])
        for s in sets:
            for (lam, phi, t), wt in zip(s.points, s.weights):
                w.writerow([repr(float(lam)), repr(float(phi)), repr(float(t)), repr(float(wt)), s.kind])
    return path
