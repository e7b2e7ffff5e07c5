"""Constructive ReLU approximations: x^2, products, partitions of unity, splines.

``SqNetwork`` evaluates the dyadic piecewise-linear interpolant of x^2 and also
carries an explicit ReLU realisation built from composed tooth maps, which is
used for size bookkeeping and a structural equality check.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from wpinn.autodiff import ConfigurationError


def teeth_parameter(G: int) -> int:
    """Unique s >= 1 with (s-1) 2^(s-1) + 1 <= G <= s 2^s."""
    if G < 1:
        raise ConfigurationError("G must be >= 1")
    s = 1
    while G > s * 2 ** s:
        s += 1
    return s


def tooth(x, s: int):
    """T^s(x) = min(x/2, 2^(1-2s) - x/2)."""
    x = np.asarray(x, float)
    return np.minimum(x / 2, 2.0 ** (1 - 2 * s) - x / 2)


def tooth_chain(x, k: int, m: int):
    """R^{k,m} = T^m o ... o T^k."""
    y = np.asarray(x, float)
    for s in range(k, m + 1):
        y = tooth(y, s)
    return y


def f_interp(x, level: int):
    """Piecewise-linear interpolant of x^2 at the knots j / 2^level."""
    knots = np.linspace(0.0, 1.0, 2 ** level + 1)
    return np.interp(np.asarray(x, float), knots, knots * knots)


def f_by_teeth(x, level: int):
    """x - sum_{i<=level} R^{1,i}(x); equal to ``f_interp(x, level)`` on [0, 1]."""
    x = np.asarray(x, float)
    out = x.copy()
    r = x.copy()
    for i in range(1, level + 1):
        r = tooth(r, i)
        out = out - r
    return out


# -- explicit ReLU realisation ---------------------------------------------------


@dataclass
class ReluNet:
    """Affine layers with ReLU between them (none after the last)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __call__(self, x) -> np.ndarray:
        h = np.asarray(x, float).reshape(len(np.atleast_1d(x)), -1)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < len(self.weights) - 1:
                h = np.maximum(h, 0.0)
        return h[:, 0] if h.shape[1] == 1 else h

    @property
    def depth(self) -> int:
        return len(self.weights) - 1  # hidden layers

    @property
    def width(self) -> int:
        return max(w.shape[0] for w in self.weights[:-1])

    def nonzeros(self) -> int:
        return int(sum(np.count_nonzero(w) + np.count_nonzero(b) for w, b in zip(self.weights, self.biases)))

    def max_abs_param(self) -> float:
        return float(max(max(np.abs(w).max(), np.abs(b).max(initial=0.0)) for w, b in zip(self.weights, self.biases)))


def _pl_hidden(knots: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and output coefficients so that sum c_i relu(x - b_i) interpolates (knots, values)."""
    slopes = np.diff(values) / np.diff(knots)
    coef = np.concatenate([slopes[:1], np.diff(slopes)])
    return knots[:-1].copy(), coef


def _block(k: int, s: int):
    """One hidden layer computing R^{k,k+i-1}(r) for i = 1..s from the input r.

    Returns, per chain, (offsets, coefficients). R^{k,m} on [0, 4^(1-k)] is a
    sawtooth with 2^(m-k+1) linear pieces.
    """
    length = 4.0 ** (1 - k)
    out = []
    for m in range(k, k + s):
        pieces = 2 ** (m - k + 1)
        knots = np.linspace(0.0, length, pieces + 1)
        out.append(_pl_hidden(knots, tooth_chain(knots, k, m)))
    return out


def realize_sq(Q: int, s: int, clamp: bool = True) -> ReluNet:
    """ReLU network of ``Q`` blocks, each a single hidden layer of tooth chains.

    The state between blocks is (f so far, R^{1,js}(x)); both are nonnegative,
    so the running value passes through a ReLU unchanged.
    """
    hidden_w, hidden_b, out_w, out_b = [], [], [], []
    for j in range(Q):
        chains = _block(j * s + 1, s)
        offs = np.concatenate([c[0] for c in chains])
        n = 1 + len(offs)
        # hidden: [relu(acc), relu(r - offsets)...] from state (acc, r)
        W = np.zeros((n, 2))
        W[0, 0] = 1.0
        W[1:, 1] = 1.0
        b = np.concatenate([[0.0], -offs])
        # output: acc' = acc - sum_i R_i, r' = last chain
        A = np.zeros((2, n))
        A[0, 0] = 1.0
        pos = 1
        for idx, (o, c) in enumerate(chains):
            A[0, pos:pos + len(o)] -= c
            if idx == len(chains) - 1:
                A[1, pos:pos + len(o)] = c
            pos += len(o)
        hidden_w.append(W)
        hidden_b.append(b)
        out_w.append(A)
        out_b.append(np.zeros(2))
    # input x -> state (x, x); merge each block's output map into the next hidden map
    weights = [hidden_w[0] @ np.ones((2, 1))]
    biases = [hidden_b[0]]
    for j in range(1, Q):
        weights.append(hidden_w[j] @ out_w[j - 1])
        biases.append(hidden_w[j] @ out_b[j - 1] + hidden_b[j])
    last_w, last_b = out_w[-1][:1], out_b[-1][:1]
    if clamp:
        # min(max(v, 0), 1) = 1 - relu(1 - relu(v))
        weights += [last_w, np.array([[-1.0]]), np.array([[-1.0]])]
        biases += [last_b, np.array([1.0]), np.array([1.0])]
    else:
        weights.append(last_w)
        biases.append(last_b)
    return ReluNet(weights, biases)


@dataclass
class SqNetwork:
    """Approximation of x^2 on [0, 1] with error at most G^-Q."""

    Q: int
    G: int
    s: int
    net: ReluNet = field(repr=False)

    @property
    def level(self) -> int:
        return self.Q * self.s

    def __call__(self, x) -> np.ndarray:
        return np.clip(f_interp(x, self.level), 0.0, 1.0)

    def derivative(self, x) -> np.ndarray:
        """Slope of the interpolant; only meaningful away from the knots."""
        h = 2.0 ** -self.level
        j = np.clip(np.floor(np.asarray(x, float) / h), 0, 2 ** self.level - 1)
        return (2 * j + 1) * h

    @property
    def bound(self) -> float:
        return float(self.G) ** -self.Q

    @property
    def size_bound(self) -> int:
        return 12 * self.Q * self.G ** 2


def build_sq(Q: int, G: int) -> SqNetwork:
    if Q < 1 or G < 1:
        raise ConfigurationError("Q and G must be positive")
    s = teeth_parameter(G)
    return SqNetwork(Q, G, s, realize_sq(Q, s))


@dataclass
class Mult2:
    sq: SqNetwork

    def __call__(self, x, y) -> np.ndarray:
        sq = self.sq
        v = 2 * (sq((np.asarray(x) + np.asarray(y)) / 2) - sq(np.asarray(x) / 2) - sq(np.asarray(y) / 2))
        return np.clip(v, 0.0, 1.0)

    @property
    def bound(self) -> float:
        return 6 * self.sq.bound


def build_mult2(Q: int, G: int) -> Mult2:
    return Mult2(build_sq(Q, G))


@dataclass
class MultK:
    k: int
    mult2: Mult2

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.k:
            raise ConfigurationError(f"expected {self.k} coordinates, got {x.shape[1]}")
        acc = x[:, 0]
        for i in range(1, self.k):
            acc = self.mult2(acc, x[:, i])
        return acc

    @property
    def bound(self) -> float:
        return self.k * self.mult2.sq.bound


def build_multk(k: int, Q: int, G: int, strict: bool = True) -> MultK:
    """Product of ``k`` inputs in [0, 1] by nesting the two-input product.

    ``strict`` enforces G^Q >= 4 k^4, under which the error bound k G^-Q is
    guaranteed.
    """
    if k < 2:
        raise ConfigurationError("k must be >= 2")
    if strict and float(G) ** Q < 4 * k ** 4:
        raise ConfigurationError(f"G^Q = {G ** Q} < 4 k^4 = {4 * k ** 4}")
    return MultK(k, build_mult2(Q, G))


# -- partition of unity ------------------------------------------------------------


@dataclass
class Partition:
    N: int
    D: int

    @property
    def centers(self) -> np.ndarray:
        grid = np.arange(self.N + 1) / self.N
        return np.array(list(itertools.product(grid, repeat=self.D)))

    def __call__(self, x) -> np.ndarray:
        """Values of every rho_l at the points ``x`` (n, D); shape (n, (N+1)^D)."""
        x = np.atleast_2d(np.asarray(x, float))
        c = self.centers
        hats = np.maximum(1.0 - self.N * np.abs(x[:, None, :] - c[None, :, :]), 0.0)
        return hats.prod(axis=2)


def partition_rho(N: int, D: int) -> Partition:
    if N < 1 or D < 1:
        raise ConfigurationError("N and D must be >= 1")
    return Partition(N, D)


# -- spline interpolation ------------------------------------------------------------


def hat_functions(knots) -> list:
    """delta_j for interior knots as combinations of three ReLUs."""
    t = np.asarray(knots, float)
    out = []
    for j in range(1, len(t) - 1):
        a, b, c = t[j - 1], t[j], t[j + 1]
        wa, wb, wc = 1 / (b - a), (c - a) / ((c - b) * (b - a)), 1 / (c - b)

        def delta(u, a=a, b=b, c=c, wa=wa, wb=wb, wc=wc):
            u = np.asarray(u, float)
            return wa * np.maximum(u - a, 0) - wb * np.maximum(u - b, 0) + wc * np.maximum(u - c, 0)

        out.append(delta)
    return out


@dataclass
class SplineInterp:
    knots: np.ndarray
    values: np.ndarray  # f at the interior knots

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.knots[1]), float(self.knots[-2])

    @property
    def spacing(self) -> float:
        return float(np.max(np.diff(self.knots)))

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, float)
        return sum(v * d(u) for v, d in zip(self.values, hat_functions(self.knots)))


def spline_interp(f, knots) -> SplineInterp:
    t = np.asarray(knots, float)
    if len(t) < 4:
        raise ConfigurationError("need at least four knots")
    if np.any(np.diff(t) <= 0):
        raise ConfigurationError("knots must be strictly increasing")
    return SplineInterp(t, np.asarray(f(t[1:-1]), float))


def modulus_of_continuity(f, lo: float, hi: float, delta: float, n: int = 200_001) -> float:
    """sup |f(a) - f(b)| over |a - b| <= delta, from a dense grid."""
    x = np.linspace(lo, hi, n)
    y = np.asarray(f(x), float)
    win = max(1, int(np.floor(delta / (x[1] - x[0]))))
    if win >= n - 1:
        return float(y.max() - y.min())
    # centred filters; keep only windows lying fully inside the grid
    m = win + 1
    spread = maximum_filter1d(y, m) - minimum_filter1d(y, m)
    return float(np.max(spread[m // 2: n - m + 1 + m // 2]))


# -- verification sweep --------------------------------------------------------------


@dataclass
class CheckRow:
    construction: str
    params: str
    error: float
    bound: float

    @property
    def ok(self) -> bool:
        return bool(self.error <= self.bound)


def _unit_grid(k: int, total: int) -> np.ndarray:
    m = max(2, int(round(total ** (1 / k))))
    g = np.linspace(0.0, 1.0, m)
    return np.array(list(itertools.product(g, repeat=k)))


SPLINE_FUNCS = {
    "abs": np.abs,
    "square": np.square,
    "sin3": lambda t: np.sin(3 * t),
}


def verify_all(QG=tuple(itertools.product((2, 3, 4, 6), (2, 4))), ks=(2, 3, 4), Ns=(2, 4, 8),
               n_grid: int = 10_000, n_random: int = 1000, seed: int = 0) -> list[CheckRow]:
    """Measure every construction against its stated bound."""
    rng = np.random.default_rng(seed)
    rows: list[CheckRow] = []
    x1 = np.concatenate([np.linspace(0, 1, 100_001), rng.random(n_random)])
    for Q, G in QG:
        sq = build_sq(Q, G)
        tag = f"Q={Q} G={G}"
        rows.append(CheckRow("SQ", tag, float(np.max(np.abs(sq(x1) - x1 ** 2))), sq.bound))
        rows.append(CheckRow("SQ network", tag, float(np.max(np.abs(sq.net(x1) - sq(x1)))), 1e-12))
        rows.append(CheckRow("SQ size", tag, float(sq.net.nonzeros()), float(sq.size_bound)))
        # derivative away from knots (quarter points of every cell)
        h = 2.0 ** -sq.level
        mids = (np.arange(2 ** sq.level) + 0.25) * h
        rows.append(CheckRow("SQ slope", tag, float(np.max(np.abs(sq.derivative(mids) - 2 * mids))),
                             float(G) ** (-Q / 2)))
        m2 = build_mult2(Q, G)
        xy = np.vstack([_unit_grid(2, n_grid), rng.random((n_random, 2))])
        rows.append(CheckRow("Mult2", tag, float(np.max(np.abs(m2(xy[:, 0], xy[:, 1]) - xy[:, 0] * xy[:, 1]))),
                             m2.bound))
        edge = np.linspace(0, 1, 1001)
        zero = max(np.max(np.abs(m2(edge, 0 * edge))), np.max(np.abs(m2(0 * edge, edge))))
        rows.append(CheckRow("Mult2 zero", tag, float(zero), 0.0))
        for k in ks:
            if float(G) ** Q < 4 * k ** 4:
                continue
            mk = build_multk(k, Q, G)
            pts = np.vstack([_unit_grid(k, n_grid), rng.random((n_random, k))])
            rows.append(CheckRow(f"Mult{k}", tag, float(np.max(np.abs(mk(pts) - pts.prod(axis=1)))), mk.bound))
            pts0 = pts.copy()
            pts0[:, rng.integers(0, k)] = 0.0
            rows.append(CheckRow(f"Mult{k} zero", tag, float(np.max(np.abs(mk(pts0)))), 0.0))
    for N in Ns:
        for D in (1, 2, 3):
            pu = partition_rho(N, D)
            pts = np.vstack([_unit_grid(D, min(n_grid, 4000)), rng.random((n_random, D))])
            rows.append(CheckRow("partition", f"N={N} D={D}", float(np.max(np.abs(pu(pts).sum(axis=1) - 1))), 1e-12))
    for name, f in SPLINE_FUNCS.items():
        for n_knots in (5, 9, 17, 33):
            for kind in ("uniform", "random"):
                if kind == "uniform":
                    knots = np.linspace(-1, 1, n_knots)
                else:
                    inner = np.sort(rng.uniform(-1, 1, n_knots - 2))
                    knots = np.concatenate([[-1.0], inner, [1.0]])
                    if np.min(np.diff(knots)) < 1e-3:
                        continue
                sp = spline_interp(f, knots)
                lo, hi = sp.interval
                u = np.concatenate([np.linspace(lo, hi, n_grid), rng.uniform(lo, hi, n_random), knots[1:-1]])
                err = float(np.max(np.abs(sp(u) - f(u))))
                w = modulus_of_continuity(f, float(knots[0]), float(knots[-1]), sp.spacing)
                rows.append(CheckRow(f"spline {name}", f"knots={n_knots} {kind}", err, 2 * w))
    return rows
