"""Invariant suites run by ``wpinn verify``: each returns rows of measured value vs bound."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from wpinn import construct
from wpinn.autodiff import Tape, input_grad_node
from wpinn.geometry import FULL_SPHERE, Domain, FluxSpec, area_weight, div_g, flux_components, frozen_state_divergence
from wpinn.network import (
    CutoffSpec,
    MlpParams,
    adversary_nodes,
    eval_solution,
    flatten_grads,
    init_params,
    mlp_nodes,
)
from wpinn.reference import godunov_1d, initial_1d, l1_contraction_check
from wpinn.residual import EntropyPair, XiPartials, loss_total_max
from wpinn.sampler import sample_interior


@dataclass
class Check:
    suite: str
    name: str
    value: float
    bound: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.bound)


def format_table(rows: list[Check]) -> str:
    lines = [f"{'suite':<10} {'check':<34} {'measured':>12} {'bound':>12}  status"]
    for r in rows:
        lines.append(f"{r.suite:<10} {r.name:<34} {r.value:12.4e} {r.bound:12.4e}  {'pass' if r.ok else 'FAIL'}")
    return "\n".join(lines)


# -- construct -----------------------------------------------------------------


def construct_suite() -> list[Check]:
    return [Check("construct", f"{r.construction} {r.params}", r.error, r.bound) for r in construct.verify_all()]


# -- gradcheck -------------------------------------------------------------------


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def _random_net(rng: np.random.Generator, activation: str) -> MlpParams:
    encoding = "periodic" if rng.random() < 0.3 else "plain"
    depth = int(rng.integers(1, 4))
    width = int(rng.integers(2, 9))
    sizes = (4 if encoding == "periodic" else 3,) + (width,) * depth + (1,)
    p = init_params(sizes, activation, rng, encoding)
    # nonzero biases so every parameter matters
    return p.with_flat(p.flat() + 0.1 * rng.standard_normal(p.n_params))


def _safe_points(params: MlpParams, rng: np.random.Generator, n: int, margin: float = 1e-3) -> np.ndarray:
    """Points whose ReLU pre-activations stay clear of the kink."""
    for _ in range(200):
        x = rng.uniform(-0.9, 0.9, size=(n, 3))
        if params.activation != "relu" or _min_preact(params, x) > margin:
            return x
    raise RuntimeError("could not find points away from ReLU kinks")


def _min_preact(params: MlpParams, x: np.ndarray) -> float:
    from wpinn.network import features

    h = features(x, params.encoding)
    low = np.inf
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < len(params.weights) - 1:
            low = min(low, float(np.abs(h).min()))
            h = np.maximum(h, 0.0)
    return low


def _fd(f, vec: np.ndarray, idx, h: float) -> np.ndarray:
    out = []
    for i in idx:
        e = np.zeros_like(vec)
        e[i] = h
        out.append((f(vec + e) - f(vec - e)) / (2 * h))
    return np.array(out)


def param_grad_case(rng: np.random.Generator, activation: str) -> float:
    params = _random_net(rng, activation)
    x = _safe_points(params, rng, int(rng.integers(1, 6)))
    c = rng.standard_normal((len(x), 1))
    tape = Tape()
    net = mlp_nodes(tape, params, tape.input(x))
    loss = tape.sum(tape.mul(net.out, tape.constant(c)))
    g = flatten_grads(tape.grad(loss, net.param_ids))
    vec = params.flat()
    f = lambda v: float(np.sum(eval_solution(params.with_flat(v), x) * c[:, 0]))
    idx = rng.choice(len(vec), size=min(len(vec), 16), replace=False)
    return rel_err(g[idx], _fd(f, vec, idx, 1e-6))


def input_grad_case(rng: np.random.Generator, activation: str) -> float:
    params = _random_net(rng, activation)
    x = _safe_points(params, rng, int(rng.integers(1, 6)))
    tape = Tape()
    x_id = tape.input(x)
    out = mlp_nodes(tape, params, x_id, trainable=False).out
    dx = tape.value(input_grad_node(tape, out, x_id))
    fd = np.zeros_like(x)
    h = 1e-6
    for j in range(3):
        e = np.zeros_like(x)
        e[:, j] = h
        fd[:, j] = (eval_solution(params, x + e) - eval_solution(params, x - e)) / (2 * h)
    return rel_err(dx, fd)


def nested_case(rng: np.random.Generator, activation: str) -> float:
    """Gradient of a functional of input derivatives, against differences of the forward value."""
    params = _random_net(rng, activation)
    x = _safe_points(params, rng, int(rng.integers(2, 6)))
    c = rng.standard_normal((len(x), 3))

    def build(p: MlpParams):
        tape = Tape()
        x_id = tape.input(x)
        net = mlp_nodes(tape, p, x_id)
        dx = input_grad_node(tape, tape.square(net.out), x_id)
        return tape, tape.sum(tape.mul(dx, tape.constant(c))), net.param_ids

    tape, val, pids = build(params)
    g = flatten_grads(tape.grad(val, pids))
    vec = params.flat()

    def f(v):
        t, k, _ = build(params.with_flat(v))
        return float(t.value(k))

    idx = rng.choice(len(vec), size=min(len(vec), 12), replace=False)
    return rel_err(g[idx], _fd(f, vec, idx, 1e-5))


def loss_case(rng: np.random.Generator) -> float:
    """Gradient of the adversarial loss with respect to the test network."""
    eta = _random_net(rng, "tanh")
    cutoff = CutoffSpec(Domain())
    x = np.column_stack([rng.uniform(-1, 1, 32), rng.uniform(-0.5, 0.5, 32), rng.uniform(0, 1, 32)])
    u = np.tanh(3 * x[:, :1]) + 0.3 * x[:, 2:3]
    w = np.full(32, 1 / 32)
    pair = EntropyPair("square")
    levels = [-0.4, 0.1, 0.5]

    def build(p: MlpParams):
        tape = Tape()
        nd = adversary_nodes(tape, p, cutoff, x)
        xi = XiPartials(nd.xi, nd.dt, nd.dlam, nd.dphi)
        z = tape.constant(np.zeros((1, 1)))
        terms = loss_total_max(tape, tape.constant(u), xi, pair, levels, w, x[:, 1], z, np.zeros(1),
                               np.zeros(1), z, np.zeros(1), np.zeros(1), 1.0)
        return tape, terms.total, nd.param_ids

    tape, val, pids = build(eta)
    g = flatten_grads(tape.grad(val, pids))
    vec = eta.flat()

    def f(v):
        t, k, _ = build(eta.with_flat(v))
        return float(t.value(k))

    idx = rng.choice(len(vec), size=min(len(vec), 12), replace=False)
    return rel_err(g[idx], _fd(f, vec, idx, 1e-5))


def gradcheck_suite(n_configs: int = 100, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    acts = ("tanh", "sin", "relu")
    worst = {("param", a): 0.0 for a in acts} | {("input", a): 0.0 for a in acts} | {("nested", a): 0.0 for a in acts}
    for i in range(n_configs):
        a = acts[i % 3]
        worst[("param", a)] = max(worst[("param", a)], param_grad_case(rng, a))
        worst[("input", a)] = max(worst[("input", a)], input_grad_case(rng, a))
        worst[("nested", a)] = max(worst[("nested", a)], nested_case(rng, a))
    rows = [Check("gradcheck", f"{kind} gradient {a} (worst of {n_configs // 3}+)", v,
                  1e-5 if kind == "nested" else 1e-6) for (kind, a), v in worst.items()]
    loss_worst = max(loss_case(rng) for _ in range(5))
    rows.append(Check("gradcheck", "adversarial loss wrt test net", loss_worst, 1e-5))
    return rows


# -- geometry --------------------------------------------------------------------


def sphere_area_quadrature(n: int = 64) -> float:
    x, w = np.polynomial.legendre.leggauss(n)
    # lam and phi both run over [-1, 1]
    return float(2.0 * np.sum(w * area_weight(x)))


def sphere_area_mc(n: int = 200_000, seed: int = 0) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    phi = rng.uniform(-1, 1, n)
    vals = 4.0 * area_weight(phi)  # chart rectangle has area 4
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n))


def compatible_flux() -> FluxSpec:
    return FluxSpec(
        f1=lambda u: np.asarray(u, float) ** 2,
        f2=lambda u: np.sin(np.asarray(u, float)),
        f3=lambda u: (np.pi / 2) * np.asarray(u, float) ** 2,
        descriptor="u^2, sin u, pi/2 u^2",
    )


def fd_divergence(u, lam, phi, spec: FluxSpec, h: float = 1e-5) -> np.ndarray:
    """Surface divergence at a frozen state from central differences of the field."""
    fl_p, _ = flux_components(u, lam + h, phi, spec)
    fl_m, _ = flux_components(u, lam - h, phi, spec)
    _, fp_p = flux_components(u, lam, phi + h, spec)
    _, fp_m = flux_components(u, lam, phi - h, spec)
    f_lam, f_phi = flux_components(u, lam, phi, spec)
    return div_g(f_lam, f_phi, (fl_p - fl_m) / (2 * h), (fp_p - fp_m) / (2 * h), phi)


def geometry_suite(seed: int = 0) -> list[Check]:
    rows = [Check("geometry", "sphere area, Gauss-Legendre", abs(sphere_area_quadrature() / (4 * np.pi) - 1), 1e-6)]
    est, se = sphere_area_mc(seed=seed)
    rows.append(Check("geometry", "sphere area, Monte Carlo (in se)", abs(est - 4 * np.pi) / se, 3.0))
    rng = np.random.default_rng(seed)
    spec = compatible_flux()
    pts = sample_interior(FULL_SPHERE, 20_000, seed=seed)
    lam, phi = pts.lam, np.clip(pts.phi, -0.99, 0.99)
    for ubar in rng.uniform(-2, 2, 3):
        d_fd = fd_divergence(ubar, lam, phi, spec)
        rows.append(Check("geometry", f"div at u={ubar:+.3f}, differences", float(np.abs(d_fd).max()), 1e-6))
        d = frozen_state_divergence(ubar, lam, phi, spec)
        mean, se = float(d.mean()), float(d.std(ddof=1) / np.sqrt(len(d)))
        rows.append(Check("geometry", f"div at u={ubar:+.3f}, mean vs 3 se", abs(mean), 3 * se + 1e-12))
    return rows


# -- reference -------------------------------------------------------------------


def characteristics_sine(lam: np.ndarray, t: float) -> np.ndarray:
    """Pre-breaking solution of u_t + (u^2/2)_x = 0, u0 = -sin(pi x), from u = u0(x0), x = x0 + t u0(x0)."""
    u0 = lambda s: -np.sin(np.pi * s)
    out = np.empty_like(lam)
    for i, x in enumerate(lam):
        # x0 - t sin(pi x0) is increasing for t < 1/pi; bracket within one period
        g = lambda s: s + t * u0(s) - x
        out[i] = u0(brentq(g, x - 1.0, x + 1.0, xtol=1e-14))
    return out


def moving_shock_position(cells: int = 1024, T: float = 1.0) -> tuple[float, float]:
    run = godunov_1d(lambda x: initial_1d("moving", x), cells, T, n_slices=11)
    u = run.u[-1]
    c = run.centers
    mask = c > -0.5  # away from the fan entering through the periodic seam
    k = np.nonzero(mask & (u < 0.5))[0][0]
    # linear interpolation of the 0.5 crossing
    x = c[k - 1] + (0.5 - u[k - 1]) * (c[k] - c[k - 1]) / (u[k] - u[k - 1])
    return float(x), run.dx


def reference_suite() -> list[Check]:
    rows = []
    pos, dx = moving_shock_position()
    rows.append(Check("reference", "moving shock position at T=1 (cells)", abs(pos - 0.5) / dx, 1.0))
    run = godunov_1d(lambda x: initial_1d("sine", x), 4096, 0.25, n_slices=2)
    oracle = characteristics_sine(run.centers, 0.25)
    rows.append(Check("reference", "sine vs characteristics, L1 t=0.25", float(np.sum(np.abs(run.u[-1] - oracle)) * run.dx), 1e-3))
    pairs = {
        "sine / shifted sine": (lambda x: -np.sin(np.pi * x), lambda x: 0.5 - 0.8 * np.sin(np.pi * x + 0.3)),
        "standing / moving": (lambda x: initial_1d("standing", x), lambda x: initial_1d("moving", x)),
        "rarefaction / sine": (lambda x: initial_1d("rarefaction", x), lambda x: -np.sin(np.pi * x)),
    }
    for name, (a, b) in pairs.items():
        rep = l1_contraction_check(a, b)
        rows.append(Check("reference", f"max principle: {name}", 0.0 if rep.max_principle else 1.0, 0.0))
        rows.append(Check("reference", f"TV non-increase: {name}", 0.0 if rep.tv_nonincreasing else 1.0, 0.0))
        rows.append(Check("reference", f"L1 contraction: {name}", 0.0 if rep.l1_nonincreasing else 1.0, 0.0))
    return rows


SUITES = {
    "construct": construct_suite,
    "gradcheck": gradcheck_suite,
    "geometry": geometry_suite,
    "reference": reference_suite,
}
