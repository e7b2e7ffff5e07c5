"""Adversarial min-max training of the solution network and ensemble averaging.

Each epoch: optionally reset the adversary, take ``N_max`` ascent steps on the
test network, then ``N_min`` descent steps on the solution network, both on
``L_max = max_c L(u, xi, c)``. Collocation sets and entropy levels are drawn
once per run. The best solution snapshot (smallest ``L_max``) is kept.
"""

from __future__ import annotations

import hashlib
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from wpinn.autodiff import ConfigurationError, Tape
from wpinn.network import (
    CutoffSpec,
    MlpParams,
    adversary_nodes,
    eval_solution,
    flatten_grads,
    init_params,
    input_dim,
    mlp_apply,
    mlp_param_nodes,
)
from wpinn.reference import ExperimentSpec, l1_test_error
from wpinn.residual import EPS_DEN, EntropyPair, LevelSet, XiPartials, loss_total_max, sample_levels
from wpinn.sampler import CollocationSet, sample_boundary, sample_initial, sample_interior

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, epoch: int = -1, step: str = "", level: int = -1):
        super().__init__(f"{message} (epoch {epoch}, step {step}, level {level})")
        self.epoch, self.step, self.level = epoch, step, level


def parse_arch(spec: str) -> tuple[int, int]:
    """``"20x4"`` -> (width 20, depth 4)."""
    try:
        width, depth = (int(p) for p in str(spec).lower().split("x"))
    except ValueError:
        raise ConfigurationError(f"architecture must look like WIDTHxDEPTH, got {spec!r}") from None
    if width < 1 or depth < 1:
        raise ConfigurationError(f"zero-width or zero-depth architecture {spec!r}")
    return width, depth


@dataclass
class TrainConfig:
    N_int: int = 4096
    N_tb: int = 2048
    N_ini: int = 2048
    N_min: int = 1
    N_max: int = 6
    N_c: int = 10
    N_ep: int = 500
    tau_min: float = 0.01
    tau_max: float = 0.015
    rho: float = 10.0
    r: int = 100
    arch_theta: str = "20x4"
    arch_eta: str = "10x2"
    activation_theta: str = "tanh"
    activation_eta: str = "tanh"
    entropy: str = "kruzkov"
    optimizer: str = "adam"
    ensemble_size: int = 1
    seed: int = 0
    generator: str = "mc"
    test_transform: str = "square"
    time_cutoff: bool = True
    c_margin: float = 0.1

    def validate(self) -> "TrainConfig":
        for name in ("N_int", "N_ini", "N_min", "N_max", "N_c", "N_ep", "r", "ensemble_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.N_tb < 0:
            raise ConfigurationError("N_tb must be >= 0")
        if self.tau_min <= 0 or self.tau_max <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.rho < 0:
            raise ConfigurationError("rho must be nonnegative")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}")
        if self.generator not in ("mc", "sobol"):
            raise ConfigurationError("generator must be mc or sobol")
        parse_arch(self.arch_theta)
        parse_arch(self.arch_eta)
        EntropyPair(self.entropy)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        items = sorted(self.to_dict().items())
        return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


# -- optimisers ---------------------------------------------------------------


@dataclass
class OptState:
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


def step_optimizer(params: np.ndarray, grads: np.ndarray, state: OptState, tag: str, lr: float,
                   ascent: bool = False, betas=(0.9, 0.999), eps: float = 1e-8):
    """One plain-gradient or Adam step. Returns (new params, state)."""
    if params.shape != grads.shape:
        raise ConfigurationError("parameter and gradient shapes differ")
    if not np.all(np.isfinite(grads)):
        raise TrainingAborted("non-finite gradient")
    sign = 1.0 if ascent else -1.0
    if tag == "sgd":
        return params + sign * lr * grads, state
    if tag != "adam":
        raise ConfigurationError(f"unknown optimizer {tag!r}")
    b1, b2 = betas
    if state.m is None:
        state.m, state.v = np.zeros_like(params), np.zeros_like(params)
    state.t += 1
    state.m = b1 * state.m + (1 - b1) * grads
    state.v = b2 * state.v + (1 - b2) * grads * grads
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    return params + sign * lr * m_hat / (np.sqrt(v_hat) + eps), state


# -- problem setup ---------------------------------------------------------------


@dataclass
class Problem:
    """Everything that stays fixed during one training run."""

    experiment: ExperimentSpec
    pair: EntropyPair
    cutoff: CutoffSpec
    s_int: CollocationSet
    s_ini: CollocationSet
    s_sb: CollocationSet
    u0: np.ndarray
    g_sb: np.ndarray
    levels: LevelSet
    encoding: str


def _streams(seed: int):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]  # theta, eta, sampling, levels


def setup_problem(cfg: TrainConfig, exp: ExperimentSpec, seed: int) -> Problem:
    _, _, samp_rng, lev_rng = _streams(seed)
    seeds = samp_rng.integers(0, 2 ** 31, size=3)
    d = exp.domain
    s_int = sample_interior(d, cfg.N_int, cfg.generator, int(seeds[0]))
    s_ini = sample_initial(d, cfg.N_ini, int(seeds[1]))
    s_sb = sample_boundary(d, cfg.N_tb, int(seeds[2]))
    u0 = exp.u0(s_ini.points)
    g_sb = exp.exact(s_sb.points) if len(s_sb) else np.zeros(0)
    lo, hi = exp.u0_range()
    levels = sample_levels(lo - cfg.c_margin, hi + cfg.c_margin, cfg.N_c, lev_rng)
    return Problem(
        exp, EntropyPair(cfg.entropy), CutoffSpec(d, time_factor=cfg.time_cutoff),
        s_int, s_ini, s_sb, u0, g_sb, levels,
        "periodic" if exp.periodic else "plain",
    )


def _arch(spec: str, encoding: str) -> tuple[int, ...]:
    width, depth = parse_arch(spec)
    return (input_dim(encoding),) + (width,) * depth + (1,)


# -- loss evaluation -------------------------------------------------------------


@dataclass
class LossValues:
    l_max: float
    l_int: float
    l_tb: float
    l_sb: float
    argmax: int
    c: float
    l_int_levels: np.ndarray = field(repr=False, default=None)


class LossModel:
    """Builds L_max on a fresh tape with one side trainable and the other frozen."""

    def __init__(self, prob: Problem, cfg: TrainConfig):
        self.p, self.cfg = prob, cfg
        self.w_int = prob.s_int.weights
        self.phi_int = prob.s_int.phi
        self._u_cache: tuple[MlpParams, tuple] | None = None

    def _u_values(self, theta: MlpParams) -> tuple:
        # theta is immutable between optimiser steps, so the frozen outputs are reused
        if self._u_cache is None or self._u_cache[0] is not theta:
            p = self.p
            vals = tuple(
                eval_solution(theta, s.points)[:, None] if len(s) else np.zeros((0, 1))
                for s in (p.s_int, p.s_ini, p.s_sb)
            )
            self._u_cache = (theta, vals)
        return self._u_cache[1]

    def _xi_const(self, tape: Tape, eta: MlpParams) -> XiPartials:
        t2 = Tape()
        nodes = adversary_nodes(t2, eta, self.p.cutoff, self.p.s_int.points, self.cfg.test_transform)
        return XiPartials(*(tape.constant(t2.value(k)) for k in (nodes.xi, nodes.dt, nodes.dlam, nodes.dphi)))

    def build(self, theta: MlpParams, eta: MlpParams, wrt: str):
        """Record L_max; ``wrt`` is "theta", "eta" or "none".

        Returns (tape, terms, parameter ids, maximising level index, per-level L_int).
        """
        p, cfg = self.p, self.cfg
        tape = Tape()
        pids: list[int] = []
        if wrt == "eta":
            nodes = adversary_nodes(tape, eta, p.cutoff, p.s_int.points, cfg.test_transform)
            xi = XiPartials(nodes.xi, nodes.dt, nodes.dlam, nodes.dphi)
            pids = nodes.param_ids
        else:
            xi = self._xi_const(tape, eta)
        if wrt == "theta":
            tpids = mlp_param_nodes(tape, theta, trainable=True)
            pids = tpids
            u_int = mlp_apply(tape, theta, tpids, tape.input(p.s_int.points))
            u_ini = mlp_apply(tape, theta, tpids, tape.input(p.s_ini.points))
            u_sb = (mlp_apply(tape, theta, tpids, tape.input(p.s_sb.points))
                    if len(p.s_sb) else tape.constant(np.zeros((0, 1))))
        else:
            u_int, u_ini, u_sb = (tape.constant(v) for v in self._u_values(theta))
        k, l_all = self._level_scores(tape, u_int, xi)
        terms = loss_total_max(
            tape, u_int, xi, p.pair, [p.levels.values[k]], self.w_int, self.phi_int,
            u_ini, p.u0, p.s_ini.weights, u_sb, p.g_sb, p.s_sb.weights, cfg.rho,
        )
        return tape, terms, pids, k, l_all

    def _level_scores(self, tape: Tape, u_int: int, xi: XiPartials) -> tuple[int, np.ndarray]:
        """Internal loss at every level from current values; only the maximiser is recorded.

        The max routes its gradient through the first maximiser alone, so the
        remaining levels need no tape nodes.
        """
        u = tape.value(u_int)
        c = np.asarray(self.p.levels.values)[None, :]
        dt, dlam, dphi, xv = (tape.value(k) for k in (xi.dt, xi.dlam, xi.dphi, xi.xi))
        r = -(self.p.pair.U(u, c) * dt + self.p.pair.G(u, c) * dlam / np.pi)
        w = self.w_int[:, None]
        num = np.maximum((w * r).sum(axis=0), 0.0) ** 2
        g_lam = dlam / (np.pi * np.cos(np.pi * self.phi_int[:, None] / 2))
        den = float(np.sum(w * (xv ** 2 + g_lam ** 2 + (2 / np.pi * dphi) ** 2))) + EPS_DEN
        l_all = num / den
        return int(np.argmax(l_all)), l_all

    def _values(self, tape: Tape, terms, k: int, l_all: np.ndarray) -> LossValues:
        return LossValues(float(tape.value(terms.total)), float(tape.value(terms.l_int[0])),
                          float(tape.value(terms.l_tb)), float(tape.value(terms.l_sb)), k,
                          self.p.levels.values[k], l_all)

    def evaluate(self, theta: MlpParams, eta: MlpParams) -> LossValues:
        tape, terms, _, k, l_all = self.build(theta, eta, "none")
        return self._values(tape, terms, k, l_all)

    def gradient(self, theta: MlpParams, eta: MlpParams, wrt: str):
        tape, terms, pids, k, l_all = self.build(theta, eta, wrt)
        g = flatten_grads(tape.grad(terms.total, pids))
        return self._values(tape, terms, k, l_all), g


# -- training --------------------------------------------------------------------


@dataclass
class RunResult:
    best_loss: float
    best_params: MlpParams
    best_eta: MlpParams
    best_epoch: int
    loss_history: list[float]
    log_rows: list[dict]
    E_T: float
    wall_time: float
    seed: int
    problem: Problem | None = field(default=None, repr=False)
    eta_checksums: list[str] = field(default_factory=list)

    def predictor(self) -> Callable:
        params = self.best_params
        return lambda x: eval_solution(params, x)


def _checksum(vec: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(vec).tobytes()).hexdigest()


def _check_finite(vals: LossValues, epoch: int, step: str):
    if not np.isfinite(vals.l_max):
        raise TrainingAborted("non-finite loss", epoch, step, vals.argmax)


def train(cfg: TrainConfig, exp: ExperimentSpec, seed: int | None = None, track_eta: bool = False,
          compute_error: bool = True, progress: Callable | None = None) -> RunResult:
    """Run the min-max loop for one network pair; ``seed`` defaults to ``cfg.seed``."""
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    start = time.perf_counter()
    theta_rng, eta_rng, _, _ = _streams(seed)
    prob = setup_problem(cfg, exp, seed)
    enc = prob.encoding
    theta = init_params(_arch(cfg.arch_theta, enc), cfg.activation_theta, theta_rng, enc)
    eta = init_params(_arch(cfg.arch_eta, enc), cfg.activation_eta, eta_rng, enc)
    model = LossModel(prob, cfg)

    th_vec, eta_vec = theta.flat(), eta.flat()
    th_state, eta_state = OptState(), OptState()
    best = np.inf
    best_theta, best_eta, best_epoch = theta, eta, 0
    history, rows, checks = [], [], []

    for epoch in range(1, cfg.N_ep + 1):
        if epoch % cfg.r == 0:
            eta = init_params(eta.sizes, eta.activation, eta_rng, enc)
            eta_vec, eta_state = eta.flat(), OptState()
        for _ in range(cfg.N_max):
            vals, g = model.gradient(theta, eta, "eta")
            _check_finite(vals, epoch, "ascent")
            try:
                eta_vec, eta_state = step_optimizer(eta_vec, g, eta_state, cfg.optimizer, cfg.tau_max, ascent=True)
            except TrainingAborted as exc:
                raise TrainingAborted(str(exc), epoch, "ascent", vals.argmax) from None
            eta = eta.with_flat(eta_vec)
        if track_eta:
            checks.append(_checksum(eta_vec))
        for _ in range(cfg.N_min):
            vals, g = model.gradient(theta, eta, "theta")
            _check_finite(vals, epoch, "descent")
            evaluated = theta
            try:
                th_vec, th_state = step_optimizer(th_vec, g, th_state, cfg.optimizer, cfg.tau_min)
            except TrainingAborted as exc:
                raise TrainingAborted(str(exc), epoch, "descent", vals.argmax) from None
            theta = theta.with_flat(th_vec)
        history.append(vals.l_max)
        rows.append({"epoch": epoch, "L_int": vals.l_int, "L_tb": vals.l_tb, "L_sb": vals.l_sb,
                     "L_max": vals.l_max, "argmax_c": vals.c})
        if vals.l_max < best:
            # snapshot the network at which L_max was evaluated
            best, best_theta, best_eta, best_epoch = vals.l_max, evaluated, eta, epoch
        if progress is not None:
            progress(epoch, vals)

    err = float("nan")
    if compute_error:
        err = l1_test_error(lambda x: eval_solution(best_theta, x), exp.exact, exp.domain)
    return RunResult(best, best_theta, best_eta, best_epoch, history, rows, err,
                     time.perf_counter() - start, seed, prob, checks)


# -- ensembles -------------------------------------------------------------------


@dataclass
class EnsembleResult:
    members: list[RunResult]
    failures: list[tuple[int, str]]
    E_T: float

    def predictor(self) -> Callable:
        return average_predictor([m.best_params for m in self.members])


def average_predictor(params: list[MlpParams]) -> Callable:
    def predict(x):
        return np.mean([eval_solution(p, x) for p in params], axis=0)

    return predict


def max_threads() -> int:
    try:
        return max(1, int(os.environ.get("WPINN_THREADS", "1")))
    except ValueError:
        return 1


def ensemble_train(cfg: TrainConfig, exp: ExperimentSpec, n: int | None = None,
                   threads: int | None = None, compute_member_error: bool = True) -> EnsembleResult:
    """Train members with seeds ``cfg.seed + k`` and average their best networks."""
    n = cfg.ensemble_size if n is None else n
    if n < 1:
        raise ConfigurationError("ensemble size must be >= 1")
    threads = max_threads() if threads is None else threads
    seeds = [cfg.seed + k for k in range(n)]

    def run(s):
        try:
            return train(cfg, exp, seed=s, compute_error=compute_member_error)
        except TrainingAborted as exc:
            log.warning("member with seed %d aborted: %s", s, exc)
            return exc

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
            outcomes = list(pool.map(run, seeds))
    else:
        outcomes = [run(s) for s in seeds]
    members = [o for o in outcomes if isinstance(o, RunResult)]
    failures = [(s, str(o)) for s, o in zip(seeds, outcomes) if not isinstance(o, RunResult)]
    if not members:
        raise TrainingAborted("every ensemble member aborted")
    pred = average_predictor([m.best_params for m in members])
    err = l1_test_error(pred, exp.exact, exp.domain)
    return EnsembleResult(members, failures, err)
