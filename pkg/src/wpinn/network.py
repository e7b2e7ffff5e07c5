"""Solution and test-function networks on top of :mod:`wpinn.autodiff`.

Networks take chart coordinates ``(lam, phi, t)`` as an ``(n, 3)`` array. With
``encoding="periodic"`` the longitude is fed as ``(cos pi lam, sin pi lam)``,
so the first layer sees four features.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from wpinn.autodiff import ConfigurationError, Tape
from wpinn.geometry import Domain

ACTIVATIONS = ("relu", "tanh", "sin")
ENCODINGS = ("plain", "periodic")


@dataclass(frozen=True, eq=False)
class MlpParams:
    """Weights ``W_i`` (shape ``p_{i+1} x p_i``) and biases ``v_i`` of an MLP.

    The last layer is affine with no activation.
    """

    sizes: tuple[int, ...]
    activation: str
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    encoding: str = "plain"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.encoding not in ENCODINGS:
            raise ConfigurationError(f"unknown encoding {self.encoding!r}")
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ConfigurationError("layer count does not match sizes")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i + 1], self.sizes[i]) or b.shape != (self.sizes[i + 1],):
                raise ConfigurationError(f"layer {i}: bad shapes {w.shape}, {b.shape}")

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        """All parameters in row-major layer order: W_0, v_1, W_1, v_2, ..."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts += [w.ravel(), b]
        return np.concatenate(parts)

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        return from_flat(self.sizes, self.activation, vec, self.encoding)

    def __eq__(self, other):
        return (
            isinstance(other, MlpParams)
            and self.sizes == other.sizes
            and self.activation == other.activation
            and self.encoding == other.encoding
            and np.array_equal(self.flat(), other.flat())
        )


def from_flat(sizes, activation: str, vec, encoding: str = "plain") -> MlpParams:
    sizes = tuple(int(s) for s in sizes)
    vec = np.asarray(vec, dtype=np.float64)
    expected = sum(sizes[i + 1] * sizes[i] + sizes[i + 1] for i in range(len(sizes) - 1))
    if vec.size != expected:
        raise ConfigurationError(f"expected {expected} parameters, got {vec.size}")
    weights, biases, k = [], [], 0
    for i in range(len(sizes) - 1):
        n_w = sizes[i + 1] * sizes[i]
        weights.append(vec[k:k + n_w].reshape(sizes[i + 1], sizes[i]).copy())
        k += n_w
        biases.append(vec[k:k + sizes[i + 1]].copy())
        k += sizes[i + 1]
    return MlpParams(sizes, activation, tuple(weights), tuple(biases), encoding)


def input_dim(encoding: str) -> int:
    return 4 if encoding == "periodic" else 3


def init_params(sizes, activation: str, rng: np.random.Generator, encoding: str = "plain") -> MlpParams:
    """He-normal weights for relu, Glorot-normal for tanh/sin; zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ConfigurationError(f"invalid architecture {sizes}")
    if sizes[-1] != 1:
        raise ConfigurationError("networks are scalar valued")
    if sizes[0] != input_dim(encoding):
        raise ConfigurationError(f"input width {sizes[0]} does not match {encoding} encoding")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if activation == "relu":
            std = np.sqrt(2.0 / fan_in)
        else:
            std = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, std, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, activation, tuple(weights), tuple(biases), encoding)


def arch_sizes(width: int, depth: int, encoding: str = "plain") -> tuple[int, ...]:
    """Layer sizes for ``depth`` hidden layers of equal ``width``."""
    return (input_dim(encoding),) + (int(width),) * int(depth) + (1,)


# -- numpy evaluation -------------------------------------------------------


def features(x: np.ndarray, encoding: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if encoding == "periodic":
        lam = x[:, :1]
        return np.hstack([np.cos(np.pi * lam), np.sin(np.pi * lam), x[:, 1:]])
    return x


_ACT = {"relu": lambda z: np.maximum(z, 0.0), "tanh": np.tanh, "sin": np.sin}


def eval_solution(params: MlpParams, x) -> np.ndarray:
    """Network output at chart points ``x`` of shape (n, 3); returns shape (n,)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h = features(x, params.encoding)
    act = _ACT[params.activation]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = act(h)
    return h[:, 0]


# -- tape evaluation --------------------------------------------------------


@dataclass
class NetNodes:
    out: int
    param_ids: list[int]


def _tape_features(tape: Tape, x_id: int, encoding: str) -> int:
    if encoding != "periodic":
        return x_id
    # [cos pi lam, sin pi lam, phi, t] = x A^T + sin(x B^T + c) * mask
    a = np.zeros((4, 3))
    a[2, 1] = a[3, 2] = 1.0
    b = np.zeros((4, 3))
    b[0, 0] = b[1, 0] = np.pi
    shift = np.array([np.pi / 2, 0.0, 0.0, 0.0])
    mask = np.array([1.0, 1.0, 0.0, 0.0])
    lin = tape.linear(x_id, tape.constant(a))
    trig = tape.sin(tape.add(tape.linear(x_id, tape.constant(b)), tape.constant(shift)))
    return tape.add(lin, tape.mul(trig, tape.constant(mask)))


def mlp_param_nodes(tape: Tape, params: MlpParams, trainable: bool = True) -> list[int]:
    """Record W_0, v_1, W_1, ... as tape leaves."""
    leaf = tape.parameter if trainable else tape.constant
    pids = []
    for w, b in zip(params.weights, params.biases):
        pids += [leaf(w), leaf(b)]
    return pids


def mlp_apply(tape: Tape, params: MlpParams, pids: list[int], x_id: int) -> int:
    """Apply the network with parameter leaves ``pids`` to the (n, 3) node ``x_id``."""
    h = _tape_features(tape, x_id, params.encoding)
    act = {"relu": tape.relu, "tanh": tape.tanh, "sin": tape.sin}[params.activation]
    n_layers = len(params.weights)
    for i in range(n_layers):
        h = tape.add(tape.linear(h, pids[2 * i]), pids[2 * i + 1])
        if i < n_layers - 1:
            h = act(h)
    return h


def mlp_nodes(tape: Tape, params: MlpParams, x_id: int, trainable: bool = True) -> NetNodes:
    """Record the network on ``tape``; returns the (n, 1) output node."""
    pids = mlp_param_nodes(tape, params, trainable)
    return NetNodes(mlp_apply(tape, params, pids, x_id), pids)


def flatten_grads(grads: list[np.ndarray]) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


# -- cutoff and test function -----------------------------------------------


def _bump(x, lo, hi):
    half = (hi - lo) / 2
    val = (x - lo) * (hi - x) / half ** 2
    der = ((hi - x) - (x - lo)) / half ** 2
    return val, der


@dataclass(frozen=True)
class CutoffSpec:
    """omega(lam, phi, t) = b(lam) * b(phi) * tau(t) with quadratic bumps.

    ``b(lam)`` is dropped on periodic domains. With ``time_factor`` the bump
    ``tau(t) = 4 t (T - t) / T^2`` makes test functions vanish at t = 0 and T.
    """

    domain: Domain
    form: str = "polynomial-bump"
    time_factor: bool = True

    def __post_init__(self):
        if self.form != "polynomial-bump":
            raise ConfigurationError(f"unsupported cutoff form {self.form!r}")

    def evaluate(self, x: np.ndarray):
        """Return (omega, d_t omega, d_lam omega, d_phi omega), each shape (n,)."""
        x = np.atleast_2d(x)
        lam, phi, t = x[:, 0], x[:, 1], x[:, 2]
        d = self.domain
        if d.periodic_lambda:
            bl, dbl = np.ones_like(lam), np.zeros_like(lam)
        else:
            bl, dbl = _bump(lam, *d.lambda_range)
        bp, dbp = _bump(phi, *d.phi_range)
        if self.time_factor:
            bt, dbt = _bump(t, 0.0, d.T)
        else:
            bt, dbt = np.ones_like(t), np.zeros_like(t)
        return bl * bp * bt, bl * bp * dbt, dbl * bp * bt, bl * dbp * bt


TRANSFORMS = ("square", "none")


@dataclass
class AdversaryNodes:
    xi: int
    dt: int
    dlam: int
    dphi: int
    param_ids: list[int]


def adversary_nodes(tape: Tape, params: MlpParams, cutoff: CutoffSpec, x: np.ndarray,
                  transform: str = "square") -> AdversaryNodes:
    """Record xi = omega * g(net) and its chart partials on ``tape``.

    ``g`` is squaring by default, which keeps xi nonnegative; ``"none"`` uses
    the raw network. Input partials of the network come from the
    graph-extending reverse sweep, so every returned node can be
    differentiated with respect to the network parameters.
    """
    if transform not in TRANSFORMS:
        raise ConfigurationError(f"unknown test-function transform {transform!r}")
    from wpinn.autodiff import input_grad_node

    x = np.asarray(x, dtype=np.float64)
    x_id = tape.input(x)
    net = mlp_nodes(tape, params, x_id)
    xt = tape.square(net.out) if transform == "square" else net.out
    dx = input_grad_node(tape, xt, x_id)  # (n, 3): d/dlam, d/dphi, d/dt
    om, om_t, om_l, om_p = (tape.constant(v[:, None]) for v in cutoff.evaluate(x))

    def col(j):
        sel = np.zeros((1, 3))
        sel[0, j] = 1.0
        return tape.linear(dx, tape.constant(sel))

    def product(d_omega, j):
        return tape.add(tape.mul(d_omega, xt), tape.mul(om, col(j)))

    xi = tape.mul(om, xt)
    return AdversaryNodes(xi, product(om_t, 2), product(om_l, 0), product(om_p, 1), net.param_ids)


def eval_test_fn(params: MlpParams, cutoff: CutoffSpec, x, transform: str = "square"):
    """Numeric (xi, d_t xi, d_lam xi, d_phi xi) at points ``x`` (each shape (n,))."""
    tape = Tape()
    nodes = adversary_nodes(tape, params, cutoff, np.atleast_2d(x), transform)
    return tuple(tape.value(k)[:, 0] for k in (nodes.xi, nodes.dt, nodes.dlam, nodes.dphi))


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(path, params: MlpParams, seed: int = 0, epoch: int = 0,
                    best_loss: float = float("nan"), extra: dict | None = None) -> Path:
    """Write a text checkpoint: ``key = value`` header, then one parameter per line."""
    path = Path(path)
    lines = [
        "# wpinn checkpoint v1",
        "arch = " + ",".join(str(s) for s in params.sizes),
        f"activation = {params.activation}",
        f"encoding = {params.encoding}",
        f"seed = {seed}",
        f"epoch = {epoch}",
        f"best_loss = {best_loss!r}",
    ]
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    lines.append(f"params = {params.n_params}")
    lines += [format(float(v), ".17g") for v in params.flat()]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    header: dict[str, str] = {}
    values: list[float] = []
    in_params = False
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if in_params:
            values.append(float(line))
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        header[key] = val
        if key == "params":
            in_params = True
    sizes = tuple(int(s) for s in header["arch"].split(","))
    params = from_flat(sizes, header["activation"], np.array(values), header.get("encoding", "plain"))
    return params, header
