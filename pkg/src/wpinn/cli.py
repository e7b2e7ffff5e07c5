"""Command-line runner: train, export, sweep and verify.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import itertools
import json
import logging
import subprocess
import sys
import time
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from wpinn import __version__
from wpinn.autodiff import ConfigurationError
from wpinn.geometry import SingularityError
from wpinn.network import eval_solution, load_checkpoint, save_checkpoint
from wpinn.reference import EXPERIMENTS, ExperimentSpec, NumericalError, get_experiment
from wpinn.trainer import EnsembleResult, TrainConfig, TrainingAborted, average_predictor, ensemble_train

log = logging.getLogger("wpinn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3

# section -> keys; TrainConfig fields keep their names
SECTIONS = {
    "problem": ("experiment", "T", "entropy"),
    "network": ("arch_theta", "arch_eta", "activation_theta", "activation_eta", "test_transform", "time_cutoff"),
    "training": ("N_min", "N_max", "N_c", "N_ep", "tau_min", "tau_max", "rho", "r", "optimizer",
                 "ensemble_size", "seed", "c_margin"),
    "sampling": ("N_int", "N_tb", "N_ini", "generator"),
}
KEY_SECTION = {k: s for s, keys in SECTIONS.items() for k in keys}
REQUIRED = ("experiment", "N_int", "N_tb", "N_ini", "N_ep")
_FIELD_TYPES = {f.name: f.type for f in fields(TrainConfig)}

RESULTS_SCHEMA = {
    "type": "object",
    "required": ["experiment", "entropy", "E_T_ensemble", "E_T_members", "best_loss_members",
                 "config_hash", "wall_time_s"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "entropy": {"type": "string"},
        "E_T_ensemble": {"type": "number", "minimum": 0},
        "E_T_members": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "best_loss_members": {"type": "array", "items": {"type": "number"}, "minItems": 1},
        "config_hash": {"type": "string", "pattern": "^[0-9a-f]{16}$"},
        "wall_time_s": {"type": "number", "minimum": 0},
        "seeds": {"type": "array", "items": {"type": "integer"}},
        "failed_members": {"type": "array"},
    },
}


@dataclass
class RunConfig:
    experiment: str
    T: float | None
    train: TrainConfig

    def digest(self) -> str:
        text = dump_config(self, canonical=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


# -- config parsing -------------------------------------------------------------


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key == "experiment":
        if raw not in EXPERIMENTS:
            raise ConfigurationError(f"experiment must be one of {EXPERIMENTS}")
        return raw
    if key == "T":
        return None if raw.lower() in ("", "default") else float(raw)
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None
    return raw


def _is_list(raw: str) -> bool:
    raw = raw.strip()
    return raw.startswith("[") and raw.endswith("]")


def _split_list(raw: str) -> list[str]:
    items = [p.strip() for p in raw.strip()[1:-1].split(",")]
    items = [p for p in items if p]
    if not items:
        raise ConfigurationError("empty list value")
    return items


def read_raw(text: str) -> dict[str, str]:
    """Flat key -> raw string map; rejects unknown sections, unknown or misplaced keys."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",), inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep key case
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config: {exc}") from None
    out: dict[str, str] = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"unknown section [{section}]")
        for key, value in cp.items(section):
            if key not in KEY_SECTION:
                raise ConfigurationError(f"unknown key {key!r} in [{section}]")
            if KEY_SECTION[key] != section:
                raise ConfigurationError(f"key {key!r} belongs in [{KEY_SECTION[key]}]")
            out[key] = value
    missing = [k for k in REQUIRED if k not in out]
    if missing:
        raise ConfigurationError(f"missing required key(s): {', '.join(missing)}")
    return out


def build_config(raw: dict[str, str]) -> RunConfig:
    values = {k: _convert(k, v) for k, v in raw.items()}
    experiment = values.pop("experiment")
    T = values.pop("T", None)
    cfg = TrainConfig(**values).validate()
    return RunConfig(experiment, T, cfg)


def parse_config(text: str) -> RunConfig:
    raw = read_raw(text)
    lists = [k for k, v in raw.items() if _is_list(v)]
    if lists:
        raise ConfigurationError(f"list values ({', '.join(lists)}) are only allowed for sweep")
    return build_config(raw)


def dump_config(rc: RunConfig, canonical: bool = False) -> str:
    vals = rc.train.to_dict()
    vals["experiment"] = rc.experiment
    vals["T"] = "default" if rc.T is None else repr(float(rc.T))
    lines = [] if canonical else [f"# wpinn {__version__}"]
    for section, keys in SECTIONS.items():
        lines.append(f"[{section}]")
        for k in keys:
            v = vals[k]
            lines.append(f"{k} = {repr(v) if isinstance(v, float) else v}")
        lines.append("")
    return "\n".join(lines)


def load_config_file(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None


def bundled_config(name: str = "standing_desk.cfg") -> str:
    return resources.files("wpinn").joinpath("configs", name).read_text()


# -- results ----------------------------------------------------------------------


def results_payload(rc: RunConfig, ens: EnsembleResult, wall: float) -> dict:
    payload = {
        "experiment": rc.experiment,
        "entropy": rc.train.entropy,
        "E_T_ensemble": float(ens.E_T),
        "E_T_members": [float(m.E_T) for m in ens.members],
        "best_loss_members": [float(m.best_loss) for m in ens.members],
        "config_hash": rc.digest(),
        "wall_time_s": float(wall),
        "seeds": [int(m.seed) for m in ens.members],
        "failed_members": [{"seed": s, "error": e} for s, e in ens.failures],
    }
    jsonschema.validate(payload, RESULTS_SCHEMA)
    return payload


def write_loss_log(path, rows: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "L_int", "L_tb", "L_sb", "L_max", "argmax_c"])
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def source_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def run_training(rc: RunConfig, out_dir: Path, threads: int | None = None) -> dict:
    """Train the ensemble and write results, logs, checkpoints and a manifest."""
    exp = get_experiment(rc.experiment, rc.T)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    ens = ensemble_train(rc.train, exp, threads=threads)
    wall = time.perf_counter() - start
    outputs = []
    (out_dir / "config.cfg").write_text(dump_config(rc))
    outputs.append("config.cfg")
    for k, m in enumerate(ens.members):
        sub = out_dir / f"member_{k}"
        sub.mkdir(exist_ok=True)
        write_loss_log(sub / "loss_log.csv", m.log_rows)
        save_checkpoint(sub / "theta.ckpt", m.best_params, m.seed, m.best_epoch, m.best_loss,
                        {"experiment": rc.experiment, "T": exp.T})
        save_checkpoint(sub / "eta.ckpt", m.best_eta, m.seed, m.best_epoch, m.best_loss)
        outputs += [f"member_{k}/loss_log.csv", f"member_{k}/theta.ckpt", f"member_{k}/eta.ckpt"]
    payload = results_payload(rc, ens, wall)
    (out_dir / "results.json").write_text(json.dumps(payload, indent=2) + "\n")
    outputs.append("results.json")
    manifest = {
        "config": rc.train.to_dict() | {"experiment": rc.experiment, "T": exp.T},
        "source_revision": source_revision(),
        "seeds": payload["seeds"],
        "outputs": outputs,
        "wall_time_s": wall,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    missing = [p for p in outputs if not (out_dir / p).exists()]
    if missing:
        raise RuntimeError(f"outputs missing after run: {missing}")
    return payload


# -- export -----------------------------------------------------------------------


def parse_grid(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.replace("x", ",").split(","))
    except ValueError:
        raise ConfigurationError(f"grid must look like NLAM,NPHI,NT, got {text!r}") from None
    if len(parts) != 3:
        raise ConfigurationError("grid needs three sizes")
    if min(parts) < 1:
        raise ConfigurationError("grid sizes must be positive")
    return parts


def export_grid(predict: Callable, exp: ExperimentSpec, n_lam: int, n_phi: int, n_t: int,
                phi0: bool = False) -> np.ndarray:
    """Rows (lambda, phi, t, u_pred, u_ref, abs_err) on a tensor grid."""
    if min(n_lam, n_t) < 1 or (not phi0 and n_phi < 1):
        raise ConfigurationError("empty grid")
    (a, b), (lo, hi) = exp.domain.lambda_range, exp.domain.phi_range
    lam = np.linspace(a, b, n_lam)
    phi = np.array([0.0]) if phi0 else (np.linspace(lo, hi, n_phi) if n_phi > 1 else np.array([0.5 * (lo + hi)]))
    t = np.linspace(0.0, exp.T, n_t)
    L, P, Tt = np.meshgrid(lam, phi, t, indexing="ij")
    pts = np.column_stack([L.ravel(), P.ravel(), Tt.ravel()])
    pred = np.asarray(predict(pts), float)
    ref = exp.exact(pts)
    return np.column_stack([pts, pred, ref, np.abs(pred - ref)])


def write_solution_csv(path, rows: np.ndarray) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "phi", "t", "u_pred", "u_ref", "abs_err"])
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    return path


# -- sweep -------------------------------------------------------------------------


def sweep_cells(raw: dict[str, str], cap: int) -> tuple[list[str], list[RunConfig]]:
    keys = [k for k, v in raw.items() if _is_list(v)]
    if not keys:
        raise ConfigurationError("sweep needs at least one list-valued key")
    choices = [_split_list(raw[k]) for k in keys]
    total = int(np.prod([len(c) for c in choices]))
    if total > cap:
        raise ConfigurationError(f"sweep has {total} cells, above the cap of {cap}")
    cells = []
    for combo in itertools.product(*choices):
        cell = dict(raw)
        cell.update(zip(keys, combo))
        cells.append(build_config(cell))
    return keys, cells


def run_sweep(raw: dict[str, str], out_dir: Path, cap: int, threads: int | None = None) -> list[dict]:
    keys, cells = sweep_cells(raw, cap)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rc in enumerate(cells):
        vals = rc.train.to_dict() | {"experiment": rc.experiment}
        payload = run_training(rc, out_dir / f"cell_{i:03d}", threads)
        rows.append({k: vals[k] for k in keys} | {
            "E_T": payload["E_T_ensemble"],
            "best_loss_mean": float(np.mean(payload["best_loss_members"])),
            "cell": f"cell_{i:03d}",
        })
    rows.sort(key=lambda r: r["E_T"])
    with (out_dir / "summary.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return rows


# -- commands ----------------------------------------------------------------------


def cmd_train(args) -> int:
    text = bundled_config() if args.config == "standing_desk" else load_config_file(args.config)
    rc = parse_config(text)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.ensemble is not None:
        overrides["ensemble_size"] = args.ensemble
    if args.epochs is not None:
        overrides["N_ep"] = args.epochs
    if overrides:
        rc = replace(rc, train=replace(rc.train, **overrides).validate())
    payload = run_training(rc, Path(args.out), args.threads)
    print(json.dumps({k: payload[k] for k in ("experiment", "entropy", "E_T_ensemble", "E_T_members")}))
    return EXIT_OK


def cmd_export(args) -> int:
    n_lam, n_phi, n_t = parse_grid(args.grid)
    params, headers = [], []
    for path in args.checkpoint:
        try:
            p, h = load_checkpoint(path)
        except OSError as exc:
            raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from None
        params.append(p)
        headers.append(h)
    name = args.experiment or headers[0].get("experiment")
    if name is None:
        raise ConfigurationError("experiment not given and not recorded in the checkpoint")
    T = args.T if args.T is not None else (float(headers[0]["T"]) if "T" in headers[0] else None)
    exp = get_experiment(name, T)
    predict = average_predictor(params) if len(params) > 1 else (lambda x: eval_solution(params[0], x))
    rows = export_grid(predict, exp, n_lam, n_phi, n_t, args.phi0)
    write_solution_csv(args.out, rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    raw = read_raw(load_config_file(args.config))
    rows = run_sweep(raw, Path(args.out), args.cap, args.threads)
    for r in rows:
        print(", ".join(f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_verify(args) -> int:
    from wpinn.verify import SUITES, format_table

    rows = SUITES[args.suite]()
    print(format_table(rows))
    failed = sum(not r.ok for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wpinn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an ensemble from a config file")
    t.add_argument("config", help="config path, or 'standing_desk' for the bundled example")
    t.add_argument("--out", default="run", help="output directory")
    t.add_argument("--seed", type=int)
    t.add_argument("--ensemble", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--threads", type=int, help="parallel members (default: WPINN_THREADS or 1)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("export", help="evaluate checkpoints on a grid and write a CSV")
    e.add_argument("checkpoint", nargs="+", help="one or more theta checkpoints (averaged)")
    e.add_argument("--experiment", choices=EXPERIMENTS)
    e.add_argument("--T", type=float)
    e.add_argument("--grid", default="128,32,32", help="NLAM,NPHI,NT")
    e.add_argument("--phi0", action="store_true", help="single slice at phi = 0")
    e.add_argument("--out", default="solution.csv")
    e.set_defaults(func=cmd_export)

    s = sub.add_parser("sweep", help="train every combination of list-valued keys")
    s.add_argument("config")
    s.add_argument("--out", default="sweep")
    s.add_argument("--cap", type=int, default=64, help="maximum number of cells")
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify", help="run an invariant suite")
    v.add_argument("suite", choices=("construct", "gradcheck", "geometry", "reference"))
    v.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on usage errors
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, NumericalError, SingularityError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # anything else is reported as a failed run
        log.debug("unhandled", exc_info=True)
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
