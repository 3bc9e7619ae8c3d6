"""Command-line driver: simulate | infer | rolling | demo-failure | diagnostics.

Configuration lives in a YAML file; command-line flags override file values
(``--set dotted.key=value`` for anything without a dedicated flag).  Every
output carries a JSON manifest (config hash, seed, package version) so runs
can be replayed exactly.  Exit codes: 0 success, 1 config error, 2 numeric
failure, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .augment import CompleteData, ParamState, prior_by_name, refine
from .conjugate import (
    default_gamma_grid,
    default_hurst_grid,
    fcir_k0_posterior,
    fou_grid_posterior,
    fou_k0_grid,
)
from .errors import ConfigError, DataError, FracSdeError, NumericError
from .models import (
    FcirParams,
    FouParams,
    fou_exact_simulate,
    geometric_euler_failure_demo,
    model_by_name,
    simulate_fcir_path,
)
from .samplers import HmcConfig, chain_diagnostics, run_gibbs, run_hmc_full
from .toeplitz import as_generator, fgn_simulate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_DATA = 3


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(p) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ConfigError("config file must contain a mapping at top level")
    return cfg


def _apply_overrides(cfg: dict, pairs: list[str]) -> dict:
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        value = yaml.safe_load(raw)
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into non-mapping config key {part!r}")
        node[parts[-1]] = value
    return cfg


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _manifest(cfg: dict, seed, command: str) -> dict:
    return {
        "command": command,
        "config_sha256": _config_hash(cfg),
        "seed": seed,
        "version": __version__,
    }


def _get(cfg: dict, key: str, default=None, required: bool = False):
    node = cfg
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            if required:
                raise ConfigError(f"missing required config key {key!r}")
            return default
        node = node[part]
    return node


def _outdir(cfg: dict) -> Path:
    out = Path(_get(cfg, "output_dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# series files
# ---------------------------------------------------------------------------


def read_series(path: str) -> tuple[list, np.ndarray]:
    """Read a (time, value) CSV; returns raw time labels and the values.

    Times must be strictly increasing; numeric times must be uniformly
    spaced; missing values are rejected, never imputed (the inference
    assumes a regular grid with dt declared in the config).
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"series file not found: {path}")
    times: list = []
    values: list[float] = []
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise DataError("series file needs a header row with (time, value) columns")
        for lineno, row in enumerate(reader, start=2):
            if len(row) < 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns")
            t_raw, v_raw = row[0].strip(), row[1].strip()
            if v_raw == "" or v_raw.lower() in ("nan", "na"):
                raise DataError(f"{path}:{lineno}: missing value (gaps are rejected)")
            try:
                t = float(t_raw)
            except ValueError:
                try:
                    t = datetime.date.fromisoformat(t_raw).toordinal()
                except ValueError:
                    raise DataError(f"{path}:{lineno}: unparseable time {t_raw!r}") from None
            times.append(t_raw)
            values.append(float(v_raw))
            if len(values) >= 2:
                prev = times[-2]
                t_prev = float(prev) if _is_number(prev) else datetime.date.fromisoformat(prev).toordinal()
                if t <= t_prev:
                    raise DataError(f"{path}:{lineno}: time not strictly increasing")
    vals = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise DataError(f"{path}: non-finite values present")
    if times and _is_number(times[0]):
        t_num = np.array([float(t) for t in times])
        steps = np.diff(t_num)
        if len(steps) and not np.allclose(steps, steps[0], rtol=1e-6, atol=0.0):
            raise DataError(f"{path}: numeric time column is not uniformly spaced")
    return times, vals


def _is_number(s) -> bool:
    try:
        float(s)
        return True
    except (TypeError, ValueError):
        return False


def write_series(path: Path, values: np.ndarray, dt: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "value"])
        for i, v in enumerate(values):
            writer.writerow([f"{i * dt:.12g}", f"{v:.12g}"])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: dict) -> int:
    model_name = _get(cfg, "model", required=True)
    seed = _get(cfg, "seed", 0)
    sim = cfg.get("simulate", {})
    dt = float(_get(sim, "dt", 1.0))
    n_obs = int(_get(sim, "n_obs", 300))
    out = _outdir(cfg)
    rng = as_generator(seed)

    if model_name == "fou":
        params = FouParams(
            gamma_rev=float(_get(sim, "gamma", 1.0)),
            mu_mean=float(_get(sim, "mu", 0.0)),
            sigma=float(_get(sim, "sigma", 1.0)),
            hurst=float(_get(sim, "hurst", 0.75)),
        )
        path = fou_exact_simulate(params, n_obs + 1, dt, rng)
        meta = vars(params).copy() if hasattr(params, "__dict__") else params.__dict__
    elif model_name == "fcir":
        try:
            params = FcirParams(
                gamma_rev=float(_get(sim, "gamma", 2.0)),
                mu_mean=float(_get(sim, "mu", 0.05)),
                sigma=float(_get(sim, "sigma", 0.1)),
                hurst=float(_get(sim, "hurst", 0.6)),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        path = simulate_fcir_path(params, n_obs, dt, rng, refine=int(_get(sim, "refine", 64)))
        meta = {k: getattr(params, k) for k in ("gamma_rev", "mu_mean", "sigma", "hurst")}
        meta["beta"] = params.beta
    else:
        raise ConfigError(f"unknown model {model_name!r}")

    csv_path = out / f"{model_name}_path.csv"
    write_series(csv_path, path, dt)
    sidecar = _manifest(cfg, seed, "simulate")
    sidecar["params"] = {k: float(v) for k, v in meta.items()}
    sidecar["dt"] = dt
    sidecar["n_obs"] = n_obs
    _write_json(csv_path.with_suffix(".json"), sidecar)
    print(f"wrote {csv_path} ({len(path)} rows), seed={seed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------


def _hmc_config(inf: dict) -> HmcConfig:
    leap = inf.get("leapfrog", {}) or {}
    return HmcConfig(
        step_eps=leap.get("eps"),
        n_leapfrog=int(leap.get("steps", 10)),
        mass_policy=str(leap.get("mass", "identity")),
        n_warmup=int(inf.get("warmup", 1000)),
        x_snapshot_every=int(inf.get("snapshot_every", 100)),
    )


def _grids(inf: dict, dt: float) -> tuple[np.ndarray, np.ndarray]:
    g = inf.get("grid", {}) or {}

    def axis(spec, default):
        if spec is None:
            return default
        lo, hi, n = float(spec["min"]), float(spec["max"]), int(spec.get("n", 64))
        if spec.get("log", False):
            return np.geomspace(lo, hi, n)
        return np.linspace(lo, hi, n)

    gamma = axis(g.get("gamma"), default_gamma_grid(dt))
    hurst = axis(g.get("hurst"), default_hurst_grid())
    return gamma, hurst


def _init_state(inf: dict, model_name: str) -> ParamState | None:
    init = inf.get("init")
    if not init:
        return None
    names = ("gamma", "mu") if model_name == "fou" else ("gamma", "beta")
    theta = np.array([float(init[n]) for n in names])
    return ParamState(theta=theta, sigma=float(init["sigma"]), hurst=float(init["hurst"]))


def cmd_infer(cfg: dict) -> int:
    model_name = _get(cfg, "model", required=True)
    seed = _get(cfg, "seed", 0)
    inf = cfg.get("infer", {})
    sampler = _get(inf, "sampler", "hmc")
    dt = float(_get(inf, "dt", required=True))
    level = int(_get(inf, "level", 0))
    out = _outdir(cfg)
    manifest = _manifest(cfg, seed, f"infer:{sampler}")

    _, values = read_series(_get(inf, "input", required=True))

    if sampler == "grid":
        if model_name != "fou":
            raise ConfigError("grid sampler is implemented for the fou model")
        gamma_grid, hurst_grid = _grids(inf, dt)
        if level == 0:
            grid = fou_k0_grid(values, dt, gamma_grid, hurst_grid)
        else:
            grid = fou_grid_posterior(values, dt, level, gamma_grid, hurst_grid)
        grid.to_csv(out / "grid_density.csv")
        summary = {"manifest": manifest, "params": {}}
        for name in grid.axis_names:
            q = grid.quantile(name, [0.025, 0.5, 0.975])
            summary["params"][name] = {
                "mean": grid.mean(name),
                "q2.5": float(q[0]),
                "q50": float(q[1]),
                "q97.5": float(q[2]),
                "mode": grid.mode(name),
            }
        _write_json(out / "summary.json", summary)
        print(f"wrote {out / 'grid_density.csv'} and summary.json")
        return EXIT_OK

    if sampler == "k0-rejection":
        if model_name != "fcir":
            raise ConfigError("k0-rejection sampler is implemented for the fcir model")
        draws = fcir_k0_posterior(
            values, dt, int(_get(inf, "draws", 2000)), as_generator(seed)
        )
        with open(out / "draws.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["hurst", "gamma", "beta", "sigma2"])
            for row in zip(draws.hurst, draws.gamma, draws.beta, draws.sigma2):
                writer.writerow([f"{v:.12g}" for v in row])
        summary = {
            "manifest": manifest,
            "rejection_rate": draws.rejection_rate,
            "params": {
                name: {
                    "mean": float(np.mean(arr)),
                    "q2.5": float(np.percentile(arr, 2.5)),
                    "q50": float(np.percentile(arr, 50)),
                    "q97.5": float(np.percentile(arr, 97.5)),
                }
                for name, arr in (
                    ("hurst", draws.hurst),
                    ("gamma", draws.gamma),
                    ("beta", draws.beta),
                    ("sigma2", draws.sigma2),
                )
            },
        }
        _write_json(out / "summary.json", summary)
        print(f"wrote {out / 'draws.csv'} and summary.json (rejection rate {draws.rejection_rate:.3f})")
        return EXIT_OK

    if sampler not in ("hmc", "gibbs"):
        raise ConfigError(f"unknown sampler {sampler!r}")

    model = model_by_name(model_name)
    if model_name == "fcir":
        if np.any(values <= 0):
            raise DataError("fcir inference needs strictly positive observations")
        values = np.asarray(model.transform.forward(values))
    prior = prior_by_name(_get(inf, "prior", f"{model_name}-noninformative"))
    data = refine(CompleteData.from_observed(values, dt), level)
    config = _hmc_config(inf)
    runner = run_hmc_full if sampler == "hmc" else run_gibbs
    chain = runner(
        data,
        model,
        prior,
        config,
        int(_get(inf, "iterations", 10_000)),
        as_generator(seed),
        init_state=_init_state(inf, model_name),
    )

    with open(out / "draws.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(chain.param_names)
        for row in chain.draws:
            writer.writerow([f"{v:.12g}" for v in row])
    summary = chain.summary()
    summary["manifest"] = manifest
    _write_json(out / "summary.json", summary)
    if chain.acf is not None:
        with open(out / "diagnostics.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lag"] + [f"acf_{n}" for n in chain.param_names])
            for lag in range(chain.acf.shape[1]):
                writer.writerow([lag] + [f"{v:.8g}" for v in chain.acf[:, lag]])
    print(f"wrote {out / 'draws.csv'}, summary.json, diagnostics.csv")
    return EXIT_OK


# ---------------------------------------------------------------------------
# rolling windows
# ---------------------------------------------------------------------------


def _rolling_one(args):
    (model_name, window_values, dt, n_draws, seed, end_label) = args
    if np.any(np.asarray(window_values) <= 0):
        return (end_label, None, "non-positive values in window")
    if model_name == "fcir":
        draws = fcir_k0_posterior(np.asarray(window_values), dt, n_draws, as_generator(seed))
        h = draws.hurst
        return (
            end_label,
            (
                float(np.mean(h)),
                float(np.percentile(h, 2.5)),
                float(np.percentile(h, 97.5)),
                draws.rejection_rate,
            ),
            None,
        )
    # fou on the log scale
    grid = fou_k0_grid(np.log(np.asarray(window_values)), dt)
    q = grid.quantile("hurst", [0.025, 0.975])
    return (end_label, (grid.mean("hurst"), float(q[0]), float(q[1]), 0.0), None)


def cmd_rolling(cfg: dict) -> int:
    model_name = _get(cfg, "model", required=True)
    if model_name not in ("fou", "fcir"):
        raise ConfigError(f"unknown model {model_name!r}")
    seed = _get(cfg, "seed", 0)
    roll = cfg.get("rolling", {})
    dt = float(_get(roll, "dt", required=True))
    window = int(_get(roll, "window", required=True))
    n_draws = int(_get(roll, "draws", 2000))
    workers = int(_get(roll, "workers", 1))
    out = _outdir(cfg)

    times, values = read_series(_get(roll, "input", required=True))
    if window > len(values):
        raise ConfigError(f"window {window} longer than series ({len(values)} points)")

    stride = _get(roll, "stride")
    if stride is None:
        n_windows = int(_get(roll, "n_windows", 1000))
        if n_windows <= 1:
            stride = 1
        else:
            stride = max(1, round((len(values) - window) / (n_windows - 1)))
    stride = int(stride)
    starts = list(range(0, len(values) - window + 1, stride))
    logger.info("rolling: %d windows of %d points, stride %d", len(starts), window, stride)

    jobs = [
        (
            model_name,
            values[s : s + window],
            dt,
            n_draws,
            int(seed) + i,
            times[s + window - 1],
        )
        for i, s in enumerate(starts)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_rolling_one, jobs))
    else:
        results = [_rolling_one(job) for job in jobs]

    csv_path = out / "rolling.csv"
    n_skipped = 0
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_end", "hurst_mean", "hurst_q2.5", "hurst_q97.5", "rejection_rate"])
        for end_label, stats, reason in results:
            if stats is None:
                n_skipped += 1
                logger.warning("window ending %s skipped: %s", end_label, reason)
                continue
            writer.writerow([end_label] + [f"{v:.8g}" for v in stats])
    sidecar = _manifest(cfg, seed, "rolling")
    sidecar.update(
        {"windows": len(starts), "stride": stride, "window": window, "skipped": n_skipped}
    )
    _write_json(csv_path.with_suffix(".json"), sidecar)
    print(f"wrote {csv_path}: {len(starts) - n_skipped} windows (skipped {n_skipped}), stride={stride}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Euler failure demo
# ---------------------------------------------------------------------------


def cmd_demo_failure(cfg: dict) -> int:
    demo = cfg.get("demo_failure", {})
    hursts = _get(demo, "hurst", [0.3, 0.7])
    step_counts = _get(demo, "n_steps", [2**16])
    n_seeds = int(_get(demo, "n_seeds", 100))
    seed0 = int(_get(cfg, "seed", 0))
    out = _outdir(cfg)

    csv_path = out / "euler_failure.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["hurst", "n_steps", "seed", "euler_terminal", "exact_terminal"])
        for h in np.atleast_1d(hursts):
            for n in np.atleast_1d(step_counts):
                n = int(n)
                for s in range(n_seeds):
                    rng = as_generator(seed0 + s)
                    noise = fgn_simulate(float(h), 1.0 / n, n, rng)
                    euler = geometric_euler_failure_demo(float(h), n, noise=noise)
                    exact = float(np.exp(np.sum(noise)))  # X_1 = exp(B^H_1)
                    writer.writerow([h, n, seed0 + s, f"{euler:.8g}", f"{exact:.8g}"])
    sidecar = _manifest(cfg, seed0, "demo-failure")
    _write_json(csv_path.with_suffix(".json"), sidecar)
    print(f"wrote {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnostics over stored draws
# ---------------------------------------------------------------------------


def cmd_diagnostics(cfg: dict) -> int:
    diag = cfg.get("diagnostics", {})
    draws_path = _get(diag, "input", required=True)
    out = _outdir(cfg)
    p = Path(draws_path)
    if not p.exists():
        raise DataError(f"draws file not found: {draws_path}")
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    chain = np.asarray(rows)
    if chain.shape[0] < 10:
        raise DataError("need at least 10 draws for diagnostics")
    result = chain_diagnostics(chain, _get(diag, "max_lag"))
    with open(out / "diagnostics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag"] + [f"acf_{n}" for n in header])
        for lag in range(result.acf.shape[1]):
            writer.writerow([lag] + [f"{v:.8g}" for v in result.acf[:, lag]])
    summary = {
        "manifest": _manifest(cfg, _get(cfg, "seed", 0), "diagnostics"),
        "ess": {name: float(e) for name, e in zip(header, result.ess)},
        "iact": {name: float(i) for name, i in zip(header, result.iact())},
    }
    _write_json(out / "diagnostics.json", summary)
    print(f"wrote {out / 'diagnostics.csv'} and diagnostics.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracsde", description=__doc__)
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "infer", "rolling", "demo-failure", "diagnostics"):
        p = sub.add_parser(name)
        p.add_argument("-c", "--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--model", help="override config model")
        p.add_argument("--output-dir", help="override output directory")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override any config entry, dotted keys allowed",
        )
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "infer": cmd_infer,
    "rolling": cmd_rolling,
    "demo-failure": cmd_demo_failure,
    "diagnostics": cmd_diagnostics,
}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
        cfg = _load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.model is not None:
            cfg["model"] = args.model
        if args.output_dir is not None:
            cfg["output_dir"] = args.output_dir
        cfg = _apply_overrides(cfg, args.set)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FracSdeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
