"""Experiment protocol: config files, replicated runs, reports and saved states."""
from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataError, Split, Standardizer, ingest, make_split, teacher_student, toy_sine
from .distributions import GammaParams, InvGammaParams
from .evaluation import evaluate, predictive
from .model import NetworkSpec, TrainingFault
from .pruning import PruneConfig, apply_prune, fine_tune, prediction_deviation, prune_report
from .trainer import TrainConfig, substream, train
from .variational import FAMILIES, Posterior

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
REPORT_SCHEMA_VERSION = 1
REPORT_DIR_ENV = "HSBNN_REPORT_DIR"
SYNTHETIC = ("toy_sine", "teacher_student")


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration (exit code 2)."""


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _widths(v: str) -> tuple:
    return tuple(int(k) for k in str(v).replace(" ", "").split(",") if k)


# key -> (parser, default)
CONFIG_KEYS = {
    "version": (int, CONFIG_VERSION),
    "dataset": (str, "toy_sine"),
    "delimiter": (str, ""),
    "header": (_bool, False),
    "n_train": (int, 100),
    "n_test": (int, 1000),
    "noise_std": (float, 0.1),
    "train_fraction": (float, 0.9),
    "replications": (int, 1),
    "hidden_widths": (_widths, (50,)),
    "nonlinearity": (str, "relu"),
    "prior": (str, "reg_hs"),
    "family": (str, "structured"),
    "b0": (float, 1.0),
    "bg": (float, 1e-5),
    "b_kappa": (float, 5.0),
    "c_a": (float, 2.0),
    "c_b": (float, 6.0),
    "learning_rate": (float, 0.005),
    "batch_size": (int, 128),
    "iterations": (int, 1000),
    "mc_samples": (int, 1),
    "adam_beta1": (float, 0.9),
    "adam_beta2": (float, 0.999),
    "adam_eps": (float, 1e-8),
    "unit_norm_projection": (_bool, True),
    "seed": (int, 0),
    "eval_samples": (int, 100),
    "prune": (_bool, True),
    "delta": (float, 1e-3),
    "p0": (float, 0.9),
    "weight_norm_samples": (int, 200),
    "fine_tune_iterations": (int, 0),
    "save_state": (_bool, True),
    "plot_grid_points": (int, 200),
    "report_dir": (str, "reports"),
    "interval_low": (float, -4.0),
    "interval_high": (float, 4.0),
    "gamma_shape": (float, 6.0),
    "gamma_rate": (float, 6.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def to_dict(self) -> dict:
        out = {}
        for k, v in sorted(self.values.items()):
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def network_spec(self, input_dim: int) -> NetworkSpec:
        return NetworkSpec(
            (input_dim, *self.hidden_widths, 1),
            nonlinearity=self.nonlinearity,
            b0=self.b0,
            bg=self.bg,
            b_kappa=self.b_kappa,
            c_a=self.c_a,
            c_b=self.c_b,
            prior=self.prior,
            gamma_prior=GammaParams(self.gamma_shape, self.gamma_rate),
        )

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            iterations=self.iterations,
            mc_samples=self.mc_samples,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            unit_norm_projection=self.unit_norm_projection,
            seed=seed,
        )

    def prune_config(self) -> PruneConfig:
        return PruneConfig(self.delta, self.p0)


def make_config(overrides: dict | None = None) -> ExperimentConfig:
    """Defaults updated with `overrides`; values may be strings or typed."""
    values = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    for k, v in (overrides or {}).items():
        if k not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {k!r}")
        parser = CONFIG_KEYS[k][0]
        try:
            values[k] = parser(v) if isinstance(v, str) else (tuple(v) if k == "hidden_widths" else v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {k}: {v!r} ({exc})") from None
    cfg = ExperimentConfig(values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.version}; expected {CONFIG_VERSION}")
    if cfg.family not in FAMILIES:
        raise ConfigError(f"family must be one of {FAMILIES}")
    if cfg.prior == "gaussian" and cfg.family != "factorized":
        raise ConfigError("the gaussian prior supports only the factorized family")
    if cfg.replications < 1:
        raise ConfigError("replications must be at least 1")
    if not cfg.hidden_widths:
        raise ConfigError("hidden_widths must list at least one width")
    if cfg.n_train < 1 or cfg.n_test < 1 or cfg.eval_samples < 1:
        raise ConfigError("n_train, n_test and eval_samples must be positive")
    try:
        cfg.network_spec(1)
        cfg.train_config(cfg.seed)
        cfg.prune_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config_text(text: str) -> dict:
    """Flat `key = value` lines; `#` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    if "version" not in out:
        raise ConfigError("config file must declare a version")
    return out


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    values = parse_config_text(text)
    values.update(overrides or {})
    return make_config(values)


def format_config(cfg: ExperimentConfig) -> str:
    lines = [f"version = {cfg.version}"]
    for k, v in cfg.to_dict().items():
        if k == "version":
            continue
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def report_dir(cfg: ExperimentConfig | None = None) -> Path:
    """The environment variable wins over the config value."""
    env = os.environ.get(REPORT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.report_dir if cfg is not None else "reports")


# --------------------------------------------------------------------------
# data


def load_split(cfg: ExperimentConfig, seed: int) -> tuple[Split, np.ndarray]:
    """Standardized split and the test targets in original units."""
    rng = substream(seed, "data")
    if cfg.dataset in SYNTHETIC:
        n = cfg.n_train + cfg.n_test
        if cfg.dataset == "toy_sine":
            x, y = toy_sine(n, rng, cfg.noise_std, (cfg.interval_low, cfg.interval_high))
        else:
            x, y = teacher_student(n, rng, noise_std=cfg.noise_std)
        split = make_split(x, y, np.arange(cfg.n_train), np.arange(cfg.n_train, n))
        return split, y[cfg.n_train:]
    delimiter = cfg.delimiter or None
    split = ingest(cfg.dataset, cfg.train_fraction, rng, delimiter, cfg.header)
    return split, split.stats.inverse_y(split.y_test)


# --------------------------------------------------------------------------
# state files


def save_state(path, post: Posterior, stats: Standardizer | None = None) -> None:
    arrays = {f"param/{k}": np.asarray(v) for k, v in post.params.items()}
    for k, v in post.aux.items():
        arrays[f"aux/{k}/shape"] = np.asarray(v.shape)
        arrays[f"aux/{k}/rate"] = np.asarray(v.rate)
    meta = {"spec": post.spec.to_dict(), "family": post.family, "stats": stats.to_dict() if stats else None}
    arrays["meta"] = np.asarray(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_state(path) -> tuple[Posterior, Standardizer | None]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        post = Posterior(NetworkSpec.from_dict(meta["spec"]), meta["family"])
        aux = {}
        for key in data.files:
            if key.startswith("param/"):
                post.params[key[len("param/"):]] = np.array(data[key], dtype=float)
            elif key.startswith("aux/"):
                name, field = key[len("aux/"):].rsplit("/", 1)
                aux.setdefault(name, {})[field] = np.array(data[key], dtype=float)
        post.aux = {k: InvGammaParams(v["shape"], v["rate"]) for k, v in aux.items()}
    stats = Standardizer.from_dict(meta["stats"]) if meta["stats"] else None
    return post, stats


# --------------------------------------------------------------------------
# reports


def _finite(v):
    v = float(v)
    return v if math.isfinite(v) else None


def elbo_summary(trace) -> dict:
    t = np.asarray(trace, dtype=float)
    if t.size == 0:
        return {"iterations": 0, "first": None, "last": None, "mean_last_100": None, "max": None}
    return {
        "iterations": int(t.size),
        "first": _finite(t[0]),
        "last": _finite(t[-1]),
        "mean_last_100": _finite(np.mean(t[-100:])),
        "max": _finite(np.max(t)),
    }


def predictive_table(post: Posterior, stats: Standardizer, cfg: ExperimentConfig, seed: int) -> str:
    """Tab-separated grid, mean and +-2 std bands for 1-D inputs (original units)."""
    lo, hi = cfg.interval_low, cfg.interval_high
    grid = np.linspace(lo, hi, cfg.plot_grid_points)
    x = stats.transform_x(grid[:, None])
    pred = predictive(post, x, cfg.eval_samples, substream(seed, "eval"), stats)
    rows = ["x\tmean\tlower\tupper\tstd"]
    for g, m, s in zip(grid, pred.mean, pred.std):
        rows.append(f"{g:.6g}\t{m:.6g}\t{m - 2 * s:.6g}\t{m + 2 * s:.6g}\t{s:.6g}")
    return "\n".join(rows) + "\n"


def run_replication(cfg: ExperimentConfig, r: int, out_dir: Path | None = None) -> dict:
    """One ingest -> train -> evaluate -> prune -> fine-tune pass; never raises for stage faults."""
    seed = cfg.seed + r
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "replication": r,
        "seed": seed,
        "status": "ok",
        "failure": None,
        "metrics": None,
        "elbo": None,
        "prune": None,
        "pruned_metrics": None,
        "fine_tuned_metrics": None,
    }
    started = time.perf_counter()
    stamp = _dt.datetime.now(_dt.timezone.utc).isoformat()
    stage = "ingest"
    try:
        split, y_test = load_split(cfg, seed)
        stage = "train"
        spec = cfg.network_spec(split.x_train.shape[1])
        tcfg = cfg.train_config(seed)
        state, trace = train(spec, cfg.family, tcfg, split.x_train, split.y_train)
        post = state.posterior
        report["elbo"] = elbo_summary(trace)
        stage = "evaluate"

        def metrics(p):
            rmse, ll = evaluate(p, split.x_test, y_test, split.stats, cfg.eval_samples, substream(seed, "eval"))
            return {"rmse": _finite(rmse), "log_likelihood": _finite(ll)}

        report["metrics"] = metrics(post)
        if out_dir is not None:
            if cfg.save_state:
                save_state(out_dir / f"state_r{r}.npz", post, split.stats)
            if split.x_train.shape[1] == 1:
                (out_dir / f"predictive_r{r}.tsv").write_text(predictive_table(post, split.stats, cfg, seed))
        if cfg.prune and spec.shrinkage:
            stage = "prune"
            prep = prune_report(post, cfg.prune_config(), cfg.weight_norm_samples, substream(seed, "prune"))
            pruned = apply_prune(post, prep)
            probe = substream(seed, "prune").standard_normal((100, spec.input_dim))
            prep.max_prediction_deviation = prediction_deviation(post, pruned, probe, cfg.eval_samples, seed)
            report["prune"] = prep.to_dict()
            report["pruned_metrics"] = metrics(pruned)
            if cfg.fine_tune_iterations > 0:
                stage = "fine_tune"
                tuned = fine_tune(pruned, tcfg, split.x_train, split.y_train, cfg.fine_tune_iterations)
                report["fine_tuned_metrics"] = metrics(tuned)
                pruned = tuned
            if out_dir is not None and cfg.save_state:
                save_state(out_dir / f"state_r{r}_pruned.npz", pruned, split.stats)
    except TrainingFault as exc:
        report["status"] = "failed"
        report["failure"] = {"stage": stage, "kind": "numerical", "message": str(exc), "diagnostics": _jsonable(exc.diagnostics)}
    except (DataError, ValueError, OSError) as exc:
        report["status"] = "failed"
        report["failure"] = {"stage": stage, "kind": "input", "message": str(exc), "diagnostics": None}
    report["timestamp"] = {"started_utc": stamp, "wall_clock_seconds": time.perf_counter() - started}
    return report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def aggregate(reports: list) -> dict:
    ok = [r for r in reports if r["status"] == "ok"]
    out = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "replications": len(reports),
        "succeeded": len(ok),
        "failed": [r["replication"] for r in reports if r["status"] != "ok"],
    }
    for key in ("metrics", "pruned_metrics", "fine_tuned_metrics"):
        rows = [r[key] for r in ok if r[key] is not None]
        if not rows:
            out[key] = None
            continue
        summary = {}
        for m in ("rmse", "log_likelihood"):
            vals = np.array([row[m] for row in rows if row[m] is not None], dtype=float)
            summary[m] = {
                "mean": _finite(vals.mean()) if vals.size else None,
                "std": _finite(vals.std(ddof=1)) if vals.size > 1 else None,
            }
        out[key] = summary
    kept = [r["prune"]["kept"] for r in ok if r["prune"] is not None]
    out["mean_kept_units"] = float(np.mean(kept)) if kept else None
    out["timestamp"] = {
        "wall_clock_seconds": float(sum(r["timestamp"]["wall_clock_seconds"] for r in reports)),
    }
    return out


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> tuple[list, dict]:
    """Run every replication, writing one JSON file each plus `aggregate.json`."""
    out = Path(out_dir) if out_dir is not None else report_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for r in range(cfg.replications):
        log.info("replication %d/%d", r + 1, cfg.replications)
        rep = run_replication(cfg, r, out)
        (out / f"replication_{r}.json").write_text(dump_json(rep))
        reports.append(rep)
    agg = aggregate(reports)
    (out / "aggregate.json").write_text(dump_json(agg))
    return reports, agg


# --------------------------------------------------------------------------
# prior function samples


@dataclass
class PriorSamples:
    grid: np.ndarray
    hs: dict  # width -> (count, len(grid))
    reg_hs: dict

    def table(self) -> str:
        cols = ["x"]
        data = [self.grid]
        for width in sorted(self.hs):
            for name, store in (("hs", self.hs), ("reg_hs", self.reg_hs)):
                for j, row in enumerate(store[width]):
                    cols.append(f"{name}_w{width}_s{j}")
                    data.append(row)
        lines = ["\t".join(cols)]
        for i in range(len(self.grid)):
            lines.append("\t".join(f"{col[i]:.6g}" for col in data))
        return "\n".join(lines) + "\n"


def prior_sample_functions(
    widths=(50, 500, 5000),
    count: int = 5,
    seed: int = 0,
    grid=None,
    b0: float = 1.0,
    bg: float = 1.0,
    c_a: float = 2.0,
    c_b: float = 6.0,
    b_kappa: float = 5.0,
    nonlinearity: str = "tanh",
    c2_override: float | None = None,
) -> PriorSamples:
    """Matched function draws from one-hidden-layer HS and reg-HS networks.

    Both priors share every draw (beta, tau, upsilon, output weights); they
    differ only through the slab c^2, so c^2 -> inf makes them coincide.
    """
    grid = np.linspace(-3.0, 3.0, 201) if grid is None else np.asarray(grid, dtype=float)
    a = np.stack([grid, np.ones_like(grid)], axis=1)
    act = np.tanh if nonlinearity == "tanh" else (lambda u: np.maximum(u, 0.0))
    hs, reg = {}, {}
    for width in widths:
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(width)]))
        f_hs = np.empty((count, grid.size))
        f_reg = np.empty((count, grid.size))
        for j in range(count):
            beta = rng.standard_normal((2, width))
            tau2 = (b0 * rng.standard_cauchy(width)) ** 2
            ups2 = (bg * rng.standard_cauchy()) ** 2
            c2 = c_b / rng.gamma(c_a)  # drawn even when overridden so later draws stay matched
            c2 = c2 if c2_override is None else c2_override
            kappa = abs(b_kappa * rng.standard_cauchy())
            w_out = kappa * rng.standard_normal(width + 1)
            pre = a @ beta
            raw = tau2 * ups2
            f_hs[j] = act(pre * np.sqrt(raw)) @ w_out[:-1] + w_out[-1]
            scale2 = raw if np.isinf(c2) else c2 * raw / (c2 + raw)
            f_reg[j] = act(pre * np.sqrt(scale2)) @ w_out[:-1] + w_out[-1]
        hs[width], reg[width] = f_hs, f_reg
    return PriorSamples(grid, hs, reg)


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "PriorSamples",
    "aggregate",
    "load_config",
    "load_state",
    "make_config",
    "prior_sample_functions",
    "run_experiment",
    "run_replication",
    "save_state",
]
