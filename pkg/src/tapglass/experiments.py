"""Config-driven experiment grids with deterministic seed streams and outputs.

A config names one experiment kind and the (n, beta, seed) grid to run it
over; the runner executes every cell, isolates per-cell failures into error
rows, and emits rows sorted by coordinates, so the CSV bytes are identical
across runs and thread counts (wall-time column aside).

Seed discipline: every random object in a cell draws from a stream keyed by
the cell's coordinates, SeedSequence([master_seed, n, round(beta * 1e9),
stream_tag]).  Keying by coordinates rather than grid position means adding
a value to the grid never shifts the streams of existing cells.
"""

from __future__ import annotations

import hashlib
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from tapglass import amp as amp_mod
from tapglass import gibbs as gibbs_mod
from tapglass import tap as tap_mod
from tapglass.ensemble import build_instance
from tapglass.fixed_point import (
    FieldLaw,
    constant_field,
    field_from_spec,
    product_fixed_point,
    solve_fixed_point,
    theoretical_delta,
)
from tapglass.spectral import SpectralLaw, law_from_spec, semicircle

SCHEMA_VERSION = 1

KIND_FIXED_POINT = "fixed_point"
KIND_AMP = "amp"
KIND_GIBBS_EXACT = "gibbs_exact"
KIND_GIBBS_MCMC = "gibbs_mcmc"
KIND_TAP_VERIFY = "tap_verify"
KIND_CONCENTRATION = "concentration"
KIND_BAND = "band"
KIND_SE_CHECK = "se_check"

EXPERIMENT_KINDS = (
    KIND_FIXED_POINT,
    KIND_AMP,
    KIND_GIBBS_EXACT,
    KIND_GIBBS_MCMC,
    KIND_TAP_VERIFY,
    KIND_CONCENTRATION,
    KIND_BAND,
    KIND_SE_CHECK,
)

STREAM_INSTANCE = 1
STREAM_AMP = 2
STREAM_MCMC = 3
STREAM_DELTA = 4

BASE_COLUMNS = ("schema_version", "kind", "n", "beta", "seed", "n_replicas")
TAIL_COLUMNS = ("wall_time", "error")


def stream_seed(master_seed: int, n: int, beta: float, tag: int) -> int:
    """Derived integer seed for one named stream of one grid cell."""
    ss = np.random.SeedSequence(
        [int(master_seed), int(n), int(round(beta * 1e9)), int(tag)]
    )
    return int(ss.generate_state(1)[0])


class ConfigError(ValueError):
    """The experiment config is malformed."""


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    kind: str
    n_values: tuple[int, ...]
    beta_values: tuple[float, ...]
    seeds: tuple[int, ...]
    law: SpectralLaw
    law_spec: dict
    field: FieldLaw
    field_mode: str = "quantile"
    t_max: int = 8
    replica_counts: tuple[int, ...] = (8,)
    sweeps: int = 200
    burn_in: int = 50
    thin: int = 2
    delta: float = 0.2
    eta: float = 0.8
    mc_samples: int = 200_000
    threads: int = 1
    out: str | None = None

    def echo(self) -> dict:
        """The config as a dict using the same keys the parser accepts, so the
        echoed block in a summary can be rerun as-is."""
        return {
            "kind": self.kind,
            "n": list(self.n_values),
            "beta": list(self.beta_values),
            "seeds": list(self.seeds),
            "law": self.law_spec,
            "field": self.field.to_spec(),
            "field_mode": self.field_mode,
            "t_max": self.t_max,
            "n_replicas": list(self.replica_counts),
            "sweeps": self.sweeps,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "delta": self.delta,
            "eta": self.eta,
            "mc_samples": self.mc_samples,
        }


def _as_tuple(value, caster, name):
    if not isinstance(value, (list, tuple)):
        value = [value]
    if len(value) == 0:
        raise ConfigError(f"{name} must be nonempty")
    try:
        return tuple(caster(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} has a non-{caster.__name__} entry: {exc}") from exc


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    kind = obj.get("kind")
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(
            f"kind must be one of {', '.join(EXPERIMENT_KINDS)}; got {kind!r}"
        )
    for required in ("n", "beta", "seeds"):
        if required not in obj:
            raise ConfigError(f"config is missing the {required!r} list")
    law_spec = obj.get("law", {"kind": "semicircle"})
    try:
        law = law_from_spec(law_spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad spectral law: {exc}") from exc
    try:
        field = field_from_spec(obj.get("field", {"kind": "constant", "value": 1.0}))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad field law: {exc}") from exc
    field_mode = obj.get("field_mode", "quantile")
    if field_mode not in ("quantile", "iid"):
        raise ConfigError(f"field_mode must be quantile or iid, got {field_mode!r}")

    cfg = ExperimentConfig(
        kind=kind,
        n_values=_as_tuple(obj["n"], int, "n"),
        beta_values=_as_tuple(obj["beta"], float, "beta"),
        seeds=_as_tuple(obj["seeds"], int, "seeds"),
        law=law,
        law_spec=law_spec,
        field=field,
        field_mode=field_mode,
        t_max=int(obj.get("t_max", 8)),
        replica_counts=_as_tuple(obj.get("n_replicas", 8), int, "n_replicas"),
        sweeps=int(obj.get("sweeps", 200)),
        burn_in=int(obj.get("burn_in", 50)),
        thin=int(obj.get("thin", 2)),
        delta=float(obj.get("delta", 0.2)),
        eta=float(obj.get("eta", 0.8)),
        mc_samples=int(obj.get("mc_samples", 200_000)),
        threads=int(obj.get("threads", 1)),
        out=obj.get("out"),
    )
    if cfg.t_max < 1:
        raise ConfigError("t_max must be >= 1")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    if any(n < 1 for n in cfg.n_values):
        raise ConfigError("all n must be >= 1")
    if any(b < 0 for b in cfg.beta_values):
        raise ConfigError("all beta must be >= 0")
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(obj)


@dataclass(frozen=True, eq=False)
class ResultRow:
    schema_version: int
    kind: str
    n: int
    beta: float
    seed: int
    n_replicas: int
    metrics: dict
    wall_time: float
    error: str = ""


def _solve(cfg: ExperimentConfig, beta: float):
    if beta == 0.0:
        return product_fixed_point(cfg.field)
    return solve_fixed_point(beta, cfg.law, cfg.field)


def _build(cfg: ExperimentConfig, n: int, beta: float, seed: int):
    if beta == 0.0:
        raise ValueError("instances need beta > 0; the beta = 0 limit is analytic")
    return build_instance(
        n, beta, cfg.law, cfg.field,
        seed=stream_seed(seed, n, beta, STREAM_INSTANCE),
        field_mode=cfg.field_mode,
    )


def _cell_fixed_point(cfg, n, beta, seed):
    fp = _solve(cfg, beta)
    out = fp.to_dict()
    out["converged"] = int(out["converged"])
    del out["beta"]
    return out


def _cell_amp(cfg, n, beta, seed):
    fp = _solve(cfg, beta)
    inst = _build(cfg, n, beta, seed)
    traj = amp_mod.run_amp(inst, fp, cfg.t_max, stream_seed(seed, n, beta, STREAM_AMP))
    return {
        "q_star": fp.q_star,
        "y_diff_sq": float(traj.y_diff_sq[-1]),
        "m_norm_sq_over_n": float(traj.m_norm_sq[-1]),
        "m_norm_gap": float(abs(traj.m_norm_sq[-1] - fp.q_star)),
        "tap_residual": tap_mod.tap_residual(inst, fp, traj.final.m),
    }


def _cell_gibbs_exact(cfg, n, beta, seed):
    fp = _solve(cfg, beta)
    inst = _build(cfg, n, beta, seed)
    res = gibbs_mod.exact_gibbs(inst)
    per_site = res.log_z / n
    return {
        "log_z_per_site": per_site,
        "psi_rs": fp.psi_rs,
        "free_energy_gap": per_site - fp.psi_rs,
    }


def _cell_gibbs_mcmc(cfg, n, beta, seed):
    inst = _build(cfg, n, beta, seed)
    reps = gibbs_mod.glauber_sample(
        inst, sweeps=cfg.sweeps, burn_in=cfg.burn_in, thin=cfg.thin,
        n_chains=cfg.replica_counts[0],
        seed=stream_seed(seed, n, beta, STREAM_MCMC),
    )
    out = {
        "mean_abs_mag": float(np.abs(reps.samples.mean(axis=0)).mean()),
        "marginal_max_abs_err": np.nan,
        "replica_distance": np.nan,
    }
    if n <= gibbs_mod.MAX_ENUMERATION_N:
        exact = gibbs_mod.exact_gibbs(inst).magnetization
        time_avg = gibbs_mod.estimate_magnetization(
            reps, exact_magnetization=exact, use_time_average=True
        )
        final = gibbs_mod.estimate_magnetization(reps, exact_magnetization=exact)
        out["marginal_max_abs_err"] = float(np.abs(time_avg.mean - exact).max())
        out["replica_distance"] = final.distance
    return out


def _cell_tap_verify(cfg, n, beta, seed):
    fp = _solve(cfg, beta)
    inst = _build(cfg, n, beta, seed)
    mag = gibbs_mod.exact_gibbs(inst).magnetization
    traj = amp_mod.run_amp(inst, fp, cfg.t_max, stream_seed(seed, n, beta, STREAM_AMP))
    d = tap_mod.magnetization_vs_amp(mag, traj)
    sol = tap_mod.solve_tap_damped(inst, fp)
    return {
        "d_first": float(d[0]),
        "d_final": float(d[-1]),
        "tap_residual_gibbs": tap_mod.tap_residual(inst, fp, mag),
        "tap_residual_amp": tap_mod.tap_residual(inst, fp, traj.final.m),
        "solver_residual": sol.residual,
        "solver_amp_rms_gap": float(
            np.sqrt(np.sum((sol.m - traj.final.m) ** 2) / n)
        ),
    }


def _cell_concentration(cfg, n, beta, seed, n_replicas):
    inst = _build(cfg, n, beta, seed)
    mag = gibbs_mod.exact_gibbs(inst).magnetization
    reps = gibbs_mod.glauber_sample(
        inst, sweeps=cfg.sweeps, burn_in=cfg.burn_in, thin=cfg.thin,
        n_chains=n_replicas, seed=stream_seed(seed, n, beta, STREAM_MCMC),
    )
    est = gibbs_mod.estimate_magnetization(reps, exact_magnetization=mag)
    return {"distance": est.distance}


def _cell_band(cfg, n, beta, seed):
    fp = _solve(cfg, beta)
    inst = _build(cfg, n, beta, seed)
    traj = amp_mod.run_amp(inst, fp, max(cfg.t_max, 50), stream_seed(seed, n, beta, STREAM_AMP))
    band = gibbs_mod.BandSpec(traj.final.m, cfg.delta, cfg.eta)
    log_z = gibbs_mod.exact_gibbs(inst).log_z
    log_zb = gibbs_mod.restricted_logZ_band(inst, band)
    reps = gibbs_mod.glauber_sample(
        inst, sweeps=cfg.sweeps, burn_in=cfg.burn_in, thin=cfg.thin,
        n_chains=cfg.replica_counts[0],
        seed=stream_seed(seed, n, beta, STREAM_MCMC),
    )
    geometry = gibbs_mod.replica_geometry_report(reps, band)
    if n <= gibbs_mod.MAX_PAIR_ENUMERATION_N:
        log_zc = gibbs_mod.restricted_logZ_nonorth_pairs(inst, band)
    else:
        log_zc = gibbs_mod.sampled_logZ_nonorth_pairs(reps, band, log_zb).value
    return {
        "log_z_per_site": log_z / n,
        "log_zb_per_site": log_zb / n,
        "band_gap_per_site": (log_z - log_zb) / n,
        "zc_margin_per_site": log_zc / n - 2.0 * log_zb / n,
        "band_fraction": geometry.band_fraction,
        "pair_violation_fraction": geometry.pair_violation_fraction,
        "in_b_n": int(geometry.in_b_n),
        "replica_distance": geometry.distance,
    }


def _cell_se_check(cfg, n, beta, seed):
    fp = _solve(cfg, beta)
    inst = _build(cfg, n, beta, seed)
    traj = amp_mod.run_amp(inst, fp, cfg.t_max, stream_seed(seed, n, beta, STREAM_AMP))
    est = theoretical_delta(
        fp, cfg.field, cfg.t_max, mc_samples=cfg.mc_samples,
        seed=stream_seed(seed, n, beta, STREAM_DELTA),
    )
    report = amp_mod.empirical_vs_theoretical_se(traj, est.delta)
    return {
        "max_dev_xx": report.max_dev_xx,
        "max_dev_yy": report.max_dev_yy,
        "max_dev_xy": report.max_dev_xy,
        "m_norm_gap": float(abs(traj.m_norm_sq[-1] - fp.q_star)),
    }


_CELL_FUNCTIONS = {
    KIND_FIXED_POINT: _cell_fixed_point,
    KIND_AMP: _cell_amp,
    KIND_GIBBS_EXACT: _cell_gibbs_exact,
    KIND_GIBBS_MCMC: _cell_gibbs_mcmc,
    KIND_TAP_VERIFY: _cell_tap_verify,
    KIND_BAND: _cell_band,
    KIND_SE_CHECK: _cell_se_check,
}


def _cells(cfg: ExperimentConfig):
    for n in cfg.n_values:
        for beta in cfg.beta_values:
            for seed in cfg.seeds:
                if cfg.kind == KIND_CONCENTRATION:
                    for n_rep in cfg.replica_counts:
                        yield (n, beta, seed, n_rep)
                else:
                    yield (n, beta, seed, cfg.replica_counts[0])


def _run_cell(cfg: ExperimentConfig, cell) -> ResultRow:
    n, beta, seed, n_rep = cell
    start = time.perf_counter()
    try:
        if cfg.kind == KIND_CONCENTRATION:
            metrics = _cell_concentration(cfg, n, beta, seed, n_rep)
        else:
            metrics = _CELL_FUNCTIONS[cfg.kind](cfg, n, beta, seed)
        error = ""
    except Exception as exc:  # noqa: BLE001  (cell isolation is the contract)
        metrics = {}
        error = f"{type(exc).__name__}: {exc}"
    return ResultRow(
        schema_version=SCHEMA_VERSION,
        kind=cfg.kind,
        n=n,
        beta=beta,
        seed=seed,
        n_replicas=n_rep,
        metrics=metrics,
        wall_time=time.perf_counter() - start,
        error=error,
    )


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """Run every grid cell, isolating failures, and return rows in sorted order."""
    cells = list(_cells(cfg))
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            rows = list(pool.map(lambda c: _run_cell(cfg, c), cells))
    else:
        rows = [_run_cell(cfg, c) for c in cells]
    rows.sort(key=lambda r: (r.n, r.beta, r.seed, r.n_replicas))
    return rows


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------


def _metric_columns(rows: list[ResultRow]) -> list[str]:
    keys = set()
    for row in rows:
        keys.update(row.metrics)
    return sorted(keys)


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(float(value))  # plain-float repr, stable under numpy scalars
    return str(value)


def emit_csv(rows: list[ResultRow], fh) -> None:
    """Write rows as CSV.  The header is always present; metric columns are
    the sorted union across rows, blank where a row lacks a metric."""
    metric_cols = _metric_columns(rows)
    header = list(BASE_COLUMNS) + metric_cols + list(TAIL_COLUMNS)
    fh.write(",".join(header) + "\n")
    for row in rows:
        cells = [
            str(row.schema_version), row.kind, str(row.n), repr(float(row.beta)),
            str(row.seed), str(row.n_replicas),
        ]
        for key in metric_cols:
            value = row.metrics.get(key)
            cells.append("" if value is None else _format_value(value))
        cells.append(repr(float(row.wall_time)))
        cells.append(row.error.replace(",", ";").replace("\n", " "))
        fh.write(",".join(cells) + "\n")


def csv_text(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    emit_csv(rows, buf)
    return buf.getvalue()


def _stable_text(rows: list[ResultRow]) -> str:
    """CSV text with the wall-time column blanked, for hashing and byte checks."""
    lines = csv_text(rows).splitlines()
    out = []
    for i, line in enumerate(lines):
        parts = line.split(",")
        if i > 0 and len(parts) >= 2:
            parts[-2] = ""
        out.append(",".join(parts))
    return "\n".join(out) + "\n"


def content_hash(rows: list[ResultRow]) -> str:
    return hashlib.sha256(_stable_text(rows).encode()).hexdigest()


def emit_json_summary(rows: list[ResultRow], cfg: ExperimentConfig) -> dict:
    """Config echo, a content hash of the stable CSV text, and per-(n, beta)
    mean/sd aggregates of every metric over seeds (and replica counts)."""
    aggregates = {}
    for row in rows:
        if row.error:
            continue
        key = f"n={row.n},beta={row.beta}"
        bucket = aggregates.setdefault(key, {})
        for name, value in row.metrics.items():
            if isinstance(value, (int, float)) and np.isfinite(value):
                bucket.setdefault(name, []).append(float(value))
    summary_aggregates = {
        key: {
            name: {
                "mean": float(np.mean(vals)),
                "sd": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                "count": len(vals),
            }
            for name, vals in sorted(bucket.items())
        }
        for key, bucket in sorted(aggregates.items())
    }
    return {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.echo(),
        "rows": len(rows),
        "errors": sum(1 for r in rows if r.error),
        "content_hash": content_hash(rows),
        "aggregates": summary_aggregates,
    }


def default_config(kind: str) -> ExperimentConfig:
    """A small runnable config for each kind, used by tests and as a template."""
    base = {
        "kind": kind,
        "n": [12],
        "beta": [0.15],
        "seeds": [1, 2],
        "law": semicircle().to_spec(),
        "field": constant_field(1.0).to_spec(),
    }
    return config_from_dict(base)
