"""Tests for the experiment grid driver: config parsing, determinism,
error isolation, and the CSV/JSON emitters."""

import json

import numpy as np
import pytest

from tapglass import experiments as exp
from tapglass.experiments import (
    BASE_COLUMNS,
    TAIL_COLUMNS,
    ConfigError,
    ResultRow,
    config_from_dict,
    content_hash,
    csv_text,
    default_config,
    emit_csv,
    emit_json_summary,
    run_experiment,
    stream_seed,
)


def _minimal(kind="fixed_point", **overrides):
    obj = {"kind": kind, "n": [8], "beta": [0.15], "seeds": [0]}
    obj.update(overrides)
    return obj


# ---------------------------------------------------------------- config


def test_config_rejects_non_dict():
    with pytest.raises(ConfigError):
        config_from_dict(["not", "a", "dict"])


def test_config_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="kind"):
        config_from_dict(_minimal(kind="frobnicate"))


def test_config_requires_grid_keys():
    for missing in ("n", "beta", "seeds"):
        obj = _minimal()
        del obj[missing]
        with pytest.raises(ConfigError, match=missing):
            config_from_dict(obj)


def test_config_rejects_bad_scalars():
    with pytest.raises(ConfigError):
        config_from_dict(_minimal(t_max=0))
    with pytest.raises(ConfigError):
        config_from_dict(_minimal(threads=0))
    with pytest.raises(ConfigError):
        config_from_dict(_minimal(n=[0]))
    with pytest.raises(ConfigError):
        config_from_dict(_minimal(beta=[-0.1]))
    with pytest.raises(ConfigError):
        config_from_dict(_minimal(field_mode="diagonal"))


def test_config_rejects_bad_law_spec():
    with pytest.raises(ConfigError, match="law"):
        config_from_dict(_minimal(law={"kind": "noise"}))


def test_config_defaults_and_echo_roundtrip():
    cfg = config_from_dict(_minimal())
    assert cfg.t_max == 8
    assert cfg.replica_counts == (8,)
    assert cfg.sweeps == 200
    assert cfg.threads == 1
    echo = cfg.echo()
    # the echo must itself parse back to an identical config
    cfg2 = config_from_dict(echo)
    assert cfg2.echo() == echo


def test_default_config_parses_for_every_kind():
    for kind in exp.EXPERIMENT_KINDS:
        cfg = default_config(kind)
        assert cfg.kind == kind
        assert cfg.n_values == (12,)


# ---------------------------------------------------------------- seeds


def test_stream_seed_is_deterministic_and_tagged():
    a = stream_seed(7, 16, 0.15, exp.STREAM_INSTANCE)
    assert a == stream_seed(7, 16, 0.15, exp.STREAM_INSTANCE)
    others = {
        stream_seed(7, 16, 0.15, exp.STREAM_AMP),
        stream_seed(7, 16, 0.15, exp.STREAM_MCMC),
        stream_seed(7, 16, 0.15, exp.STREAM_DELTA),
        stream_seed(8, 16, 0.15, exp.STREAM_INSTANCE),
        stream_seed(7, 18, 0.15, exp.STREAM_INSTANCE),
        stream_seed(7, 16, 0.2, exp.STREAM_INSTANCE),
    }
    assert a not in others
    assert len(others) == 6


def test_stream_seed_keyed_by_coordinates_not_grid_position():
    # the seed for a cell depends only on its own (seed, n, beta) coordinates,
    # so enlarging the grid never reshuffles existing cells
    small = config_from_dict(_minimal(kind="amp", n=[24], beta=[0.15], seeds=[3]))
    large = config_from_dict(
        _minimal(kind="amp", n=[16, 24, 32], beta=[0.1, 0.15], seeds=[1, 2, 3])
    )
    rows_small = run_experiment(small)
    rows_large = run_experiment(large)
    (target,) = rows_small
    match = [
        r
        for r in rows_large
        if (r.n, r.beta, r.seed) == (target.n, target.beta, target.seed)
    ]
    assert len(match) == 1
    assert match[0].metrics == target.metrics


# ---------------------------------------------------------------- runs


def test_fixed_point_rows_cover_grid():
    cfg = config_from_dict(
        _minimal(kind="fixed_point", n=[8], beta=[0.0, 0.15], seeds=[0, 5])
    )
    rows = run_experiment(cfg)
    assert len(rows) == 4
    coords = {(r.n, r.beta, r.seed) for r in rows}
    assert coords == {(8, 0.0, 0), (8, 0.0, 5), (8, 0.15, 0), (8, 0.15, 5)}
    for r in rows:
        assert r.error == ""
        assert r.metrics["converged"] == 1
        assert 0.0 < r.metrics["q_star"] < 1.0


def test_rows_sorted_regardless_of_thread_count():
    obj = _minimal(kind="amp", n=[24, 16], beta=[0.15, 0.1], seeds=[1, 0], t_max=3)
    serial = run_experiment(config_from_dict(obj))
    threaded = run_experiment(config_from_dict({**obj, "threads": 4}))
    key = lambda r: (r.n, r.beta, r.seed, r.n_replicas)
    assert [key(r) for r in serial] == sorted(key(r) for r in serial)
    assert exp._stable_text(serial) == exp._stable_text(threaded)
    assert content_hash(serial) == content_hash(threaded)


def test_repeat_runs_identical_modulo_wall_time():
    cfg = config_from_dict(
        _minimal(kind="gibbs_mcmc", n=[10], beta=[0.12], seeds=[2],
                 sweeps=60, burn_in=20, thin=2)
    )
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert exp._stable_text(a) == exp._stable_text(b)
    assert content_hash(a) == content_hash(b)


def test_error_rows_are_isolated():
    # n=25 exceeds the enumeration guard; the other cell must still succeed
    cfg = config_from_dict(
        _minimal(kind="gibbs_exact", n=[10, 25], beta=[0.15], seeds=[0])
    )
    rows = run_experiment(cfg)
    assert len(rows) == 2
    by_n = {r.n: r for r in rows}
    assert by_n[10].error == ""
    assert np.isfinite(by_n[10].metrics["log_z_per_site"])
    assert by_n[25].error != ""
    assert by_n[25].metrics == {}


# ---------------------------------------------------------------- emitters


def test_csv_header_present_even_without_rows():
    text = csv_text([])
    lines = text.splitlines()
    assert len(lines) == 1
    assert lines[0] == ",".join(BASE_COLUMNS + TAIL_COLUMNS)


def test_csv_columns_are_base_metrics_tail():
    cfg = config_from_dict(_minimal(kind="fixed_point"))
    rows = run_experiment(cfg)
    header = csv_text(rows).splitlines()[0].split(",")
    n_base, n_tail = len(BASE_COLUMNS), len(TAIL_COLUMNS)
    assert tuple(header[:n_base]) == BASE_COLUMNS
    assert tuple(header[-n_tail:]) == TAIL_COLUMNS
    middle = header[n_base:-n_tail]
    assert middle == sorted(middle)
    assert set(middle) == set(rows[0].metrics)


def test_csv_cells_parse_back_to_floats():
    cfg = config_from_dict(_minimal(kind="fixed_point"))
    rows = run_experiment(cfg)
    lines = csv_text(rows).splitlines()
    header = lines[0].split(",")
    cells = lines[1].split(",")
    assert len(cells) == len(header)
    record = dict(zip(header, cells))
    assert float(record["q_star"]) == pytest.approx(rows[0].metrics["q_star"])
    assert float(record["beta"]) == 0.15
    # no numpy scalar reprs may leak into the file
    assert "np.float64" not in lines[1]


def test_csv_escapes_commas_in_error_text():
    row = ResultRow(
        schema_version=exp.SCHEMA_VERSION,
        kind="fixed_point",
        n=8,
        beta=0.15,
        seed=0,
        n_replicas=8,
        metrics={},
        wall_time=0.0,
        error="bad, very bad",
    )
    lines = csv_text([row]).splitlines()
    assert len(lines) == 2
    assert lines[1].endswith("bad; very bad")
    assert len(lines[1].split(",")) == len(lines[0].split(","))


def test_emit_csv_and_csv_text_agree(tmp_path):
    cfg = config_from_dict(_minimal(kind="fixed_point"))
    rows = run_experiment(cfg)
    path = tmp_path / "out.csv"
    with open(path, "w") as fh:
        emit_csv(rows, fh)
    assert path.read_text() == csv_text(rows)


def test_summary_aggregates_match_recomputation():
    cfg = config_from_dict(
        _minimal(kind="amp", n=[24], beta=[0.15], seeds=[0, 1, 2], t_max=3)
    )
    rows = run_experiment(cfg)
    summary = emit_json_summary(rows, cfg)
    assert summary["rows"] == 3
    assert summary["errors"] == 0
    assert summary["content_hash"] == content_hash(rows)
    bucket = summary["aggregates"]["n=24,beta=0.15"]
    vals = [r.metrics["tap_residual"] for r in rows]
    assert bucket["tap_residual"]["count"] == 3
    assert bucket["tap_residual"]["mean"] == pytest.approx(np.mean(vals))
    assert bucket["tap_residual"]["sd"] == pytest.approx(np.std(vals, ddof=1))


def test_summary_is_json_serializable():
    cfg = config_from_dict(_minimal(kind="fixed_point"))
    rows = run_experiment(cfg)
    text = json.dumps(emit_json_summary(rows, cfg))
    assert "q_star" in text
