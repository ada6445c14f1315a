import filecmp

import numpy as np
import pytest

from bco_lab.harness import (
    TRACE_COLUMNS,
    ConfigError,
    ExperimentConfig,
    emit_csv,
    load_config,
    make_sequence,
    read_config_text,
    read_trace_csv,
    run_experiment,
    run_repetition,
    summary_rows,
    worker_count,
)


def small(**kw):
    base = dict(experiment="quadratic", n=4, T=100, repetitions=2)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# config


def test_config_text_parsing():
    vals = read_config_text("experiment = portfolio  # comment\n\nT = 50\nanytime = no\neta = 0.5\nc = none\n")
    assert vals == {"experiment": "portfolio", "T": 50, "anytime": False, "eta": 0.5, "c": None}


@pytest.mark.parametrize("text", ["bogus = 1\n", "T 5\n", "T = five\n", "anytime = maybe\n"])
def test_config_text_errors(text):
    with pytest.raises(ConfigError):
        read_config_text(text)


@pytest.mark.parametrize(
    "kw",
    [dict(experiment="nope"), dict(algorithms="pfbco,bad"), dict(T=0), dict(repetitions=0),
     dict(experiment="matrix_completion", n=5, k=6), dict(eta=-1.0), dict(algorithms="pfbco,pfbco")],
)
def test_invalid_fields_rejected(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_flags_override_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("experiment = quadratic\nT = 50\nn = 3\n")
    cfg = load_config(p, T=70, n=None)
    assert cfg.T == 70 and cfg.n == 3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_default_dimensions():
    assert ExperimentConfig().n == 10
    assert ExperimentConfig(experiment="portfolio").n == 100
    assert ExperimentConfig(experiment="matrix_completion").n == 20


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv("BCO_LAB_THREADS", "3")
    assert worker_count(small(repetitions=10)) == 3
    assert worker_count(small(repetitions=2)) == 2
    monkeypatch.setenv("BCO_LAB_THREADS", "x")
    with pytest.raises(ConfigError):
        worker_count(small())


# ---------------------------------------------------------------------------
# runs


def test_four_traces_of_full_length():
    traces = run_experiment(small(repetitions=1), workers=1)
    assert [tr.algorithm for tr in traces] == ["pfbco", "fkm", "unregularized", "stochocg"]
    for tr in traces:
        assert tr.loss_y.shape == (100,) and tr.loss_x.shape == (100,)
        assert np.all(np.isfinite(tr.loss_y))


def test_shared_adversary_checksum():
    traces = run_repetition(small(), 0)
    assert len({tr.checksum for tr in traces}) == 1
    other = run_repetition(small(), 1)
    assert other[0].checksum != traces[0].checksum


def test_anytime_epoch_column():
    tr = run_repetition(small(T=10), 0)[0]
    assert list(tr.epoch) == [0, 1, 1, 2, 2, 2, 2, 3, 3, 3]
    fixed = run_repetition(small(T=10, anytime=False), 0)[0]
    assert not fixed.epoch.any()


def test_algorithm_streams_independent_of_selection():
    both = run_repetition(small(algorithms="pfbco,fkm"), 0)
    alone = run_repetition(small(algorithms="fkm"), 0)
    assert np.array_equal(both[1].loss_y, alone[0].loss_y)


def test_parallel_matches_serial():
    cfg = small(repetitions=2, T=30)
    a = run_experiment(cfg, workers=1)
    b = run_experiment(cfg, workers=2)
    for x, y in zip(a, b):
        assert x.seed == y.seed and np.array_equal(x.loss_y, y.loss_y) and np.array_equal(x.loss_x, y.loss_x)


def test_timing_positive_and_totals_add_up():
    for tr in run_repetition(small(), 0):
        assert np.all(tr.round_ns > 0)
        assert tr.total_ns == int(tr.round_ns.sum())


def test_feasibility_recorded():
    for tr in run_repetition(small(check_feasibility=True), 0):
        assert tr.max_violation_y <= 1e-9 and tr.max_violation_x <= 1e-9


def test_portfolio_from_csv(tmp_path):
    p = tmp_path / "prices.csv"
    rng = np.random.default_rng(0)
    prices = np.cumprod(rng.uniform(0.95, 1.05, (31, 3)), axis=0)
    np.savetxt(p, prices, delimiter=",", header="A,B,C", comments="")
    cfg = ExperimentConfig(experiment="portfolio", n=3, T=30, repetitions=1, prices_csv=str(p))
    seq = make_sequence(cfg, 0)
    assert len(seq) == 30
    with pytest.raises(ConfigError):
        make_sequence(cfg.replace(T=31), 0)


# ---------------------------------------------------------------------------
# CSV output


def test_identical_configs_give_identical_files(tmp_path):
    cfg = small()
    a = emit_csv(run_experiment(cfg, workers=1), tmp_path / "a" / "quadratic.csv")
    b = emit_csv(run_experiment(cfg, workers=1), tmp_path / "b" / "quadratic.csv")
    # round_ns differs between runs; every other column must match
    ca, cb = read_trace_csv(a["traces"]), read_trace_csv(b["traces"])
    for col in TRACE_COLUMNS:
        if col != "round_ns":
            assert np.array_equal(np.asarray(ca[col]), np.asarray(cb[col]))
    assert filecmp.cmp(a["traces"].with_name("quadratic_summary.csv"), b["summary"], shallow=False)


def test_csv_round_trip(tmp_path):
    traces = run_experiment(small(), workers=1)
    paths = emit_csv(traces, tmp_path / "out" / "quadratic.csv")
    header = paths["traces"].read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    cols = read_trace_csv(paths["traces"])
    assert np.array_equal(cols["loss_y"], np.concatenate([tr.loss_y for tr in traces]))
    assert np.array_equal(cols["cum_loss_x"], np.concatenate([tr.cum_loss_x for tr in traces]))
    assert np.array_equal(cols["round_ns"], np.concatenate([tr.round_ns for tr in traces]))
    assert cols["algorithm"][:100] == ["pfbco"] * 100


def test_summary_mean_at_first_round():
    traces = run_experiment(small(repetitions=3), workers=1)
    rows = {(r[0], r[1]): r for r in summary_rows(traces)}
    for name in ("pfbco", "fkm"):
        first = [tr.loss_y[0] for tr in traces if tr.algorithm == name]
        assert rows[(name, 1)][3] == pytest.approx(np.mean(first), rel=1e-15)
        assert rows[(name, 1)][2] == 3


def test_relative_time_column(tmp_path):
    traces = run_experiment(small(), workers=1)
    paths = emit_csv(traces, tmp_path / "q.csv")
    lines = [line.split(",") for line in paths["runtime"].read_text().splitlines()[1:]]
    totals = {row[0]: int(row[2]) for row in lines}
    rel = {row[0]: float(row[4]) for row in lines}
    assert rel["pfbco"] == 1.0
    assert rel["fkm"] == pytest.approx(totals["fkm"] / totals["pfbco"])
    assert totals["fkm"] == sum(tr.total_ns for tr in traces if tr.algorithm == "fkm")


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_csv(run_experiment(small(repetitions=1, T=5), workers=1), blocker / "x.csv")
