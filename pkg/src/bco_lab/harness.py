"""Experiment runner: configuration, seeded repetitions, traces and CSV output."""

from __future__ import annotations

import csv
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .learners import (
    FKM,
    DoublingWrapper,
    FkmParams,
    Pfbco,
    PfbcoParams,
    StochOCG,
    Unregularized,
)
from .losses import gen_matrix_sequence, gen_price_ratios, gen_quadratic_sequence, ingest_price_csv

EXPERIMENTS = ("quadratic", "portfolio", "matrix_completion")
ALGORITHMS = ("pfbco", "fkm", "unregularized", "stochocg")
DEFAULT_N = {"quadratic": 10, "portfolio": 100, "matrix_completion": 20}
TRACE_COLUMNS = ("algorithm", "seed", "t", "epoch", "loss_y", "loss_x", "cum_loss_y", "cum_loss_x", "round_ns")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "quadratic"
    algorithms: tuple = ALGORITHMS
    n: int | None = None
    T: int = 10_000
    repetitions: int = 50
    base_seed: int = 0
    anytime: bool = True
    m: int = 5  # rows of the quadratic experiment's constraint matrix
    k: int = 18  # nuclear-norm radius of the matrix experiment
    prices_csv: str | None = None
    c: float | None = None
    eta: float | None = None
    delta: float | None = None
    fkm_eta: float | None = None
    fkm_delta: float | None = None
    check_feasibility: bool = False
    threads: int = 0
    out: str = "results"

    def __post_init__(self):
        if isinstance(self.algorithms, str):
            self.algorithms = tuple(a.strip() for a in self.algorithms.split(",") if a.strip())
        else:
            self.algorithms = tuple(self.algorithms)
        if self.n is None:
            self.n = DEFAULT_N.get(self.experiment)
        self.validate()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if not self.algorithms:
            raise ConfigError("no algorithms selected")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ConfigError(f"unknown algorithm(s) {', '.join(bad)}; choose from {', '.join(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ConfigError("algorithm listed twice")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.n is None or self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.experiment == "quadratic" and self.m < 0:
            raise ConfigError("m must be >= 0")
        if self.experiment == "matrix_completion" and not 0 < self.k <= self.n:
            raise ConfigError("k must lie in [1, n]")
        for name in ("c", "eta", "delta", "fkm_eta", "fkm_delta"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")

    def replace(self, **changes):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return ExperimentConfig(**vals)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(text):
    s = str(text).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _convert(name, text):
    kinds = {
        "n": int, "T": int, "repetitions": int, "base_seed": int, "m": int, "k": int, "threads": int,
        "c": float, "eta": float, "delta": float, "fkm_eta": float, "fkm_delta": float,
        "anytime": parse_bool, "check_feasibility": parse_bool,
    }
    conv = kinds.get(name, str)
    try:
        return conv(text)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def read_config_text(text):
    """``key = value`` lines; ``#`` starts a comment.  Keys are
    ``ExperimentConfig`` field names."""
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if value.lower() in ("", "none"):
            out[key] = None
        else:
            out[key] = _convert(key, value)
    return out


def load_config(path=None, **overrides):
    vals = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
        vals = read_config_text(text)
    vals.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**vals)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# traces


@dataclass
class RunTrace:
    experiment: str
    algorithm: str
    seed: int
    epoch: np.ndarray
    loss_y: np.ndarray
    loss_x: np.ndarray
    round_ns: np.ndarray
    checksum: str
    max_violation_y: float = math.nan
    max_violation_x: float = math.nan
    info: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.loss_y.shape[0]

    @property
    def t(self):
        return np.arange(1, self.T + 1)

    @property
    def cum_loss_y(self):
        return np.cumsum(self.loss_y)

    @property
    def cum_loss_x(self):
        return np.cumsum(self.loss_x)

    @property
    def total_ns(self):
        return int(self.round_ns.sum())


def _stream(seed, label):
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


def make_sequence(cfg: ExperimentConfig, seed: int):
    """The repetition's adversary: losses plus sampled bounds ``M`` and ``G``."""
    rng = _stream(seed, "adversary")
    if cfg.experiment == "quadratic":
        seq = gen_quadratic_sequence(cfg.n, cfg.T, rng, m=cfg.m)
    elif cfg.experiment == "portfolio":
        if cfg.prices_csv:
            seq = ingest_price_csv(cfg.prices_csv)
            if len(seq) < cfg.T:
                raise ConfigError(f"{cfg.prices_csv} gives {len(seq)} rounds, fewer than T={cfg.T}")
        else:
            seq = gen_price_ratios(cfg.n, cfg.T, rng)
    else:
        seq = gen_matrix_sequence(cfg.n, cfg.k, cfg.T, rng)
    seq.estimate_bounds(rng, regions=play_regions(cfg, seq.constraint))
    return seq


def play_regions(cfg: ExperimentConfig, K):
    """Where the learners can play at horizon T: each schedule's shrunken set
    with its smoothing radius.  Fixed by the config alone, so the bounds do
    not depend on which algorithms are selected."""
    T = cfg.T
    p = PfbcoParams.theorem(T, K.n, 1.0, K.D, K.r, c=cfg.c, delta=cfg.delta)
    f = FkmParams.classical(T, K.n, 1.0, K.D, K.r, delta=cfg.fkm_delta)
    return [(K.shrink(p.alpha), p.delta), (K.shrink(p.alpha), 0.0), (K.shrink(f.alpha), f.delta)]


def _fixed_learner(name, seq, horizon, rng, cfg):
    K = seq.constraint
    n = K.n
    if name == "fkm":
        p = FkmParams.classical(horizon, n, seq.M, K.D, K.r, eta=cfg.fkm_eta, delta=cfg.fkm_delta)
        return FKM(K, p, rng)
    p = PfbcoParams.theorem(horizon, n, seq.M, K.D, K.r, c=cfg.c, eta=cfg.eta, delta=cfg.delta)
    if name == "pfbco":
        return Pfbco(K, p, rng)
    if name == "unregularized":
        return Unregularized(K, p, rng)
    if name == "stochocg":
        return StochOCG(K, p, rng, noise_std=float(cfg.n))
    raise ConfigError(f"unknown algorithm {name!r}")


def make_learner(name, seq, cfg, rng):
    if cfg.anytime:
        return DoublingWrapper(lambda h: _fixed_learner(name, seq, h, rng, cfg))
    return _fixed_learner(name, seq, cfg.T, rng, cfg)


def play(learner, seq, T, check_feasibility=False):
    """Run ``learner`` for ``T`` rounds against ``seq``.  Only query() and
    update() are timed."""
    clock = time.perf_counter_ns
    K = seq.constraint
    loss_y = np.empty(T)
    loss_x = np.empty(T)
    epoch = np.zeros(T, dtype=np.int64)
    ns = np.empty(T, dtype=np.int64)
    vy = vx = 0.0
    full_info = learner.needs_gradient
    for i in range(T):
        t0 = clock()
        y = learner.query()
        t1 = clock()
        x = learner.x
        loss_y[i] = seq.value(i, y)
        loss_x[i] = seq.value(i, x)
        epoch[i] = learner.epoch
        if check_feasibility:
            vy = max(vy, K.violation(y))
            vx = max(vx, learner.iterate_set.violation(x))
        grad = seq.gradient(i, x) if full_info else None
        t2 = clock()
        learner.update(loss_y[i], grad)
        t3 = clock()
        ns[i] = (t1 - t0) + (t3 - t2)
    if not check_feasibility:
        vy = vx = math.nan
    return epoch, loss_y, loss_x, ns, vy, vx


def run_repetition(cfg: ExperimentConfig, rep: int):
    seed = cfg.base_seed + rep
    seq = make_sequence(cfg, seed)
    digest = seq.checksum()
    out = []
    for name in cfg.algorithms:
        learner = make_learner(name, seq, cfg, _stream(seed, name))
        epoch, ly, lx, ns, vy, vx = play(learner, seq, cfg.T, cfg.check_feasibility)
        out.append(RunTrace(cfg.experiment, name, seed, epoch, ly, lx, ns, digest, vy, vx,
                            info={"M": seq.M, "G": seq.G}))
    return out


def worker_count(cfg):
    env = os.environ.get("BCO_LAB_THREADS", "").strip()
    cap = cfg.threads
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"BCO_LAB_THREADS must be an integer, got {env!r}") from None
    if cap <= 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, cfg.repetitions))


def run_experiment(cfg: ExperimentConfig, workers=None):
    """All repetitions x algorithms, ordered by repetition then algorithm."""
    workers = worker_count(cfg) if workers is None else workers
    reps = range(cfg.repetitions)
    if workers == 1:
        batches = [run_repetition(cfg, r) for r in reps]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(run_repetition, [cfg] * cfg.repetitions, reps))
    return [tr for batch in batches for tr in batch]


# ---------------------------------------------------------------------------
# CSV output


def _group(traces):
    groups = {}
    for tr in traces:
        groups.setdefault(tr.algorithm, []).append(tr)
    return groups


def summary_rows(traces):
    """Mean and standard error of the running average loss per (algorithm, t)."""
    rows = []
    for name, group in _group(traces).items():
        T = min(tr.T for tr in group)
        t = np.arange(1, T + 1)
        ay = np.array([tr.cum_loss_y[:T] for tr in group]) / t
        ax = np.array([tr.cum_loss_x[:T] for tr in group]) / t
        k = len(group)
        sey = ay.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.full(T, math.nan)
        sex = ax.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.full(T, math.nan)
        my, mx = ay.mean(axis=0), ax.mean(axis=0)
        for i in range(T):
            rows.append((name, i + 1, k, my[i], sey[i], mx[i], sex[i]))
    return rows


def runtime_rows(traces):
    """Total wall-clock per algorithm, relative to pfbco when it was run."""
    totals = {name: sum(tr.total_ns for tr in g) for name, g in _group(traces).items()}
    counts = {name: len(g) for name, g in _group(traces).items()}
    ref = totals.get("pfbco")
    rows = []
    for name, tot in totals.items():
        rel = tot / ref if ref else math.nan
        rows.append((name, counts[name], tot, tot / counts[name], rel))
    return rows


def _write(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


def write_runtime_csv(traces, path):
    _write(path, ("algorithm", "runs", "total_ns", "mean_run_ns", "relative_time"), runtime_rows(traces))


def emit_csv(traces, path):
    """Write the per-round traces to ``path`` and, next to it,
    ``<stem>_summary.csv``, ``<stem>_runtime.csv`` and ``<stem>_runs.csv``.
    Returns the four paths."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        stem = path.with_suffix("")
        paths = {
            "traces": path,
            "summary": Path(f"{stem}_summary.csv"),
            "runtime": Path(f"{stem}_runtime.csv"),
            "runs": Path(f"{stem}_runs.csv"),
        }

        def trace_rows():
            for tr in traces:
                cy, cx = tr.cum_loss_y, tr.cum_loss_x
                for i in range(tr.T):
                    yield (tr.algorithm, tr.seed, i + 1, int(tr.epoch[i]), _fmt(tr.loss_y[i]), _fmt(tr.loss_x[i]),
                           _fmt(cy[i]), _fmt(cx[i]), int(tr.round_ns[i]))

        _write(paths["traces"], TRACE_COLUMNS, trace_rows())
        _write(paths["summary"],
               ("algorithm", "t", "runs", "mean_avg_loss_y", "se_avg_loss_y", "mean_avg_loss_x", "se_avg_loss_x"),
               ([r[0], r[1], r[2], *map(_fmt, r[3:])] for r in summary_rows(traces)))
        write_runtime_csv(traces, paths["runtime"])
        _write(paths["runs"], ("algorithm", "seed", "total_ns", "checksum", "max_violation_y", "max_violation_x"),
               ((tr.algorithm, tr.seed, tr.total_ns, tr.checksum, _fmt(tr.max_violation_y), _fmt(tr.max_violation_x))
                for tr in traces))
    except OSError as exc:
        raise OSError(f"cannot write results under {path.parent}: {exc.strerror or exc}") from exc
    return paths


def read_trace_csv(path):
    """Parse a trace CSV back into column arrays keyed by column name."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = {}
    for name in TRACE_COLUMNS:
        vals = [r[name] for r in rows]
        if name == "algorithm":
            cols[name] = vals
        elif name in ("seed", "t", "epoch", "round_ns"):
            cols[name] = np.array(vals, dtype=np.int64)
        else:
            cols[name] = np.array(vals, dtype=float)
    return cols
