import math

import numpy as np
import pytest

from bco_lab.geometry import NuclearNormBall, ShiftedSimplex
from bco_lab.harness import ExperimentConfig, make_learner, make_sequence, _stream
from bco_lab.losses import (
    DomainError,
    LossDataError,
    MatrixCompletionLoss,
    PortfolioLoss,
    PortfolioSequence,
    QuadraticLoss,
    gen_matrix_sequence,
    gen_price_ratios,
    gen_quadratic_sequence,
    ingest_price_csv,
    read_price_csv,
)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# single losses


def test_quadratic_value_and_grad_examples():
    f = QuadraticLoss(np.eye(2), np.zeros(2))
    assert f.value([1.0, 1.0]) == 1.0
    g = QuadraticLoss(np.eye(2), np.array([1.0, 0.0]))
    assert np.allclose(g.grad([0.0, 0.0]), [1.0, 0.0])


def test_portfolio_examples():
    assert PortfolioLoss([1.0, 1.0]).value([0.5, 0.5]) == 0.0
    assert np.allclose(PortfolioLoss([2.0, 0.5]).grad([0.5, 0.5]), [-1.6, -0.4])


def test_portfolio_domain_error():
    with pytest.raises(DomainError):
        PortfolioLoss([1.0, 1.0]).value([-0.5, 0.0])
    with pytest.raises(DomainError):
        PortfolioLoss([1.0, 1.0], shifted=True).grad([-1.0, -1.0])
    with pytest.raises(LossDataError):
        PortfolioLoss([1.0, 0.0])


def test_matrix_completion_zero_at_target():
    rng = np.random.default_rng(0)
    N = rng.standard_normal((3, 4))
    M = N.T @ N
    mask = rng.random((4, 4)) < 0.5
    f = MatrixCompletionLoss(M, mask)
    assert f.value(M.ravel()) == 0.0
    assert not f.grad(M.ravel()).any()


@pytest.mark.parametrize("family", ["quadratic", "portfolio", "matrix"])
def test_gradients_match_finite_differences(family):
    rng = np.random.default_rng(1)
    if family == "quadratic":
        seq = gen_quadratic_sequence(4, 100, rng)
    elif family == "portfolio":
        seq = gen_price_ratios(4, 100, rng)
    else:
        seq = gen_matrix_sequence(3, 2, 100, rng)
    # interior points: the log-wealth loss blows up at a vertex of its set
    pts = seq.constraint.shrink(0.5).sample_points(100, rng)
    for t, x in enumerate(pts):
        f = seq[t]
        g = f.grad(x)
        fd = central_diff(f.value, x)
        assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))
        # the sequence fast paths agree with the single-round objects
        assert seq.value(t, x) == pytest.approx(f.value(x), rel=1e-12, abs=1e-12)
        assert np.allclose(seq.gradient(t, x), g)


@pytest.mark.parametrize("family", ["quadratic", "portfolio", "matrix"])
def test_losses_midpoint_convex(family):
    rng = np.random.default_rng(2)
    if family == "quadratic":
        seq = gen_quadratic_sequence(5, 50, rng)
    elif family == "portfolio":
        seq = gen_price_ratios(5, 50, rng)
    else:
        seq = gen_matrix_sequence(4, 3, 50, rng)
    P = seq.constraint.sample_points(1000, rng)
    Q = seq.constraint.sample_points(1000, rng)[::-1]
    rounds = rng.integers(len(seq), size=1000)
    mid = seq.value_pairs(rounds, (P + Q) / 2)
    ends = (seq.value_pairs(rounds, P) + seq.value_pairs(rounds, Q)) / 2
    ok = np.isfinite(ends)
    assert np.all(mid[ok] <= ends[ok] + 1e-10)


def test_batched_evaluation_matches_scalar():
    rng = np.random.default_rng(3)
    seq = gen_quadratic_sequence(3, 20, rng)
    P = seq.constraint.sample_points(20, rng)
    rounds = np.arange(20)
    assert np.allclose(seq.value_pairs(rounds, P), [seq.value(t, p) for t, p in zip(rounds, P)])
    assert np.allclose(seq.gradient_pairs(rounds, P), [seq.gradient(t, p) for t, p in zip(rounds, P)])
    f = seq[0]
    assert np.allclose(f.eval_many(P), [f.value(p) for p in P])


@pytest.mark.parametrize("family", ["quadratic", "portfolio", "matrix"])
def test_total_is_sum_of_rounds(family):
    rng = np.random.default_rng(4)
    if family == "quadratic":
        seq = gen_quadratic_sequence(3, 30, rng)
    elif family == "portfolio":
        seq = gen_price_ratios(3, 30, rng)
    else:
        seq = gen_matrix_sequence(3, 2, 30, rng)
    total = seq.total(17)
    for x in seq.constraint.shrink(0.5).sample_points(5, rng):
        assert total.value(x) == pytest.approx(sum(seq.value(t, x) for t in range(17)), rel=1e-10)
        assert np.allclose(total.grad(x), sum(seq.gradient(t, x) for t in range(17)))


# ---------------------------------------------------------------------------
# generators


def test_quadratic_generator_deterministic():
    a = gen_quadratic_sequence(4, 10, np.random.default_rng(42))
    b = gen_quadratic_sequence(4, 10, np.random.default_rng(42))
    assert a.checksum() == b.checksum()
    assert np.array_equal(a.A, b.A)
    assert np.array_equal(a.constraint.A, b.constraint.A)


def test_quadratic_generator_moments():
    seq = gen_quadratic_sequence(10, 1000, np.random.default_rng(0))
    assert abs(seq.G_factors.mean()) <= 0.02
    assert seq.constraint.A.min() >= 0 and seq.constraint.A.max() <= 1
    assert seq.constraint.m == 5
    # A_t = G_t^T G_t is PSD
    assert np.linalg.eigvalsh(seq.A[:50]).min() >= -1e-9


def test_price_csv_ratios(tmp_path):
    p = tmp_path / "prices.csv"
    p.write_text("AAA,BBB\n1,1\n2,1\n1,1\n")
    seq = ingest_price_csv(p)
    assert np.allclose(seq.ratios, [[2.0, 1.0], [0.5, 1.0]])
    assert isinstance(seq.constraint, ShiftedSimplex)


def test_price_csv_without_header(tmp_path):
    p = tmp_path / "prices.csv"
    p.write_text("1,1\n1,1\n\n1,1\n")
    seq = ingest_price_csv(p)
    assert np.allclose(seq.ratios, 1.0)
    # uniform portfolio y = 0 means x = 1/(2n) each, wealth 1/2 at ratio 1; y = 1 gives x = 1/n
    assert seq.value(0, np.ones(2)) == pytest.approx(0.0)


@pytest.mark.parametrize(
    "text",
    ["1,1\n2\n", "1,1\n0,1\n", "1,1\n-1,2\n", "A,B\n1,x\n", "A,B\n1,1\n"],
)
def test_price_csv_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(LossDataError):
        read_price_csv(p)


def test_synthetic_ratios_in_band():
    seq = gen_price_ratios(100, 10_000, np.random.default_rng(0))
    assert seq.ratios.min() > 0.9 and seq.ratios.max() < 1.1


def test_constant_prices_uniform_loss_zero():
    seq = PortfolioSequence(np.ones((3, 4)))
    # fully invested uniform portfolio: x = 1/n, y = 2n/n - 1 = 1
    assert seq.value(0, np.ones(4)) == 0.0


def test_matrix_generator():
    seq = gen_matrix_sequence(20, 18, 100, np.random.default_rng(0))
    assert np.all(seq.masks.sum(axis=1) == 200)
    assert np.linalg.eigvalsh(seq.targets).min() >= -1e-8
    assert isinstance(seq.constraint, NuclearNormBall)
    again = gen_matrix_sequence(20, 18, 100, np.random.default_rng(0))
    assert seq.checksum() == again.checksum()
    with pytest.raises(ValueError):
        gen_matrix_sequence(3, 4, 10, np.random.default_rng(0))


def test_odd_mask_size_rounds_up():
    seq = gen_matrix_sequence(3, 2, 5, np.random.default_rng(0))
    assert np.all(seq.masks.sum(axis=1) == 5)


# ---------------------------------------------------------------------------
# bounds


def test_estimated_bounds_cover_sampled_points():
    rng = np.random.default_rng(5)
    seq = gen_quadratic_sequence(5, 200, rng)
    M, G = seq.estimate_bounds(rng, samples=2000)
    pts = seq.constraint.sample_points(500, rng)
    rounds = rng.integers(200, size=500)
    assert np.abs(seq.value_pairs(rounds, pts)).max() <= M
    assert np.linalg.norm(seq.gradient_pairs(rounds, pts), axis=1).max() <= G


def test_portfolio_bounds_skip_zero_wealth_vertex():
    rng = np.random.default_rng(6)
    seq = gen_price_ratios(4, 100, rng)
    M, G = seq.estimate_bounds(rng, samples=2000)
    assert math.isfinite(M) and math.isfinite(G)


@pytest.mark.parametrize("experiment", ["quadratic", "portfolio", "matrix_completion"])
def test_observed_values_within_bounds_after_run(experiment):
    # values and gradients seen at played points stay under the stored M and G
    cfg = ExperimentConfig(experiment=experiment, T=300, repetitions=1, n={"quadratic": 6, "portfolio": 8,
                                                                        "matrix_completion": 5}[experiment], k=4)
    seq = make_sequence(cfg, 0)
    for name in ("pfbco", "fkm"):
        learner = make_learner(name, seq, cfg, _stream(0, name))
        vals, grads = [], []
        for t in range(cfg.T):
            y = learner.query()
            vals.append(seq.value(t, y))
            grads.append(np.linalg.norm(seq.gradient(t, y)))
            learner.update(vals[-1])
        assert max(abs(v) for v in vals) <= seq.M
        assert max(grads) <= seq.G
