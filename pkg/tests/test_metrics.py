import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pdsep.dataset import synth_dataset
from pdsep.metrics import (
    PSNR_CAP,
    UndefinedCorrelationError,
    correlation,
    evaluate,
    mse,
    psnr,
    read_report_csv,
    report_csv,
    unit_range,
)
from pdsep.mixing import source_bank

# six decimals keep squared differences clear of float underflow
signals = arrays(np.float64, st.integers(2, 64), elements=st.floats(-1, 1).map(lambda v: round(v, 6)))


def pearson_oracle(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    xm, ym = x.mean(), y.mean()
    return np.sum((x - xm) * (y - ym)) / np.sqrt(np.sum((x - xm) ** 2) * np.sum((y - ym) ** 2))


def test_mse_examples():
    assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert mse([0.0, 0.0], [1.0, 1.0]) == 1.0
    assert mse([0.0, 2.0], [1.0, 1.0]) == 1.0
    with pytest.raises(ValueError):
        mse([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        mse([], [])


def test_psnr_examples():
    m = np.zeros(100)
    h = np.full(100, 0.1)  # MSE 0.01
    assert psnr(m, h, 1.0) == pytest.approx(20.0)
    assert psnr(m, m) == PSNR_CAP
    with pytest.raises(ValueError):
        psnr(m, h, 0.0)
    with pytest.raises(ValueError):
        psnr(m, h, -1.0)


@given(signals, st.floats(1e-3, 10.0))
def test_psnr_halving_mse_gains_3db(x, offset):
    a, b = psnr(x, x + offset), psnr(x, x + offset / np.sqrt(2))
    assert b - a == pytest.approx(10 * np.log10(2), abs=1e-6)


@given(signals, signals)
def test_psnr_symmetric_and_mse_nonnegative(x, y):
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    assert psnr(x, y) == psnr(y, x)
    assert mse(x, y) >= 0
    assert (mse(x, y) == 0) == bool(np.array_equal(x, y))


def test_correlation_examples():
    assert correlation([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert correlation([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert correlation([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)


def test_correlation_errors():
    with pytest.raises(UndefinedCorrelationError):
        correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        correlation([1.0], [2.0])
    with pytest.raises(ValueError):
        correlation([1.0, 2.0], [1.0, 2.0, 3.0])


nonconstant = signals.filter(lambda x: np.ptp(x) > 1e-3)


@settings(max_examples=200)
@given(nonconstant)
def test_self_correlation(x):
    assert correlation(x, x) == pytest.approx(1.0, abs=1e-12)
    assert correlation(x, -x) == pytest.approx(-1.0, abs=1e-12)


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-10, 10))
def test_correlation_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal(50), rng.standard_normal(50)
    r = correlation(x, y)
    assert correlation(a * x + b, y) == pytest.approx(r, abs=1e-9)
    assert correlation(-a * x + b, y) == pytest.approx(-r, abs=1e-9)
    assert r == pytest.approx(pearson_oracle(x, y), abs=1e-12)
    assert -1 <= r <= 1


def test_unit_range():
    np.testing.assert_array_equal(unit_range([-1.0, 0.0, 1.0]), [0.0, 0.5, 1.0])


@pytest.fixture
def dataset():
    return synth_dataset(source_bank(1), 3, "inst", 2, seed=1, split="test")


def test_evaluate_ground_truth(dataset):
    report = evaluate([list(r.sources) for r in dataset], dataset)
    assert np.all(report.corr == 1.0)
    assert np.all(report.psnr_db == PSNR_CAP)
    assert report.sentinel_count == 6
    assert report.grand_psnr() == PSNR_CAP


def test_evaluate_mixture_equals_baseline(dataset):
    report = evaluate([[r.mixture] * 2 for r in dataset], dataset)
    np.testing.assert_array_equal(report.corr, report.baseline_corr)
    for k, rec in enumerate(dataset):
        for i in range(2):
            assert report.baseline_corr[k, i] == correlation(rec.mixture, rec.sources[i])
            expected = psnr((rec.mixture + 1) / 2, (rec.sources[i] + 1) / 2, 1.0)
            assert report.psnr_db[k, i] == pytest.approx(expected)


def test_evaluate_fixed_index_and_permutation(dataset):
    swapped = [[r.sources[1], r.sources[0]] for r in dataset]
    fixed = evaluate(swapped, dataset)
    assert np.all(fixed.corr < 1)
    best = evaluate(swapped, dataset, permute=True)
    assert np.all(best.corr == 1.0)
    assert best.permutations == [(1, 0)] * 3


def test_evaluate_count_mismatch(dataset):
    with pytest.raises(ValueError):
        evaluate([[r.mixture] for r in dataset], dataset)
    with pytest.raises(ValueError):
        evaluate([], dataset)


def test_grand_mean_excludes_sentinels(dataset):
    estimates = [[r.mixture, r.sources[1]] for r in dataset]
    report = evaluate(estimates, dataset)
    assert report.sentinel_count == 3
    assert report.grand_psnr() == pytest.approx(report.psnr_db[:, 0].mean())
    assert report.mean_psnr()[1] == PSNR_CAP


def test_report_csv(tmp_path):
    ds = synth_dataset(source_bank(1), 1, "inst", 2, seed=0)
    rng = np.random.default_rng(0)
    report = evaluate([[np.tanh(r.mixture + rng.normal(0, 0.3, 256)) for _ in range(2)] for r in ds], ds)
    path = tmp_path / "m.csv"
    report_csv(report, path)
    first = path.read_bytes()
    report_csv(report, path)
    assert path.read_bytes() == first
    lines = first.decode().splitlines()
    assert lines[0] == "record,source,psnr_db,corr,baseline_corr"
    rows, means = read_report_csv(path)
    assert len(rows) == 2 and len(means) == 3
    for row in rows:
        k, i = row["record"], int(row["source"])
        assert row["psnr_db"] == pytest.approx(report.psnr_db[k, i], rel=1e-6)
        assert row["corr"] == pytest.approx(report.corr[k, i], rel=1e-6)
        assert row["baseline_corr"] == pytest.approx(report.baseline_corr[k, i], rel=1e-6)
    assert means[-1]["source"] == "all"
    assert means[-1]["corr"] == pytest.approx(np.mean([r["corr"] for r in rows]), rel=1e-6)
