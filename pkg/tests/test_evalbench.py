import math

import numpy as np
import pytest

from pcsr import data, evalbench, inference, models
from pcsr.inference import InferencePolicy

from conftest import make_full_model


def direct_psnr(a, b):
    total, n = 0.0, 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (x - y) ** 2
        n += 1
    return -10 * math.log10(total / n)


def test_psnr_examples():
    a = np.full((4, 4, 3), 0.5)
    assert evalbench.psnr(a, a) == math.inf
    assert abs(evalbench.psnr(a, a + 0.1) - 20.0) < 1e-9
    with pytest.raises(ValueError):
        evalbench.psnr(a, a[:2])


def test_psnr_matches_direct_sum():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.random((6, 5, 3)), rng.random((6, 5, 3))
        assert abs(evalbench.psnr(a, b) - direct_psnr(a, b)) <= 1e-9
        assert evalbench.psnr(a, b) == evalbench.psnr(b, a)


def test_mean_psnr_excludes_inf():
    with pytest.warns(RuntimeWarning):
        assert evalbench.mean_psnr([20.0, math.inf, 30.0]) == 25.0


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("val")
    data.write_synthetic_corpus(root, count=2, size=16, seed=4)
    return make_full_model(2), data.build_dataset(root, 2, "val")


def test_evaluate_deterministic_and_ordered(bench):
    model, ds = bench
    heavy = evalbench.evaluate(model, ds, InferencePolicy.fixed_class(0))
    assert heavy == evalbench.evaluate(model, ds, InferencePolicy.fixed_class(0))
    light = evalbench.evaluate(model, ds, InferencePolicy.fixed_class(1))
    assert light.total_flops < heavy.total_flops
    assert heavy.fractions == (1.0, 0.0)


def test_untrained_model_rejected(bench):
    _, ds = bench
    with pytest.raises(models.StateError):
        evalbench.evaluate(models.build_model(), ds, InferencePolicy.fixed_class(0))


def test_sweep_limits_and_monotonicity(bench):
    model, ds = bench
    ks = [-1e6] + evalbench.quantile_k_values(model, ds) + [1e6]
    recs = evalbench.sweep_k(model, ds, ks)
    heavy = evalbench.evaluate(model, ds, InferencePolicy.fixed_class(0))
    light = evalbench.evaluate(model, ds, InferencePolicy.fixed_class(1))
    assert (recs[0].psnr_db, recs[0].total_flops, recs[0].fractions) == \
        (heavy.psnr_db, heavy.total_flops, heavy.fractions)
    assert (recs[-1].psnr_db, recs[-1].total_flops, recs[-1].fractions) == \
        (light.psnr_db, light.total_flops, light.fractions)
    f = [r.total_flops for r in recs]
    assert all(a >= b for a, b in zip(f, f[1:]))
    with pytest.raises(ValueError):
        evalbench.sweep_k(model, ds, [])
    with pytest.raises(ValueError):
        evalbench.sweep_k(model, ds, [1.0, 0.0])


def test_switch_k_is_the_threshold():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(3), size=300)
    costs = np.array([0.5, 0.3, 0.2])
    ks = evalbench.switch_k(probs, costs)
    below = inference.dispatch_k(probs, costs, 0.0).labels
    for i in np.flatnonzero(ks > 0):
        assert below[i] == 0
        assert inference.dispatch_k(probs[i:i + 1], costs, ks[i] + 1e-9).labels[0] > 0
        assert inference.dispatch_k(probs[i:i + 1], costs, ks[i] - 1e-9).labels[0] == 0


def test_oracle_and_baselines(bench):
    model, ds = bench
    e = ds.entries[0]
    labels = evalbench.oracle_assignment(model, e.lr, e.hr)
    np.testing.assert_array_equal(labels, evalbench.oracle_assignment(model, e.lr, e.hr))
    records = evalbench.baseline_records(model, ds, seed=0, refine=False)
    assert [r.policy for r in records] == ["fixed:0", "fixed:1", "random", "oracle"]
    assert records == evalbench.baseline_records(model, ds, seed=0, refine=False)
    assert records[2].total_flops < records[0].total_flops
    print("oracle vs best fixed:", records[3].psnr_db, max(records[0].psnr_db, records[1].psnr_db))
    one = make_full_model(1)
    assert not evalbench.oracle_assignment(one, e.lr, e.hr).any()


def test_csv_round_trip(bench, tmp_path):
    model, ds = bench
    records = evalbench.sweep_k(model, ds, [0.0, 1.0]) + evalbench.baseline_records(model, ds)
    evalbench.write_records_csv(records, tmp_path / "r.csv", 2)
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == "policy,k,psnr_db,total_flops,frac_class_0,frac_class_1"
    assert evalbench.read_records_csv(tmp_path / "r.csv") == records
