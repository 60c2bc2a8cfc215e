import math

import numpy as np
import pytest

from fedsim import tasks
from fedsim.exceptions import ConfigError, DataError
from fedsim.verify import finite_difference_grad, relative_error


@pytest.fixture
def ds():
    return tasks.make_synthetic_classification(400, 5, 4, 3.0, seed=1)


@pytest.mark.parametrize("kind", ["logistic", "mlp"])
def test_classifier_gradients_match_finite_differences(ds, kind):
    obj = tasks.make_objective(kind, 5, 4, hidden=8)
    rng = np.random.default_rng(0)
    for _ in range(5):
        theta = rng.normal(size=obj.n_params)
        X, y = ds.features[:12], ds.labels[:12]
        fd = finite_difference_grad(lambda th: obj.loss(th, X, y), theta)
        assert relative_error(fd, obj.grad(theta, X, y)) <= 1e-6


def test_quadratic_gradient_and_loss():
    A = np.diag([1.0, 2.0])
    obj = tasks.HeterogeneousQuadratic(A)
    X = np.array([[1.0, 1.0], [3.0, -1.0]])
    theta = np.array([0.0, 0.0])
    np.testing.assert_allclose(obj.grad(theta, X), A @ (theta - X.mean(axis=0)))
    expected = 0.5 * np.mean([1 + 2, 9 + 2])
    assert obj.loss(theta, X) == pytest.approx(expected)


def test_quadratic_rejects_asymmetric():
    with pytest.raises(ConfigError):
        tasks.HeterogeneousQuadratic(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_logistic_at_zero_has_log_L_loss(ds):
    obj = tasks.MultinomialLogistic(5, 4)
    loss, acc = tasks.evaluate(obj, np.zeros(obj.n_params), ds)
    assert loss == pytest.approx(math.log(4))
    assert 0.0 <= acc <= 1.0


def test_predict_proba_rows_sum_to_one(ds):
    obj = tasks.TinyMLP(5, 4, hidden=6)
    theta = obj.init_params(np.random.default_rng(0))
    P = obj.predict_proba(theta, ds.features[:20])
    np.testing.assert_allclose(P.sum(axis=1), 1.0)


def test_dataset_validation():
    with pytest.raises(DataError):
        tasks.LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 5]), 3)
    with pytest.raises(DataError):
        tasks.LabeledDataset(np.array([[np.nan, 0.0]]), np.array([0]), 2)
    with pytest.raises(DataError):
        tasks.LabeledDataset(np.zeros((3, 2)), np.array([0, 1]), 2)


def test_dataset_is_read_only(ds):
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


@pytest.mark.parametrize("beta", [0.1, 0.5, 10.0])
def test_dirichlet_partition_is_exact_cover(ds, beta):
    rng = np.random.default_rng(3)
    parts = tasks.dirichlet_partition_indices(ds.labels, 10, beta, rng)
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(len(ds)))
    assert all(len(p) > 0 for p in parts)


def test_dirichlet_small_beta_is_more_skewed(ds):
    def mean_entropy(beta):
        parts = tasks.dirichlet_partition(ds, 10, beta, 7)
        return np.mean([tasks.label_entropy(p) for p in parts])
    assert mean_entropy(0.1) < mean_entropy(100.0)


def test_dirichlet_is_deterministic(ds):
    a = tasks.dirichlet_partition_indices(ds.labels, 8, 0.3, np.random.default_rng(5))
    b = tasks.dirichlet_partition_indices(ds.labels, 8, 0.3, np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_dirichlet_impossible_split_raises(ds):
    small = ds.subset(np.arange(3))
    with pytest.raises((ConfigError, DataError)):
        tasks.dirichlet_partition(small, 10, 0.5, 0)


def test_sample_batch_is_uniform_with_replacement():
    d = tasks.LabeledDataset(np.zeros((5, 1)), np.zeros(5, dtype=np.int64), 1)
    rng = np.random.default_rng(0)
    counts = np.zeros(5)
    for _ in range(2000):
        counts += np.bincount(tasks.sample_batch(d, 10, rng).indices, minlength=5)
    freq = counts / counts.sum()
    np.testing.assert_allclose(freq, 0.2, atol=0.01)


def test_train_test_split_sizes(ds):
    tr, te = tasks.train_test_split(ds, 0.25, np.random.default_rng(0))
    assert len(te) == 100 and len(tr) == 300


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n0.5,1.0,0\n-1,2,2\n")
    d = tasks.load_csv_dataset(p)
    assert d.n_classes == 3 and d.n_features == 2
    np.testing.assert_array_equal(d.labels, [0, 2])


def test_csv_errors_name_the_file(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,label\nx,1\n")
    with pytest.raises(DataError, match="bad.csv"):
        tasks.load_csv_dataset(p)


def test_quadratic_suite_optimum_is_stationary():
    s = tasks.make_quadratic_suite(6, 4, seed=0)
    g = np.mean([o.grad(s.optimum, d.features) for o, d in zip(s.objectives, s.datasets)], axis=0)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)
    assert s.global_loss(s.optimum + 0.1) > s.optimal_loss()
