import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedkci import data
from fedkci.errors import ConfigError, DataError


def write_cifar_file(path, labels, pixel_fn=None):
    """Write a canonical 10000-record binary batch."""
    records = np.zeros((data.CIFAR_RECORDS_PER_FILE, data.CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    if pixel_fn is not None:
        records[:, 1:] = pixel_fn(records.shape[0])
    records.tofile(path)


@pytest.fixture
def cifar_dir(tmp_path):
    labels = np.arange(data.CIFAR_RECORDS_PER_FILE) % 10
    for name in data.CIFAR_TRAIN_FILES:
        write_cifar_file(tmp_path / name, labels)

    def pixels(n):
        px = np.zeros((n, 3072), dtype=np.uint8)
        px[0, :1024] = 255  # first record: red plane saturated
        px[1, 1024:2048] = 128
        return px

    write_cifar_file(tmp_path / "test_batch.bin", labels[::-1], pixels)
    return tmp_path


# --- CIFAR-10 -------------------------------------------------------------------


def test_cifar_file_size_constant():
    assert data.CIFAR_FILE_BYTES == 30_730_000


def test_cifar_train_split(cifar_dir):
    train = data.load_cifar10(cifar_dir, "train")
    assert len(train) == 50_000 and train.num_classes == 10
    assert train.inputs.shape == (50_000, 3, 32, 32)
    assert train.inputs.dtype == np.float32
    np.testing.assert_array_equal(np.bincount(train.labels), [5000] * 10)


def test_cifar_test_split_layout_and_normalization(cifar_dir):
    test = data.load_cifar10(cifar_dir, "test")
    assert len(test) == 10_000
    assert test.labels[0] == 9
    first = test.inputs[0]
    assert np.all(first[0] == 1.0)  # byte 255 -> 1.0
    assert np.all(first[1:] == -1.0)  # byte 0 -> -1.0
    np.testing.assert_allclose(test.inputs[1, 1], (128 / 255 - 0.5) / 0.5, atol=1e-6)


def test_normalize_endpoints():
    out = data.normalize_pixels(np.array([0, 255], dtype=np.uint8))
    assert out.tolist() == [-1.0, 1.0]


def test_missing_cifar_file_names_it(cifar_dir):
    (cifar_dir / "data_batch_3.bin").unlink()
    with pytest.raises(DataError, match="data_batch_3.bin"):
        data.load_cifar10(cifar_dir, "train")


def test_short_cifar_file(tmp_path):
    (tmp_path / "test_batch.bin").write_bytes(b"\x00" * 3073)
    with pytest.raises(DataError, match="test_batch.bin"):
        data.load_cifar10(tmp_path, "test")


def test_bad_cifar_label(tmp_path):
    labels = np.zeros(data.CIFAR_RECORDS_PER_FILE, dtype=np.uint8)
    labels[17] = 12
    write_cifar_file(tmp_path / "test_batch.bin", labels)
    with pytest.raises(DataError, match="record 17"):
        data.load_cifar10(tmp_path, "test")


def test_unknown_split(tmp_path):
    with pytest.raises(ConfigError):
        data.load_cifar10(tmp_path, "valid")


# --- synthetic ------------------------------------------------------------------


def softmax_regression_accuracy(train, test, steps=500, lr=0.5):
    """Full-batch gradient descent on a linear softmax model (independent of fedkci.nn)."""
    x, y = train.inputs.astype(np.float64), train.labels
    c = train.num_classes
    w, b = np.zeros((x.shape[1], c)), np.zeros(c)
    onehot = np.eye(c)[y]
    for _ in range(steps):
        z = x @ w + b
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        g = (p - onehot) / len(y)
        w -= lr * x.T @ g
        b -= lr * g.sum(0)
    return float(((test.inputs @ w + b).argmax(1) == test.labels).mean())


def test_separated_blobs_are_linearly_learnable():
    full = data.make_synthetic(2, 60, 2, 8.0, seed=1)
    train, test = data.train_test_split(full, 10, seed=1)
    assert len(train) == 100 and len(test) == 20
    assert softmax_regression_accuracy(train, test) >= 0.95


def test_synthetic_sizes_and_determinism():
    a = data.make_synthetic(3, 10, 4, 2.0, seed=5)
    b = data.make_synthetic(3, 10, 4, 2.0, seed=5)
    assert len(a) == 30 and a.num_classes == 3
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.inputs, data.make_synthetic(3, 10, 4, 2.0, seed=6).inputs)


@given(st.integers(2, 12), st.integers(1, 40), st.floats(0.1, 20), st.integers(0, 1000))
def test_blob_means_closest_pair_is_separation(c, d, sep, seed):
    means = data.blob_means(c, d, sep, np.random.default_rng(seed))
    dist = np.sqrt(((means[:, None] - means[None]) ** 2).sum(-1))
    closest = dist[np.triu_indices(c, 1)].min()
    assert closest == pytest.approx(sep, rel=1e-9)


@pytest.mark.parametrize("args", [(1, 5, 2, 1.0), (3, 0, 2, 1.0), (3, 5, 0, 1.0), (3, 5, 2, 0.0)])
def test_synthetic_rejects_bad_sizes(args):
    with pytest.raises(ConfigError):
        data.make_synthetic(*args, seed=0)


def test_train_test_split_is_stratified_and_disjoint(small_blobs):
    train, test = small_blobs
    assert np.bincount(test.labels).tolist() == [10] * 4
    assert np.bincount(train.labels).tolist() == [50] * 4
    both = np.concatenate([train.inputs, test.inputs])
    assert len(np.unique(both, axis=0)) == len(both)


def test_dataset_validates_labels():
    with pytest.raises(ConfigError):
        data.Dataset(np.zeros((2, 1)), np.array([0, 3]), 3)
    with pytest.raises(ConfigError):
        data.Dataset(np.zeros((0, 1)), np.zeros(0, dtype=int), 3)


# --- partition_iid --------------------------------------------------------------


@pytest.mark.parametrize("n, k, size", [(50_000, 10, 5000), (50_000, 100, 500)])
def test_uniform_partition_of_cifar_train(n, k, size):
    shards = data.partition_iid(n, k, seed=0)
    assert [s.n_k for s in shards] == [size] * k


def test_remainder_goes_to_lowest_ids():
    shards = data.partition_iid(7, 3, seed=0)
    assert [s.n_k for s in shards] == [3, 2, 2]
    assert [s.client_id for s in shards] == [0, 1, 2]


def test_partition_rejects_too_many_clients():
    with pytest.raises(ConfigError):
        data.partition_iid(3, 4, seed=0)
    with pytest.raises(ConfigError):
        data.partition_iid(3, 0, seed=0)


@settings(max_examples=60)
@given(st.integers(1, 100_000), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_partition_is_exact_cover_with_balanced_sizes(n, k, seed):
    k = min(k, n)
    shards = data.partition_iid(n, k, seed)
    allidx = np.concatenate([s.indices for s in shards])
    assert len(allidx) == n
    assert np.array_equal(np.sort(allidx), np.arange(n))
    sizes = [s.n_k for s in shards]
    assert max(sizes) - min(sizes) <= 1
    assert not any(s.knowledgeable for s in shards)


def test_partition_seed_sensitivity():
    a = np.concatenate([s.indices for s in data.partition_iid(1000, 4, seed=1)])
    b = np.concatenate([s.indices for s in data.partition_iid(1000, 4, seed=2)])
    assert not np.array_equal(a, b)


# --- sample_fraction -------------------------------------------------------------


def test_full_fraction_returns_everything(balanced_50k):
    idx = data.sample_fraction(balanced_50k, 1.0, seed=0)
    assert np.array_equal(idx, np.arange(50_000))


def test_half_fraction_is_class_balanced(balanced_50k):
    idx = data.sample_fraction(balanced_50k, 0.5, seed=0)
    assert len(idx) == 25_000
    assert np.bincount(balanced_50k.labels[idx]).tolist() == [2500] * 10
    assert len(np.unique(idx)) == len(idx)


def test_tenth_fraction(balanced_50k):
    assert len(data.sample_fraction(balanced_50k, 0.1, seed=0)) == 5000


@pytest.mark.parametrize("fraction", [0.0, -0.2, 1.5])
def test_fraction_range(balanced_50k, fraction):
    with pytest.raises(ConfigError):
        data.sample_fraction(balanced_50k, fraction, seed=0)


@settings(max_examples=40)
@given(
    st.sampled_from([0.1, 0.25, 0.5]),
    st.integers(2, 10),
    st.integers(1, 300),
    st.integers(0, 2**32 - 1),
)
def test_stratification_within_one_per_class(fraction, classes, per_class, seed):
    labels = np.repeat(np.arange(classes), per_class)
    ds = data.Dataset(np.zeros((len(labels), 1)), labels, classes)
    idx = data.sample_fraction(ds, fraction, seed)
    assert len(idx) == int(np.floor(fraction * len(labels) + 1e-9))
    assert len(np.unique(idx)) == len(idx)
    counts = np.bincount(labels[idx], minlength=classes)
    assert np.all(np.abs(counts - fraction * per_class) <= 1)


def test_unbalanced_fraction_tops_up_from_leftovers():
    labels = np.array([0] * 7 + [1] * 3)
    ds = data.Dataset(np.zeros((10, 1)), labels, 2)
    idx = data.sample_fraction(ds, 0.5, seed=3)
    # floor(3.5) + floor(1.5) = 4, topped up to floor(5.0) = 5
    assert len(idx) == 5


def test_split_stratified_parts():
    labels = np.arange(1000) % 10
    parts = data.split_stratified(np.arange(1000), labels, 4, seed=0)
    assert [len(p) for p in parts] == [250] * 4
    assert len(np.unique(np.concatenate(parts))) == 1000
    for p in parts:
        assert np.all(np.abs(np.bincount(labels[p], minlength=10) - 25) <= 1)
