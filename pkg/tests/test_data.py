import numpy as np
import pytest

from advmem.numcore import ContractViolation
from advmem.data import (
    CsvFormatError,
    CsvSchema,
    DomainSpec,
    LabeledDataset,
    default_domain_specs,
    load_csv,
    make_benchmark,
    save_csv,
)


def nearest_centroid_accuracy(train: LabeledDataset, test: LabeledDataset) -> float:
    """Oracle classifier: assign to the nearest class centroid of the
    training set."""
    cls = train.class_indices()
    centroids = np.stack([train.inputs[cls == c].mean(axis=0) for c in range(train.n_classes)])
    d2 = ((test.inputs[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float((np.argmin(d2, axis=1) == test.class_indices()).mean())


class TestBenchmark:
    def test_deterministic_generation(self):
        a_train, a_tests = make_benchmark(seed=5, n_train=100, n_test_per_domain=50)
        b_train, b_tests = make_benchmark(seed=5, n_train=100, n_test_per_domain=50)
        assert np.array_equal(a_train.inputs, b_train.inputs)
        assert np.array_equal(a_train.labels, b_train.labels)
        for x, yy in zip(a_tests, b_tests):
            assert np.array_equal(x.inputs, yy.inputs)

    def test_different_seeds_differ(self):
        a, _ = make_benchmark(seed=1, n_train=50, n_test_per_domain=10)
        b, _ = make_benchmark(seed=2, n_train=50, n_test_per_domain=10)
        assert not np.array_equal(a.inputs, b.inputs)

    def test_class_balance_within_one(self):
        for geometry, n_c in (("two_moons", 2), ("gaussian_blobs", 5)):
            train, tests = make_benchmark(
                seed=3, n_train=101, n_test_per_domain=53,
                geometry=geometry, n_classes=n_c,
            )
            for ds in (train, *tests):
                counts = np.bincount(ds.class_indices(), minlength=n_c)
                assert counts.max() - counts.min() <= 1

    def test_identity_domain_matches_training_distribution(self):
        train, tests = make_benchmark(
            seed=7, n_train=2000, n_test_per_domain=2000,
            domain_specs=[DomainSpec(name="same")],
        )
        acc_train = nearest_centroid_accuracy(train, train)
        acc_test = nearest_centroid_accuracy(train, tests[0])
        assert abs(acc_train - acc_test) <= 0.03

    def test_rotation_by_pi_swaps_antipodal_blobs(self):
        train, tests = make_benchmark(
            seed=11, n_train=800, n_test_per_domain=800,
            geometry="gaussian_blobs", n_classes=2, geometry_noise=0.3,
            domain_specs=[DomainSpec(name="flip", rotation_deg=180.0)],
        )
        acc_train = nearest_centroid_accuracy(train, train)
        acc_flip = nearest_centroid_accuracy(train, tests[0])
        assert acc_train >= 0.95
        assert abs(acc_flip - (1.0 - acc_train)) <= 0.05

    def test_default_specs_are_increasing_rotations(self):
        specs = default_domain_specs()
        assert [s.rotation_deg for s in specs] == [15.0, 30.0, 45.0, 60.0]

    def test_rotation_shift_grows_with_angle(self):
        train, tests = make_benchmark(seed=13, n_train=1500, n_test_per_domain=1000)
        accs = [nearest_centroid_accuracy(train, t) for t in tests]
        assert accs[0] > accs[-1]  # nearest-centroid degrades as domains rotate

    def test_bad_parameters_rejected(self):
        with pytest.raises(ContractViolation):
            make_benchmark(seed=0, n_train=10, n_test_per_domain=10, geometry="spiral")
        with pytest.raises(ContractViolation):
            make_benchmark(seed=0, n_train=10, n_test_per_domain=10, n_classes=3)
        with pytest.raises(ContractViolation):
            make_benchmark(seed=0, n_train=10, n_test_per_domain=10, domain_specs=[])
        with pytest.raises(ContractViolation):
            make_benchmark(
                seed=0, n_train=10, n_test_per_domain=10,
                domain_specs=[DomainSpec(name="bad", scale=(0.0, 1.0))],
            )


class TestCsv:
    def test_round_trip_exact(self, tmp_path):
        train, _ = make_benchmark(seed=4, n_train=30, n_test_per_domain=10)
        path = tmp_path / "train.csv"
        save_csv(train, path)
        loaded = load_csv(path)
        assert np.array_equal(loaded.inputs, train.inputs)
        assert np.array_equal(loaded.labels, train.labels)

    def test_three_row_identity_labels(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("f0,f1,label\n0.5,1.5,0\n2.5,3.5,1\n4.5,5.5,2\n")
        ds = load_csv(path)
        assert ds.n_classes == 3
        assert np.array_equal(ds.labels, np.eye(3))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(CsvFormatError, match="no data rows"):
            load_csv(path)

    def test_header_only_rejected(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("f0,f1,label\n")
        with pytest.raises(CsvFormatError, match="no data rows"):
            load_csv(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1,label\n1.0,2.0,0\nx,2.0,1\n")
        with pytest.raises(CsvFormatError, match="line 3"):
            load_csv(path)

    def test_unknown_class_id_rejected(self, tmp_path):
        path = tmp_path / "cls.csv"
        path.write_text("f0,label\n1.0,0\n2.0,5\n")
        with pytest.raises(CsvFormatError, match="unknown class id"):
            load_csv(path, schema=CsvSchema(["f0"], "label", 2))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "nope.csv")

    def test_row_order_preserved(self, tmp_path):
        path = tmp_path / "ord.csv"
        path.write_text("f0,label\n9.0,1\n1.0,0\n5.0,1\n")
        ds = load_csv(path)
        assert ds.inputs[:, 0].tolist() == [9.0, 1.0, 5.0]
