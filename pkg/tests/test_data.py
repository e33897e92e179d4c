import numpy as np
import pytest

from hexreg.data import (GenParams, HierarchicalDataset, augment,
                         augment_batch, generate, load_csv, save_csv)
from hexreg.errors import BadParams, SchemaError
from hexreg.linalg import cosine_sim_matrix, l2_normalize_rows
from hexreg.rng import Rng


class TestGenParams:
    def test_sigma_ordering_violation_names_inequality(self):
        with pytest.raises(BadParams, match="sigma_class <= sigma_super"):
            GenParams(sigma_super=0.5, sigma_class=1.0, sigma_sample=0.1)
        with pytest.raises(BadParams, match="sigma_sample <= sigma_class"):
            GenParams(sigma_super=2.0, sigma_class=0.5, sigma_sample=1.0)
        with pytest.raises(BadParams, match="sigma_sample must be > 0"):
            GenParams(sigma_sample=0.0)

    def test_counts_positive(self):
        with pytest.raises(BadParams):
            GenParams(n_super=0)


class TestGenerate:
    def test_deterministic(self):
        p = GenParams(n_super=2, classes_per_super=2, samples_per_class=5,
                      input_dim=8, seed=3)
        a = generate(p)
        b = generate(p)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.class_labels, b.class_labels)

    def test_label_structure(self):
        p = GenParams(n_super=3, classes_per_super=4, samples_per_class=7,
                      input_dim=5, seed=1)
        ds = generate(p)
        assert ds.n_samples == 3 * 4 * 7
        np.testing.assert_array_equal(ds.superclass_labels,
                                      ds.class_labels // 4)
        counts = np.bincount(ds.class_labels)
        assert (counts == 7).all()

    def test_tiny_sample_sigma_collapses_to_class_mean(self):
        p = GenParams(n_super=2, classes_per_super=2, samples_per_class=6,
                      input_dim=4, sigma_super=2.0, sigma_class=1.0,
                      sigma_sample=1e-15, seed=2)
        ds = generate(p)
        for c in range(4):
            rows = ds.x[ds.class_labels == c]
            assert np.abs(rows - rows[0]).max() < 1e-12

    def test_hierarchical_separation(self):
        p = GenParams(n_super=4, classes_per_super=4, samples_per_class=50,
                      input_dim=32, sigma_super=3.0, sigma_class=1.0,
                      sigma_sample=0.3, seed=11)
        ds = generate(p)
        z = l2_normalize_rows(ds.x)
        sims = cosine_sim_matrix(z)
        same = ds.superclass_labels[:, None] == ds.superclass_labels[None, :]
        off = ~np.eye(ds.n_samples, dtype=bool)
        assert sims[same & off].mean() > sims[~same].mean()

    def test_adding_samples_preserves_earlier_draws(self):
        small = generate(GenParams(n_super=2, classes_per_super=2,
                                   samples_per_class=3, input_dim=6, seed=9))
        large = generate(GenParams(n_super=2, classes_per_super=2,
                                   samples_per_class=5, input_dim=6, seed=9))
        for c in range(4):
            a = small.x[small.class_labels == c]
            b = large.x[large.class_labels == c][:3]
            assert np.array_equal(a, b)


class TestAugment:
    def test_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(augment(x, 0.0, 0.0, seed=1), x)

    def test_deterministic(self):
        x = np.arange(8.0)
        a = augment(x, 0.5, 0.2, seed=42)
        b = augment(x, 0.5, 0.2, seed=42)
        assert np.array_equal(a, b)

    def test_heavy_masking_zero_fraction(self):
        d = 400
        x = np.ones(d)
        kept = []
        for seed in range(30):
            out = augment(x, 0.0, 0.99, seed=seed)
            kept.append(np.count_nonzero(out) / d)
        # binomial(400, 0.01): mean 0.01, std ~0.005 per trial
        assert np.mean(kept) == pytest.approx(0.01, abs=0.005)

    def test_batch_path_matches_row_path(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(7, 9))
        seeds = [100 + i for i in range(7)]
        batch = augment_batch(x, 0.3, 0.25, seeds)
        rows = np.vstack([augment(x[i], 0.3, 0.25, seeds[i]) for i in range(7)])
        assert np.array_equal(batch, rows)

    def test_noise_then_mask_order(self):
        # masked coordinates are exactly zero even with noise applied
        x = np.full(200, 5.0)
        out = augment(x, 1.0, 0.5, seed=3)
        zeros = out == 0.0
        assert zeros.sum() > 50
        assert np.abs(out[~zeros] - 5.0).max() < 6.0

    def test_bad_params(self):
        with pytest.raises(BadParams):
            augment(np.ones(3), -0.1, 0.0, seed=0)
        with pytest.raises(BadParams):
            augment(np.ones(3), 0.0, 1.0, seed=0)


class TestCsvRoundTrip:
    def test_round_trip_exact(self, tmp_path):
        ds = generate(GenParams(n_super=2, classes_per_super=2,
                                samples_per_class=4, input_dim=5, seed=5))
        path = str(tmp_path / "ds.csv")
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(ds.x, back.x)
        assert np.array_equal(ds.class_labels, back.class_labels)
        assert np.array_equal(ds.superclass_labels, back.superclass_labels)

    def test_missing_superclass_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("f0,f1,class\n0.1,0.2,0\n")
        with pytest.raises(SchemaError):
            load_csv(str(path))

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("f0,f1,class,superclass\n0.1,0.2,0,0\n0.1,0,0\n")
        with pytest.raises(SchemaError):
            load_csv(str(path))

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("f0,class,superclass\npotato,0,0\n")
        with pytest.raises(SchemaError):
            load_csv(str(path))

    def test_feature_columns_must_be_ordered(self, tmp_path):
        path = tmp_path / "wrong.csv"
        path.write_text("f1,f0,class,superclass\n0.1,0.2,0,0\n")
        with pytest.raises(SchemaError):
            load_csv(str(path))

    def test_hand_written_external_fixture(self, tmp_path):
        path = tmp_path / "ext.csv"
        path.write_text("f0,f1,f2,class,superclass\n"
                        "1.0,0.0,0.0,0,0\n"
                        "0.0,1.0,0.0,1,0\n"
                        "0.0,0.0,1.0,2,1\n")
        ds = load_csv(str(path))
        assert ds.n_samples == 3 and ds.dim == 3
        np.testing.assert_array_equal(ds.superclass_labels, [0, 0, 1])

    def test_line_endings_and_no_quoting(self, tmp_path):
        ds = generate(GenParams(n_super=1, classes_per_super=1,
                                samples_per_class=2, input_dim=2, seed=6))
        path = tmp_path / "lf.csv"
        save_csv(ds, str(path))
        raw = path.read_bytes()
        assert b"\r" not in raw and b'"' not in raw


class TestRngContract:
    def test_child_streams_independent_of_parent_draws(self):
        a = Rng.from_seed(5)
        c1 = a.child(3)
        a.uniform()
        a.uniform()
        c2 = a.child(3)
        assert c1.key == c2.key

    def test_gauss_counter_layout(self):
        r = Rng.from_seed(8)
        pair = r.uniform_array(2)
        expect = np.sqrt(-2.0 * np.log(1.0 - pair[0])) * np.cos(2.0 * np.pi * pair[1])
        r2 = Rng.from_seed(8)
        assert r2.gauss() == pytest.approx(expect, abs=1e-15)
