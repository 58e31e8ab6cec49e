import numpy as np
import pytest

from metricbench.config import load_config, parse_config
from metricbench.errors import ParseError, SeparationInfeasible, ValidationError
from metricbench.synth import SyntheticSpec, synth_dataset

MINIMAL = """
[dataset.synthetic]
num_classes = 16
dim = 10
samples_per_class = 20
separation = 2.0
spread = 0.5

[loss]
id = "contrastive"
"""


def write(tmp_path, text):
    path = tmp_path / "config.toml"
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_minimal_defaults_applied(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        spec = cfg.loss_specs[0]
        assert spec.loss_id == "contrastive"
        batch = cfg.batch_spec_for("contrastive")
        assert (batch.classes_per_batch, batch.samples_per_class) == (8, 4)
        batch = cfg.batch_spec_for("arcface")
        assert (batch.classes_per_batch, batch.samples_per_class) == (32, 1)
        assert cfg.strategy == "random"
        assert cfg.n_runs == 10

    def test_unknown_key_named(self, tmp_path):
        bad = MINIMAL + "\n[trainer]\noptimzer = \"adam\"\n"
        with pytest.raises(ValidationError, match="optimzer"):
            load_config(write(tmp_path, bad))

    def test_batch_size_256_override(self, tmp_path):
        text = MINIMAL + "\n[batch]\nbatch_size = 256\n"
        cfg = load_config(write(tmp_path, text))
        batch = cfg.batch_spec_for("contrastive")
        assert batch.batch_size == 256
        assert batch.samples_per_class == 4
        assert batch.classes_per_batch == 64
        batch = cfg.batch_spec_for("normalized_softmax")
        assert batch.batch_size == 256
        assert batch.classes_per_batch == 256

    def test_bad_toml_syntax(self, tmp_path):
        with pytest.raises(ParseError):
            load_config(write(tmp_path, "[dataset\nbroken"))

    def test_unknown_loss_id(self, tmp_path):
        text = MINIMAL.replace('id = "contrastive"', 'id = "circle"')
        with pytest.raises(ValidationError, match="circle"):
            load_config(write(tmp_path, text))

    def test_bad_loss_param_named(self, tmp_path):
        text = MINIMAL + "\n[loss.params]\nmargin = 0.1\n"
        with pytest.raises(ValidationError, match="params"):
            load_config(write(tmp_path, text))

    def test_space_on_unknown_param(self, tmp_path):
        text = MINIMAL + "\n[loss.space]\nbogus = { lo = 0.0, hi = 1.0 }\n"
        with pytest.raises(ValidationError, match="bogus"):
            load_config(write(tmp_path, text))

    def test_miner_compatibility(self, tmp_path):
        text = MINIMAL.replace('id = "contrastive"',
                               'id = "arcface"\nminer = "multisimilarity"')
        with pytest.raises(ValidationError, match="miner"):
            load_config(write(tmp_path, text))
        text = MINIMAL.replace('id = "contrastive"',
                               'id = "contrastive"\nminer = "semihard"')
        with pytest.raises(ValidationError, match="triplet"):
            load_config(write(tmp_path, text))

    def test_losses_array(self, tmp_path):
        text = """
[dataset.synthetic]
num_classes = 16
dim = 10
samples_per_class = 20
separation = 2.0
spread = 0.5

[[losses]]
id = "contrastive"

[[losses]]
id = "triplet"
miner = "semihard"
"""
        cfg = load_config(write(tmp_path, text))
        assert [s.loss_id for s in cfg.loss_specs] == ["contrastive", "triplet"]

    def test_dataset_required(self):
        with pytest.raises(ValidationError, match="dataset"):
            parse_config({"loss": {"id": "triplet"}})

    def test_config_hash_stable_and_sensitive(self, tmp_path):
        cfg_a = load_config(write(tmp_path, MINIMAL))
        cfg_b = load_config(write(tmp_path, MINIMAL))
        assert cfg_a.config_hash() == cfg_b.config_hash()
        cfg_c = load_config(write(tmp_path, "seed = 9\n" + MINIMAL))
        assert cfg_c.config_hash() != cfg_a.config_hash()

    def test_load_dataset_synthetic(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        data = cfg.load_dataset()
        assert data.n == 16 * 20
        assert data.dim == 10

    def test_load_dataset_from_file(self, tmp_path):
        from metricbench.embedcore import EmbeddingSet, LabelSet
        from metricbench.embfiles import write_csv

        rng = np.random.default_rng(0)
        write_csv(tmp_path / "d.csv", EmbeddingSet(rng.standard_normal((12, 3))),
                  LabelSet(np.repeat([0, 1, 2], 4)))
        text = MINIMAL.replace(
            """[dataset.synthetic]
num_classes = 16
dim = 10
samples_per_class = 20
separation = 2.0
spread = 0.5""", f'[dataset]\npath = "{tmp_path / "d.csv"}"')
        cfg = load_config(write(tmp_path, text))
        data = cfg.load_dataset()
        assert data.n == 12 and data.dim == 3


class TestSynthDataset:
    def test_deterministic(self):
        spec = SyntheticSpec(16, 8, 10, 2.0, 0.3, seed=5)
        a = synth_dataset(spec)
        b = synth_dataset(spec)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.labels.labels, b.labels.labels)

    def test_center_separation_honored(self):
        spec = SyntheticSpec(12, 6, 30, 3.0, 0.01, seed=1)
        data = synth_dataset(spec)
        centers = np.array([data.inputs[data.labels.labels == c].mean(axis=0)
                            for c in range(12)])
        d = np.linalg.norm(centers[:, None] - centers[None, :], axis=2)
        np.fill_diagonal(d, np.inf)
        assert d.min() >= 3.0 * 0.9  # sample means sit near the true centers

    def test_infeasible_separation(self):
        with pytest.raises(SeparationInfeasible):
            synth_dataset(SyntheticSpec(64, 2, 5, 2.0, 0.1, seed=0))

    def test_noise_dims_variance_matched(self):
        spec = SyntheticSpec(16, 8, 200, 3.0, 0.4, seed=2, noise_dims=8)
        data = synth_dataset(spec)
        assert data.dim == 16
        signal_var = data.inputs[:, :8].var(axis=0).mean()
        noise_var = data.inputs[:, 8:].var(axis=0).mean()
        assert 0.6 <= noise_var / signal_var <= 1.6

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValidationError):
            SyntheticSpec(4, 8, 10, 2.0, 0.3)
        with pytest.raises(ValidationError):
            SyntheticSpec(16, 8, 10, -1.0, 0.3)
        with pytest.raises(ValidationError):
            SyntheticSpec(16, 8, 1, 2.0, 0.3)
