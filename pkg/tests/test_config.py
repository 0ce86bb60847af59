import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from visfuse.config import ExperimentConfig
from visfuse.errors import ConfigError, DataIOError


def test_default_roundtrip(tmp_path):
    cfg = ExperimentConfig()
    cfg.save(tmp_path / "c.txt")
    assert ExperimentConfig.load(tmp_path / "c.txt", env={}) == cfg


@settings(max_examples=50, deadline=None)
@given(lr=st.floats(1e-6, 1.0), noise=st.floats(0.0, 2.0), frac=st.floats(1e-3, 1.0),
       n_train=st.integers(1, 10_000), kinds=st.sets(st.sampled_from(
           ["points", "blobs", "spiral", "ring", "edge_disk"]), min_size=1))
def test_roundtrip_is_lossless(lr, noise, frac, n_train, kinds):
    cfg = ExperimentConfig(lr=lr, noise_sigma=noise, train_fraction=frac, n_train=n_train,
                           kinds=tuple(sorted(kinds)))
    back = ExperimentConfig.from_text(cfg.to_text(), env={})
    assert back == cfg and back.hash() == cfg.hash()


def test_comments_and_blank_lines():
    cfg = ExperimentConfig.from_text("# header\n\nepochs = 3  # short run\n", env={})
    assert cfg.epochs == 3


def test_unknown_key_names_field():
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_text("epocs = 3\n", env={})
    assert ei.value.field == "epocs"


@pytest.mark.parametrize("text,field", [
    ("n_train = 0", "n_train"), ("train_fraction = 0", "train_fraction"),
    ("train_fraction = 1.5", "train_fraction"), ("grid_size = 48", "grid_size"),
    ("epochs = many", "epochs"), ("ablation = none", "ablation"),
    ("kinds = blobs,quasar", "kinds"), ("use_position_codes = maybe", "use_position_codes"),
])
def test_invalid_values_name_field(text, field):
    with pytest.raises(ConfigError) as ei:
        ExperimentConfig.from_text(text, env={})
    assert ei.value.field == field


def test_env_override():
    cfg = ExperimentConfig.from_text("epochs = 3\n", env={"VISFUSE_CFG_EPOCHS": "7",
                                                          "VISFUSE_CFG_LR": "0.5"})
    assert cfg.epochs == 7 and cfg.lr == 0.5
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("", env={"VISFUSE_CFG_NOPE": "1"})


def test_hash_sensitive_to_each_field():
    base = ExperimentConfig()
    perturbed = [base.replace(seed=1), base.replace(noise_sigma=0.06), base.replace(n_train=201),
                 base.replace(kinds=("blobs",)), base.replace(field_width=32)]
    hashes = {base.hash()} | {c.hash() for c in perturbed}
    assert len(hashes) == 6
    # every field participates, not just these five
    for f in dataclasses.fields(ExperimentConfig):
        assert f"{f.name} = " in base.to_text()


def test_missing_file():
    with pytest.raises(DataIOError):
        ExperimentConfig.load("/nonexistent/config.txt")
