import json

import numpy as np
import pytest

from noisyalign.alignment import ConfidenceWeightedAligner
from noisyalign.config import RunConfig, SynthConfig
from noisyalign.exceptions import ConfigError, FormatError
from noisyalign.runs import load_run, write_run
from noisyalign.synth import generate, load_split, write_dataset
from noisyalign.tokens import tokenize


def test_config_defaults_and_round_trip(tmp_path):
    cfg = RunConfig()
    assert cfg.lora.r == 16 and cfg.lora.alpha == 32.0
    assert cfg.optim.base_lr == 2e-4 and cfg.optim.head_lr_multiplier == 10.0 and cfg.optim.epochs == 10
    assert cfg.optim.init_tau == 0.07 and cfg.pipeline.target_width == 832
    cfg.save(tmp_path / "c.json")
    assert RunConfig.load(tmp_path / "c.json") == cfg


def test_config_partial_and_overrides():
    cfg = RunConfig.from_dict({"synth": {"rho": 0.4}})
    assert cfg.synth.rho == 0.4 and cfg.synth.n_classes == 4
    cfg2 = cfg.with_overrides({"optim.base_lr": 1e-3, "paths.data": "x"})
    assert cfg2.optim.base_lr == 1e-3 and cfg2.paths.data == "x" and cfg.optim.base_lr == 2e-4


@pytest.mark.parametrize("bad", [
    {"nope": 1},
    {"optim": {"epochs": 1.5}},
    {"optim": {"epochs": True}},
    {"confidence": {"enabled": "yes"}},
    {"confidence": {"rescale": "softmax"}},
    {"synth": {"rho": 1.5}},
    {"model": {"d_v": 7}},
    {"optim": []},
])
def test_config_rejections(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_config_bad_json(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"optim.nope": 1})


def test_synth_generation_properties():
    cfg = SynthConfig(n_classes=3, clips_per_class=10, test_clips_per_class=4, rho=0.5, pattern_len=4)
    data = generate(cfg, temporal_window=3, frame_width=4, frame_height=2, seed=5)
    assert data.train.pixels.shape == (30, 3, 2, 4, 1) and data.test.pixels.shape == (12, 3, 2, 4, 1)
    assert not data.test.corrupted.any() and 0 < data.train.corrupted.sum() < 30
    class_ids = {i for p in data.patterns for i in tokenize(" ".join(p)).words}
    assert len(class_ids) == 12
    for cap, clean, bad, label in zip(data.train.captions, data.train.clean_captions, data.train.corrupted,
                                      data.train.labels):
        assert clean == " ".join(data.patterns[label])
        if bad:
            assert not set(tokenize(cap).words) & class_ids
        else:
            assert cap == clean
    again = generate(cfg, temporal_window=3, frame_width=4, frame_height=2, seed=5)
    np.testing.assert_array_equal(again.train.pixels, data.train.pixels)


def test_synth_files_round_trip(tmp_path):
    data = generate(SynthConfig(clips_per_class=3, test_clips_per_class=2), temporal_window=4)
    write_dataset(tmp_path, data)
    split = load_split(tmp_path / "train")
    np.testing.assert_array_equal(split.pixels, data.train.pixels)
    assert [r.caption for r in split.records] == data.train.captions
    assert split.labels.tolist() == data.train.labels.tolist()
    assert json.loads((tmp_path / "prompts.json").read_text()) == data.prompts()
    assert (tmp_path / "reference_corpus.txt").read_text().splitlines() == data.train.clean_captions
    with pytest.raises(FormatError):
        load_split(tmp_path / "train", temporal_window=5)


def test_run_directory_round_trip(tmp_path):
    cfg = RunConfig.from_dict({"model": {"d_v": 8, "d_t": 8, "proj_dim": 8, "depth": 1},
                               "lora": {"r": 2, "alpha": 4.0}, "optim": {"epochs": 1, "batch_size": 4},
                               "temporal_window": 2})
    rng = np.random.default_rng(0)
    X = rng.normal(size=(8, 2, 32))
    aligner = ConfidenceWeightedAligner.from_config(cfg).fit(X, ["a b", "c d"] * 4)
    write_run(tmp_path, cfg, aligner)
    loaded, cfg2 = load_run(tmp_path)
    assert cfg2 == cfg
    np.testing.assert_array_equal(loaded.transform(X), aligner.transform(X))
    lines = (tmp_path / "loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss,tau,lr" and len(lines) == 1 + len(aligner.history_)
    assert float(lines[1].split(",")[1]) == aligner.history_[0]["loss"]
