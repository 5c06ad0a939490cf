import json

import numpy as np
import pytest

from dmsw.checkpoint import FORMAT_TAG, CheckpointError, load_model, save_model
from dmsw.config import ConfigError, RunConfig, from_mapping, load_config
from dmsw.pipeline import gradcheck_problem
from dmsw.train import predict_batch


def test_defaults_validate_and_hash_is_stable():
    a, b = RunConfig(), RunConfig()
    assert a.config_hash() == b.config_hash()
    assert a.replace(seed=1).config_hash() != a.config_hash()
    assert "lambda" in a.to_dict() and "lam" not in a.to_dict()


def test_lambda_key_roundtrip():
    cfg = from_mapping({"lambda": 0.25})
    assert cfg.lam == 0.25
    assert cfg.replace(**{"lambda": 0.0}).lam == 0.0


@pytest.mark.parametrize("bad", [{"bogus": 1}, {"periods": 1}, {"window_sizes": [0]}, {"window_sizes": [6]},
                                 {"second_order_mode": "ratio"}, {"placement": "mid"}, {"omega1": 0.9},
                                 {"test_fraction": 1.0}, {"smote_k": 0}, {"lambda": -1},
                                 {"distinction_sign": "maybe"}, {"percentile_q": 0}])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        from_mapping(bad)


def test_load_precedence(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 4\nlr: 0.5\nwindow_sizes: [1, 2]\n")
    cfg = load_config(path, {"lr": 0.125})
    assert (cfg.seed, cfg.lr, cfg.window_sizes) == (4, 0.125, [1, 2])
    (tmp_path / "c.json").write_text(json.dumps({"epochs": 7}))
    assert load_config(tmp_path / "c.json").epochs == 7
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.yaml")


def test_checkpoint_roundtrip(tmp_path):
    cfg = RunConfig().replace(placement="pre_fusion", second_order_mode="delta")
    model, batch, _ = gradcheck_problem(cfg, 3)
    path = save_model(model, tmp_path / "m.json", cfg.to_dict())
    back, echo = load_model(path)
    assert echo == cfg.to_dict()
    assert back.index_map == model.index_map
    assert back.window == model.window and back.cfg == model.cfg
    for a, b in zip(predict_batch(model, batch), predict_batch(back, batch)):
        assert np.array_equal(a, b)
    doc = json.loads(path.read_text())
    assert doc["format"] == FORMAT_TAG
    assert doc["arrays"]["clf_W1"]["shape"] == list(model.clf_W1.shape)
    assert doc["arrays"]["clf_W1"]["data"][:2] == model.clf_W1.ravel()[:2].tolist()


def test_checkpoint_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format": "other/9"}))
    with pytest.raises(CheckpointError, match="format"):
        load_model(bad)
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "none.json")
    bad.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_model(bad)
