import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from deepsense import config as C
from deepsense.model import DeepSenseConfig


def test_defaults_give_documented_model():
    cfg = C.resolve_config(env={})
    assert C.model_config(cfg) == DeepSenseConfig()
    spec = C.loss_spec(cfg)
    assert spec.lam == 1.0 and abs(spec.theta - math.pi / 6) < 1e-15


def test_flag_beats_file():
    cfg = C.resolve_config("run.task=cartrack\nloss.lambda=2\n", {"loss.lambda": "3"}, env={})
    assert C.loss_spec(cfg).lam == 3.0
    assert C.resolve_config("run.task=cartrack\nloss.lambda=2\n", env={})["loss.lambda"] == "2"


def test_env_seed_is_lowest_precedence():
    assert C.resolve_config(env={"DEEPSENSE_SEED": "9"})["run.seed"] == "9"
    assert C.resolve_config("run.seed=4", env={"DEEPSENSE_SEED": "9"})["run.seed"] == "4"
    assert C.resolve_config(None, {"run.seed": "5"}, env={"DEEPSENSE_SEED": "9"})["run.seed"] == "5"


@pytest.mark.parametrize("task", sorted(C.TASK_PRESETS))
def test_round_trip_fixed_point(task):
    first = C.resolve_config(None, {"run.task": task, "model.cov2": "2"}, env={})
    again = C.resolve_config(C.to_text(first), env={})
    assert again == first
    assert C.to_text(again) == C.to_text(first)


@given(st.sampled_from(sorted(C.TASK_PRESETS)), st.integers(0, 10 ** 6), st.floats(0, 3.0))
def test_round_trip_property(task, seed, lam):
    first = C.resolve_config(None, {"run.task": task, "run.seed": str(seed)}, env={})
    first["loss.lambda"] = repr(lam)
    assert C.resolve_config(C.to_text(first), env={}) == first


def test_contradictory_head_names_key():
    with pytest.raises(C.ConfigError) as info:
        C.resolve_config(None, {"run.task": "hhar", "model.task": "regression"}, env={})
    assert info.value.key == "model.task"
    with pytest.raises(C.ConfigError) as info:
        C.resolve_config(None, {"run.task": "cartrack", "loss.name": "cross_entropy"}, env={})
    assert info.value.key == "loss.name"


@pytest.mark.parametrize("key,value", [
    ("model.cov1", "x"), ("optim.lr", "-1"), ("loss.theta", "4"), ("model.variant", "tiny"),
    ("run.split", "kfold:3:5"), ("run.seed", "abc"), ("model.dropout", "1.5"),
])
def test_bad_values_name_key(key, value):
    with pytest.raises(C.ConfigError) as info:
        C.resolve_config(None, {key: value}, env={})
    assert info.value.key.split(".")[0] == key.split(".")[0]
    assert key.split(".")[0] in str(info.value)


def test_unknown_key():
    with pytest.raises(C.ConfigError, match="model.colour"):
        C.resolve_config("model.colour=red", env={})


def test_parse_text_comments_and_errors():
    assert C.parse_text("# c\n a = 1 # trailing\n\n") == {"a": "1"}
    with pytest.raises(C.ConfigError):
        C.parse_text("no equals here")


def test_parse_split():
    assert C.parse_split("none") == ("none",)
    assert C.parse_split("loso:c") == ("loso", "c")
    assert C.parse_split("kfold:10:3") == ("kfold", 10, 3)
    for bad in ("loso:", "kfold:1:0", "kfold:a:b", "random"):
        with pytest.raises(C.ConfigError):
            C.parse_split(bad)


def test_cartrack_preset():
    cfg = C.resolve_config(None, {"run.task": "cartrack"}, env={})
    m = C.model_config(cfg)
    assert m.task == "regression" and m.dims == (3, 3, 3) and m.out_dim == 2
    assert C.sim_config(cfg).block == 80.0
