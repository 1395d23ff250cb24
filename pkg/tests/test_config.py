import importlib
import inspect
import json
import typing
from pathlib import Path

import pytest
from pydantic import ValidationError

import src.config.index as config_module
from src.cli import load_run_config
from src.learning.lightnet import grad_check_all
from src.models.index import (
    ChannelKind,
    ChannelSpec,
    DatasetGenConfig,
    EvalConfig,
    LabelMode,
    RunConfig,
    SystemConfig,
    TrainConfig,
)
from src.pipeline.evaluation.utils import EvalResult
from src.services.workers import ordered_map
from src.utils.index import config_digest, derive_rng

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def reload_config(monkeypatch):
    def reload(**env):
        for name, value in env.items():
            monkeypatch.setenv(name, value)
        return importlib.reload(config_module).appConfig

    yield reload
    monkeypatch.undo()
    importlib.reload(config_module)


def test_app_config_reads_environment(reload_config):
    config = reload_config(SYNCLAB_OUTPUT_ROOT="elsewhere", SYNCLAB_WORKERS="3", LOG_LEVEL="debug")
    assert config["output_root"] == "elsewhere"
    assert config["workers"] == 3
    assert config["log_level"] == "DEBUG"


@pytest.mark.parametrize("workers", ["0", "many"])
def test_invalid_worker_count_names_the_variable(reload_config, workers):
    with pytest.raises(ValueError, match="SYNCLAB_WORKERS"):
        reload_config(SYNCLAB_WORKERS=workers)


def test_run_config_fills_seeds_from_master_seed():
    config = RunConfig(master_seed=42, train={"seed": 7})
    assert config.dataset.master_seed == 42
    assert config.eval.master_seed == 42
    assert config.train.seed == 7


def test_run_config_rejects_unknown_sections():
    with pytest.raises(ValidationError):
        RunConfig(trainer={"alpha": 0.1})


def test_fixed_label_mode_needs_a_value():
    with pytest.raises(ValidationError):
        DatasetGenConfig(label_mode=LabelMode.FIXED_TAU_HAT)


@pytest.mark.parametrize("field", ["snr_range_db", "eta_range"])
def test_reversed_intervals_are_rejected(field):
    with pytest.raises(ValidationError):
        DatasetGenConfig(**{field: (1.0, 0.5)})


def test_train_config_bounds():
    assert TrainConfig(alpha=0.0).alpha == 0.0
    with pytest.raises(ValidationError):
        TrainConfig(alpha=-0.1)
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)


def test_channel_spec_requires_kind_fields():
    with pytest.raises(ValidationError):
        ChannelSpec(kind=ChannelKind.EXPONENTIAL)
    with pytest.raises(ValidationError):
        ChannelSpec(kind=ChannelKind.TDL, name="TDL-A")


def test_eval_config_needs_snr_points():
    with pytest.raises(ValidationError):
        EvalConfig(snr_points_db=[])


def test_config_digest_is_stable_and_sensitive():
    assert config_digest(SystemConfig()) == config_digest(SystemConfig(N=128, N_g=32))
    assert config_digest(SystemConfig()) != config_digest(SystemConfig(N_g=16))


def test_derived_streams_are_independent_of_call_order():
    first = derive_rng(3, 1, 2).standard_normal(4)
    derive_rng(3, 0, 0).standard_normal(100)
    assert (derive_rng(3, 1, 2).standard_normal(4) == first).all()
    assert not (derive_rng(3, 2, 1).standard_normal(4) == first).all()


def test_train_config_epoch_budget_outlasts_the_initial_plateau():
    assert TrainConfig().max_epochs == 400
    assert TrainConfig().patience == 10


@pytest.mark.parametrize("name", ["desk_scale.json", "tau_mismatch.json"])
def test_desk_scale_configs_train_for_400_epochs(name):
    document = json.loads((CONFIG_DIR / name).read_text())
    config = RunConfig(**document)
    assert config.train.max_epochs == 400
    assert config.train.patience == 10
    assert config.train.alpha == 0.002


@pytest.mark.parametrize("fn", [ordered_map, EvalResult.row, grad_check_all, load_run_config])
def test_none_defaults_are_annotated_optional(fn):
    hints = typing.get_type_hints(fn)
    for name, parameter in inspect.signature(fn).parameters.items():
        if parameter.default is None:
            assert type(None) in typing.get_args(hints[name]), name
