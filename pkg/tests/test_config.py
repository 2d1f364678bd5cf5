import pytest

from ctwarp.core._2_weight_map import WeightMapParams
from ctwarp.core._4_engine import RegistrationConfig
from ctwarp.core.exceptions import InvalidParams, MalformedFile
from ctwarp.utils.config_utils import (
    config_parameters, load_config, read_parameters, save_config, validate_parameters,
)


def write_par(tmp_path, text, name="run.par"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_empty_file_gives_defaults(tmp_path):
    assert load_config(write_par(tmp_path, "")) == RegistrationConfig()
    assert load_config(write_par(tmp_path, "# only a comment\n\n")) == RegistrationConfig()


def test_single_override(tmp_path):
    config = load_config(write_par(tmp_path, "gamma\t1\n"))
    assert config == RegistrationConfig().with_weights(gamma=1.0)
    assert config.weight_params == WeightMapParams(4500.0, 3000.0, 1.0)


def test_equals_lines_and_comments(tmp_path):
    text = "pyramid_factors = 2,1   # two levels\niters_per_level=5,5\nseed\t3\n"
    config = load_config(write_par(tmp_path, text))
    assert config.pyramid_factors == (2, 1)
    assert config.iters_per_level == (5, 5)
    assert config.seed == 3


def test_inconsistent_weights(tmp_path):
    path = write_par(tmp_path, "mu_r\t2000\ndelta\t3000\n")
    with pytest.raises(InvalidParams) as err:
        load_config(path)
    assert err.value.key == "delta"
    assert path in str(err.value)


@pytest.mark.parametrize("text, key", [
    ("lambda\t10\n", "lambda"),
    ("seed\tabc\n", "seed"),
    ("seed\t1.5\n", "seed"),
    ("seed\t-1\n", "seed"),
    ("pyramid_factors\t1,2\niters_per_level\t5,5\n", "pyramid_factors"),
    ("gamma\t0\n", "gamma"),
    ("seed\tinf\n", "seed"),
    ("mu_r\tnan\n", "mu_r"),
    ("step_size\t1e400\n", "step_size"),
])
def test_invalid_parameters(tmp_path, text, key):
    with pytest.raises(InvalidParams) as err:
        load_config(write_par(tmp_path, text))
    assert err.value.key == key


def test_all_errors_are_listed():
    errors, _ = validate_parameters({"lambda": "1", "step_size": "fast"})
    assert sorted(key for _, key in errors) == ["lambda", "step_size"]


def test_malformed_and_missing_files(tmp_path):
    with pytest.raises(MalformedFile, match=r"run.par:2"):
        load_config(write_par(tmp_path, "gamma\t2\njust some words\n"))
    with pytest.raises(FileNotFoundError):
        load_config(str(tmp_path / "absent.par"))


def test_save_and_load_round_trip(tmp_path):
    config = RegistrationConfig(
        weight_params=WeightMapParams(4.5, 3.0, 1.5),
        pyramid_factors=(2, 1),
        iters_per_level=(7, 3),
        step_size=0.1,
        label_sample_count=4,
        seed=11,
        convergence_tol=0.0,
    )
    path = save_config(config, str(tmp_path / "out" / "config.par"))
    assert load_config(path) == config
    assert set(read_parameters(path)) == set(config_parameters(config))
