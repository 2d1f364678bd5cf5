"""Registration parameter files (.par): one ``key<TAB>value`` per line."""

import math
import os

from ..core._2_weight_map import WeightMapParams
from ..core._4_engine import RegistrationConfig
from ..core.exceptions import InvalidParams, MalformedFile, WriteError

# key -> (group, default, parser)
PARAMETERS = {
    "mu_r": ("Regularization", 4500.0, float),
    "delta": ("Regularization", 3000.0, float),
    "gamma": ("Regularization", 2.0, float),
    "pyramid_factors": ("Pyramid", (4, 2, 1), "int_list"),
    "iters_per_level": ("Pyramid", (150, 100, 80), "int_list"),
    "step_size": ("Optimizer", 0.25, float),
    "adam_beta1": ("Optimizer", 0.9, float),
    "adam_beta2": ("Optimizer", 0.999, float),
    "adam_eps": ("Optimizer", 1e-8, float),
    "label_sample_count": ("Sampling", 10, int),
    "seed": ("Sampling", 0, int),
    "convergence_tol": ("Convergence", 1e-6, float),
    "convergence_window": ("Convergence", 10, int),
    "mi_bins": ("Evaluation", 32, int),
}

_WEIGHT_KEYS = ("mu_r", "delta", "gamma")


def _parse_value(key, text):
    kind = PARAMETERS[key][2]
    if kind == "int_list":
        return tuple(int(v) for v in text.split(",") if v.strip())
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"{text} is not a finite number")
    if kind is int:
        if value != int(value):
            raise ValueError(f"{text} is not an integer")
        return int(value)
    return value


def _split_line(line):
    if "\t" in line:
        key, _, value = line.partition("\t")
    elif "=" in line:
        key, _, value = line.partition("=")
    else:
        return None
    return key.strip(), value.strip()


def read_parameters(path):
    """Raw ``{key: text}`` pairs of a parameter file, comments skipped."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Parameter file not found: {path}")
    params = {}
    with open(path, "r", encoding="utf-8") as f:
        for number, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            item = _split_line(line)
            if item is None or not item[0]:
                raise MalformedFile(f"{path}:{number}: expected 'key<TAB>value', got {raw.strip()!r}")
            params[item[0]] = item[1]
    return params


def validate_parameters(param_values):
    """List of (message, key) for every unknown, unparseable or inconsistent value."""
    errors = []
    values = {}
    for key, text in param_values.items():
        if key not in PARAMETERS:
            errors.append((f"Unknown parameter: {key}", key))
            continue
        try:
            values[key] = _parse_value(key, text) if isinstance(text, str) else text
        except (ValueError, OverflowError):
            errors.append((f"Invalid value for {key}: {text!r}", key))

    resolved = {key: values.get(key, info[1]) for key, info in PARAMETERS.items()}
    weight_checks = [
        (resolved["delta"] >= 0, "delta must be >= 0", "delta"),
        (resolved["mu_r"] >= resolved["delta"], "mu_r must be >= delta", "delta"),
        (resolved["gamma"] > 0, "gamma must be > 0", "gamma"),
    ]
    errors.extend((message, key) for ok, message, key in weight_checks if not ok)
    if errors:
        return errors, resolved

    try:
        RegistrationConfig(**{key: value for key, value in resolved.items() if key not in _WEIGHT_KEYS})
    except InvalidParams as e:
        errors.append((str(e), e.key))
    return errors, resolved


def config_from_parameters(param_values):
    """Build a RegistrationConfig, raising InvalidParams listing every problem."""
    errors, resolved = validate_parameters(param_values)
    if errors:
        raise InvalidParams("\n".join(message for message, _ in errors), key=errors[0][1])
    weights = WeightMapParams(*(resolved[key] for key in _WEIGHT_KEYS))
    return RegistrationConfig(
        weight_params=weights,
        **{key: value for key, value in resolved.items() if key not in _WEIGHT_KEYS},
    )


def load_config(path):
    """Load a parameter file; missing keys take their defaults, unknown keys are errors."""
    try:
        return config_from_parameters(read_parameters(path))
    except InvalidParams as e:
        raise InvalidParams(f"{path}: {e}", key=e.key) from e


def config_parameters(config):
    """Flat ``{key: value}`` view of a RegistrationConfig."""
    values = {key: getattr(config.weight_params, key) for key in _WEIGHT_KEYS}
    for key in PARAMETERS:
        if key not in _WEIGHT_KEYS:
            values[key] = getattr(config, key)
    return values


def _format_value(value):
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def save_config(config, path):
    """Write the resolved configuration as a parameter file."""
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for key, value in config_parameters(config).items():
                f.write(f"{key}\t{_format_value(value)}\n")
    except OSError as e:
        raise WriteError(f"Could not write parameter file {path}: {e}") from e
    return path
