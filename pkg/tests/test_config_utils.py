from pathlib import Path

import yaml
from pytest import mark, raises

from ktrates.errors import UsageError
from ktrates.lab.config_utils import (
    DEFAULT_CHECKS,
    dump_config_yaml,
    emit_config,
    load_config,
    parse_config,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASIC = """
command = bounds   # inline comment
alpha = 2.0

[operator]
name = stolz_diagonal
alpha = 2
space = l2

[ranges]
n_max = 5000
oracle_lambdas = 1.5, 0.5+1j

[checks]
include = ritt, hilbert
sweep = false
normal_s = 10, 100
"""


def test_defaults():
    config = parse_config("command = curves\n[operator]\nname = identity\n")
    assert config.ranges.n_max == 4096
    assert config.ranges.oracle_ns == [1, 2, 4, 8, 16, 32]
    assert config.checks.c == 0.5
    assert config.checks.include == DEFAULT_CHECKS
    assert config.counterexample.alpha == 3.0
    assert config.operator.build_params() == {}


def test_sections_and_operator_params():
    config = parse_config(BASIC)
    assert config.command == "bounds"
    assert config.alpha == 2.0
    assert config.operator.params == {"alpha": "2"}
    assert config.operator.build_params() == {"alpha": "2", "space": "l2"}
    assert config.ranges.oracle_lambdas == ["1.5", "0.5+1j"]
    assert config.checks.include == ["ritt", "hilbert"]
    assert config.checks.sweep is False
    assert config.checks.normal_s == [10, 100]


def test_counterexample_needs_no_operator():
    config = parse_config("command = counterexample\n[counterexample]\nalpha = 4\nn0 = 5, 50\n")
    assert config.operator is None
    assert config.counterexample.n0 == [5, 50]


@mark.parametrize("text message".split(), (
    ("alpha = 2\n", "missing required key 'command'"),
    ("command = bounds\n", "needs an [operator] section"),
    ("command = bounds\n[operator]\nspace = l2\n", "missing required key 'name'"),
    ("command = curves\ncolour = red\n", "unknown key 'colour'"),
    ("command = curves\n[operator]\nname = identity\n[ranges]\nn_maximum = 3\n", "valid keys: n_max"),
    ("command = curves\n[plots]\n", "unknown section [plots]"),
    ("command = curves\ncommand = fit\n", "duplicate key 'command'"),
    ("command = curves\njust words\n", "expected 'key = value'"),
    ("command = dance\n[operator]\nname = identity\n", "invalid config"),
    ("command = bounds\n[operator]\nname = identity\n[checks]\nc = 1.5\n", "c must lie in (0, 1)"),
    ("command = bounds\n[operator]\nname = identity\n[checks]\ninclude = ritt, vibes\n", "unknown checks"),
    ("command = curves\n[operator]\nname = identity\n[ranges]\nratio = 1\n", "ratio must exceed 1"),
    ("command = counterexample\n[counterexample]\nalpha = 2\n", "alpha must exceed 2"),
))
def test_bad_configs(text, message):
    with raises(UsageError) as e:
        parse_config(text)
    assert message in str(e.value)


def test_overrides():
    config = parse_config(BASIC, overrides={"output_dir": "elsewhere", "seed": None, "command": "curves"})
    assert config.output_dir == "elsewhere"
    assert config.command == "curves"
    assert config.seed == 0


def test_emit_round_trip():
    config = parse_config(BASIC)
    text = emit_config(config)
    assert "[checks]" in text and "sweep = false" in text
    assert parse_config(text).model_dump() == config.model_dump()


def test_yaml_config_and_dump(tmp_path):
    text = yaml.safe_dump({
        "command": "oracle",
        "operator": {"name": "custom_shift_poly", "coefficients": [0.25, 0.5, 0.25]},
        "ranges": {"oracle_ns": [1, 3], "oracle_lambdas": ["1.5"]},
    })
    config = parse_config(text, "yaml")
    assert config.operator.params == {"coefficients": "0.25, 0.5, 0.25"}
    assert config.ranges.oracle_ns == [1, 3]

    path = tmp_path / "config.yaml"
    dump_config_yaml(config, path)
    assert load_config(path).model_dump() == config.model_dump()


def test_malformed_yaml():
    with raises(UsageError):
        parse_config("command: [curves", "yaml")
    with raises(UsageError):
        parse_config("- a\n- b\n", "yaml")
    with raises(UsageError):
        parse_config("command = curves", "toml")


@mark.parametrize("path", sorted(CONFIGS.iterdir()), ids=lambda p: p.name)
def test_shipped_configs_are_valid(path):
    config = load_config(path)
    assert config.command in ("curves", "bounds", "counterexample", "fit", "oracle")
