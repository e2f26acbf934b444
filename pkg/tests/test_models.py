from pathlib import Path

import pytest
from pydantic import ValidationError

from pnp.models import DtRule, RunConfig

CONFIGS = Path(__file__).parent.parent / "configs"


def test_defaults():
    config = RunConfig.model_validate({"problem": "manufactured-1d", "N": 10})
    assert (config.method, config.k, config.beta0, config.time_order) == ("ddg", 1, 4.0, 1)
    assert config.mass == "lumped" and not config.limiter
    assert config.problem_id == "manufactured-1d"


@pytest.mark.parametrize(
    "overrides",
    [
        {"N": -1},
        {"N": 0},
        {"k": 0},
        {"beta0": -1.0},
        {"beta1": -0.5},
        {"beta1": "best-choice"},
        {"time_order": 3},
        {"method": "fv"},
        {"mass": "diagonal"},
        {"newton_tol": 0.0},
        {"unknown": 1},
    ],
)
def test_rejects_invalid_fields(overrides):
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"problem": "manufactured-1d", "N": 10, **overrides})


@pytest.mark.parametrize(("k", "expected"), [(1, 0.25), (2, 1 / 12), (3, 1 / 24)])
def test_superconvergent_beta1(k, expected):
    config = RunConfig(problem="manufactured-1d", N=4, k=k, beta1="superconvergent")
    assert config.resolved_beta1() == pytest.approx(expected)


def test_fem_has_no_beta1():
    with pytest.raises(ValidationError, match="ddg"):
        RunConfig(problem="manufactured-1d", N=4, method="fem", beta1=0.1)
    config = RunConfig(problem="manufactured-1d", N=4, method="fem", beta1="superconvergent")
    assert config.resolved_beta1() == 0.0


def test_user_problem_id():
    config = RunConfig.model_validate(
        {
            "problem": {"lower": [0], "upper": [1], "species": [{"valence": 1, "initial": "1"}]},
            "N": 4,
        }
    )
    assert config.problem_id == "user"


class TestDtRule:
    @pytest.mark.parametrize(
        "data",
        [{}, {"absolute": 0.1, "coefficient": 1.0, "power": 2}, {"coefficient": 1.0}, {"power": 2}],
    )
    def test_exactly_one_form(self, data):
        with pytest.raises(ValidationError):
            DtRule.model_validate(data)

    def test_absolute_step_reaches_t_end(self):
        n_steps, tau = DtRule(absolute=0.03).steps(h=0.1, t_end=0.1)
        assert n_steps == 4
        assert tau * n_steps == pytest.approx(0.1)

    def test_scaled_step(self):
        n_steps, tau = DtRule(coefficient=0.01, power=2).steps(h=0.5, t_end=0.01)
        assert (n_steps, tau) == (4, pytest.approx(0.0025))

    def test_exact_division_is_not_rounded_up(self):
        assert DtRule(absolute=0.1).steps(h=1.0, t_end=1.0)[0] == 10

    def test_describe(self):
        assert DtRule(absolute=0.5).describe() == "dt=0.5"
        assert DtRule(coefficient=0.01, power=3).describe() == "dt=0.01*h^3"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    config = RunConfig.model_validate_json(path.read_text())
    assert config.N > 0
