import numpy as np
import pytest
import tomli

from crowdmfg.config import KEYS, ParseError, ValidationError, effective_config_text, parse_config

MINIMAL_LQ = """\
# LQ benchmark
grid.L = 3.0
grid.n = 128
time.T = 1.0
time.n_t = 100
kernel.kappa = 0.0
cost.terminal = "quadratic"
cost.c_T = 1.0
cost.eps_run = 0.1
"""


def test_minimal_lq_round_trip():
    rc = parse_config(MINIMAL_LQ)
    assert rc.model.cost.terminal == "quadratic"
    assert rc.model.kernel.kappa == 0.0
    assert (rc.grid.L, rc.grid.n, rc.tgrid.n_t) == (3.0, 128, 100)
    assert rc.solve.n_particles == KEYS["solve.n_particles"][1]
    again = parse_config(effective_config_text(rc))
    assert again.values == rc.values
    assert effective_config_text(again) == effective_config_text(rc)


def test_section_syntax_is_equivalent():
    rc = parse_config('[grid]\nL = 3.0\nn = 128\n[cost]\nterminal = "quadratic"\n')
    assert rc.grid.n == 128 and rc.model.cost.terminal == "quadratic"


def test_eps_run_floor():
    with pytest.raises(ValidationError, match="eps_run must be > 0"):
        parse_config("cost.eps_run = 0\n")


def test_unknown_key_named_with_line():
    with pytest.raises(ParseError, match=r"kernel\.kapa.*line 2"):
        parse_config("grid.n = 32\nkernel.kapa = 0.5\n")


@pytest.mark.parametrize(
    "text",
    ["grid.n = 1.5\n", "solve.verify = 1\n", "cost.target = [1.0]\n", "grid.L = \"4\"\n", "grid.n = \n"],
)
def test_type_errors(text):
    with pytest.raises(ParseError):
        parse_config(text)


@pytest.mark.parametrize(
    "text",
    [
        "solve.theta = 0.0\n",
        "grid.n = 1\n",
        "time.n_t = 0\n",
        "init.kind = \"blob\"\n",
        "init.kind = \"atoms\"\n",
        "hjb.scheme = \"cubic\"\n",
        "output.every = 0\n",
        "multi.count = 2\nmulti.coupling = [[0.5, 0.1], [0.1, 0.4]]\n",
        "pop3.cost.c_T = 2.0\n",
    ],
)
def test_validation_errors(text):
    with pytest.raises(ValidationError):
        parse_config(text)


def test_population_overrides():
    rc = parse_config(
        "multi.count = 2\npop2.cost.target = [-1.0, 0.0]\npop2.init.center = [1.0, 0.0]\n"
        "multi.coupling = [[0.5, 0.2], [0.2, 0.5]]\n"
    )
    p1, p2 = rc.populations
    assert p1.model.cost.target == (0.0, 0.0)
    assert p2.model.cost.target == (-1.0, 0.0)
    assert p2.init.center == (1.0, 0.0)
    assert np.array_equal(rc.coupling, [[0.5, 0.2], [0.2, 0.5]])
    with pytest.raises(ParseError):
        parse_config("multi.count = 2\npop2.solve.theta = 0.3\n")


def test_overrides_and_refine_flag():
    rc = parse_config("hjb.refine = false\n", {"solve.seed": 7})
    assert rc.solve.seed == 7 and rc.solve.hjb.refine is False


def test_effective_text_is_valid_toml():
    text = effective_config_text(parse_config("multi.count = 2\npop1.kernel.R = 1.5\n"))
    flat = tomli.loads(text)
    assert flat["pop1"]["kernel"]["R"] == 1.5
    assert "# control.A_max = (unset)" in text
