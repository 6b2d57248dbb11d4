import pytest

from vbinit.config import (ARCHITECTURES, ExperimentConfig, load_config, parse_config,
                           parse_layers, with_overrides)
from vbinit.exceptions import ConfigError, ParseError
from vbinit.initializers import INITIALIZERS

FULL = """
# every supported key
data.source = toy
data.task = regression
data.n = 300
data.test_fraction = 0.2
arch.layers = dense:10,dense:5
arch.activation = tanh
init.name = iblm, lsuv
init.batch_size = 32
init.alpha = 0.1
init.noise_variance = 0.5
init.prior_precision = 2.0
init.lsuv_tol = 0.05
init.lsuv_max_iter = 4
init.n_jobs = 2
train.lr = 0.01
train.beta1 = 0.8
train.beta2 = 0.99
train.epsilon = 1e-7
train.batch_size = 16
train.n_mc = 4
train.n_mc_test = 8
train.iterations = 12
train.eval_interval = 3
train.local_reparam = false
train.anneal = yes
train.anneal_rate = 0.5
train.anneal_midpoint = 6
train.anneal_max_weight = 0.5
seeds = 3, 4
out = some/dir   # trailing comment
"""


def test_full_config():
    c = parse_config(FULL)
    assert c.n_toy == 300 and c.test_fraction == 0.2
    assert c.hidden == [10, 5] and c.activation == "tanh"
    assert c.inits == ["iblm", "lsuv"]
    assert (c.init.batch_size, c.init.alpha, c.init.noise_variance) == (32, 0.1, 0.5)
    assert (c.init.prior_precision, c.init.tol, c.init.max_iter, c.init.n_jobs) == (2.0, 0.05, 4, 2)
    t = c.train
    assert (t.lr, t.beta1, t.beta2, t.epsilon) == (0.01, 0.8, 0.99, 1e-7)
    assert (t.batch_size, t.n_mc_train, t.n_mc_test) == (16, 4, 8)
    assert (t.max_iterations, t.eval_interval, t.local_reparam) == (12, 3, False)
    assert t.anneal.enabled and t.anneal.rate == 0.5 and t.anneal.max_weight == 0.5
    assert c.seeds == [3, 4] and c.out_dir == "some/dir"


def test_defaults():
    c = parse_config("")
    assert c.source == "toy" and c.hidden == parse_layers("deep")
    assert c.train.lr == 1e-3 and c.train.batch_size == 64
    assert c.train.n_mc_train == 16 and c.train.n_mc_test == 128
    assert c.train.eval_interval == 50 and not c.train.anneal.enabled
    assert c.init.batch_size == 64


def test_all_initializers():
    assert parse_config("init.name = all").inits == list(INITIALIZERS)


def test_unknown_initializer_is_rejected_at_parse_time():
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("init.name = iblm, bogus")


@pytest.mark.parametrize("text", [
    "train.nope = 1", "train.lr = fast", "seeds = ", "data.task = ranking",
    "arch.layers = dense:abc", "arch.layers = conv:1:2", "train.batch_size = 0",
    "init.lsuv_tol = -1", "train.local_reparam = maybe",
    "data.task = classification",  # toy data is regression only
    "arch.layers = conv"])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_equals_is_a_parse_error():
    with pytest.raises(ParseError) as info:
        parse_config("data.n = 5\njust words\n")
    assert info.value.row == 2


def test_architectures():
    assert parse_layers("shallow") == [100]
    assert parse_layers("deep") == [100] * 4
    assert parse_layers("conv") == [("conv", 16, 3, 1, 1), ("conv", 32, 3, 1, 1)]
    assert set(ARCHITECTURES) == {"shallow", "deep", "conv"}
    c = parse_config("arch.layers = conv\ndata.input_shape = 1,8,8")
    assert c.input_shape == (1, 8, 8)


def test_load_and_override(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("seeds = 1,2\ntrain.iterations = 100\n", encoding="utf-8")
    c = load_config(p)
    o = with_overrides(c, seeds=[7], inits=["xavier"], iterations=0, out_dir="x")
    assert (o.seeds, o.inits, o.train.max_iterations, o.out_dir) == ([7], ["xavier"], 0, "x")
    assert c.seeds == [1, 2] and c.train.max_iterations == 100
    assert with_overrides(c) is c
    with pytest.raises(ConfigError):
        with_overrides(c, inits=["nope"])


def test_dataclass_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig(seeds=[])
    with pytest.raises(ConfigError):
        ExperimentConfig(inits=[])
