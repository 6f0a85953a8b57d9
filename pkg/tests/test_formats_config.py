import numpy as np
import pytest

from conftest import FIXTURES
from xbarsim.circuit import ParasiticParams
from xbarsim.config import RunConfig, load_config, parse_config_text
from xbarsim.errors import InputError, PlanError
from xbarsim.formats import (load_kernel, load_matrix, load_prepared, load_volumes,
                             parse_network, prepared_key, read_array, read_results,
                             save_kernel, save_matrix, save_prepared, save_volumes,
                             write_array, write_results)
from xbarsim.mapping import KernelDims
from xbarsim.network import LayerSpec, NetworkSpec, prepare_layer
from xbarsim.patterns import gen_images


# -- arrays ------------------------------------------------------------------

def test_kernel_round_trip(tmp_path, rng):
    K = rng.normal(size=(3, 2, 4, 5))
    save_kernel(tmp_path / "k.csv", K)
    np.testing.assert_array_equal(load_kernel(tmp_path / "k.csv"), K)


def test_matrix_and_volume_round_trip(tmp_path, rng):
    M, V = rng.random((4, 3)), rng.random((2, 3, 3, 2))
    save_matrix(tmp_path / "m.csv", M)
    save_volumes(tmp_path / "v.csv", V)
    np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv"), M)
    np.testing.assert_array_equal(load_volumes(tmp_path / "v.csv"), V)


@pytest.mark.parametrize("body", [
    "1,2\n3,4\n",                                   # no header
    "# xbarsim-array v1\n1,2\n3\n",                 # ragged
    "# xbarsim-array v1\n1,abc\n",                  # malformed number
    "# xbarsim-array v1\n",                         # empty
    "# xbarsim-array v1\nnan,1\n",                  # non-finite
])
def test_read_array_rejects_malformed(tmp_path, body):
    (tmp_path / "a.csv").write_text(body)
    with pytest.raises(InputError):
        read_array(tmp_path / "a.csv")


def test_read_array_missing_file(tmp_path):
    with pytest.raises(InputError):
        read_array(tmp_path / "nope.csv")


def test_kernel_shape_mismatch(tmp_path):
    write_array(tmp_path / "k.csv", np.ones((4, 2)), kind="kernel", shape="3,3,1,2")
    with pytest.raises(InputError):
        load_kernel(tmp_path / "k.csv")


# -- network files -------------------------------------------------------------

def test_parse_micro_cnn():
    shape, layers, paths = parse_network(FIXTURES / "micro_cnn" / "network.txt")
    assert shape == (8, 8, 3)
    assert [ls.kind for ls in layers] == ["conv", "relu", "maxpool", "conv", "relu", "avgpool", "fc"]
    assert layers[0].kernel == KernelDims(3, 3, 3, 16, 1, 1)
    assert layers[0].dac_bits == 8 and layers[0].amplitude == "auto"
    assert sorted(paths) == [0, 3, 6]


@pytest.mark.parametrize("text,err", [
    ("conv kernel=3x3x1x1 weights=w.csv\n", InputError),              # no input record
    ("input 4 4 1\nconv kernel=3x3x1x1\n", InputError),               # no weights
    ("input 4 4 1\nconv kernel=3x3x1x1 weights=w.csv bogus=1\n", InputError),
    ("input 4 4 1\nbn\n", PlanError),
    ("input 4 4\n", InputError),
    ("input 4 4 1\nrelu stray\n", InputError),
])
def test_parse_network_errors(tmp_path, text, err):
    (tmp_path / "n.txt").write_text(text)
    with pytest.raises(err):
        parse_network(tmp_path / "n.txt")


def test_parse_network_amplitude_and_bits(tmp_path):
    (tmp_path / "n.txt").write_text(
        "input 4 4 1\nconv kernel=3x3x1x2 weights=w.csv amplitude=0.05 dac_bits=none adc_bits=6\n")
    _, layers, paths = parse_network(tmp_path / "n.txt")
    assert layers[0].amplitude == 0.05 and layers[0].dac_bits is None and layers[0].adc_bits == 6
    assert paths[0] == tmp_path / "w.csv"


# -- prepared state ----------------------------------------------------------

def test_prepared_round_trip(tmp_path, rng):
    ls = LayerSpec("conv", "c1", KernelDims(3, 3, 2, 3))
    ns = NetworkSpec((4, 4, 2), [ls], clamp=True)
    x = gen_images(6, (4, 4, 2), 0)
    pl = prepare_layer(rng.normal(size=(3, 3, 2, 3)), ls, ns, x)
    save_prepared(tmp_path, pl, "k1")
    assert prepared_key(tmp_path, "c1") == "k1"
    assert prepared_key(tmp_path, "other") is None
    back = load_prepared(tmp_path, "c1")
    np.testing.assert_array_equal(back.pc.g_prime, pl.pc.g_prime)
    np.testing.assert_array_equal(back.pc.cal.intercept, pl.pc.cal.intercept)
    np.testing.assert_array_equal(back.matrix, pl.matrix)
    assert back.pc.spec == pl.pc.spec and back.pc.parasitics == pl.pc.parasitics
    np.testing.assert_array_equal(back.pc.evaluate(x[0, :3, :3].reshape(1, -1) / x.max(), 8, 8),
                                  pl.pc.evaluate(x[0, :3, :3].reshape(1, -1) / x.max(), 8, 8))


def test_results_round_trip(tmp_path):
    write_results(tmp_path / "r.csv", ["a", "b"], [{"a": 0.1, "b": "x"}, {"a": 1 / 3}], "abc", 7)
    meta, rows = read_results(tmp_path / "r.csv")
    assert meta == {"config_hash": "abc", "seed": "7"}
    assert float(rows[1]["a"]) == 1 / 3 and rows[1]["b"] == ""


# -- config ------------------------------------------------------------------

def test_config_defaults():
    cfg = RunConfig()
    assert cfg.parasitics() == ParasiticParams(1.0, 1.0, 1.0, 1.0, 0.0)
    d = cfg.device_model()
    assert d.g_max == pytest.approx(1 / 15e3) and d.g_min == pytest.approx(1 / 300e3)


def test_config_parsing(tmp_path):
    cfg = parse_config_text("seed = 3  # comment\nsizes = 27x16, 144x16\nbits = none\n"
                            "amplitudes = 1, 0.1\nclamp = yes\nnetwork = n.txt\n", base=tmp_path)
    assert cfg.seed == 3 and cfg.sizes == ((27, 16), (144, 16))
    assert cfg.bits is None and cfg.amplitudes == (1.0, 0.1) and cfg.clamp
    assert cfg.network == str(tmp_path / "n.txt")


@pytest.mark.parametrize("text", ["bogus = 1", "seed", "seed = x", "sigma = -1",
                                  "methods = magic", "r_on = 400000", "sparsities = 2",
                                  "clamp = maybe", "amplitudes = 0"])
def test_config_rejects(text):
    with pytest.raises(InputError):
        parse_config_text(text)


def test_config_digest_ignores_outputs():
    a, b = RunConfig(), RunConfig(out="elsewhere", prepared="p")
    assert a.digest() == b.digest()
    assert a.digest() != RunConfig(seed=1).digest()
    assert a.with_overrides(seed=None, out="x").out == "x"


def test_checked_in_configs_load():
    for path in list((FIXTURES.parent / "configs").glob("*.cfg")) + list(FIXTURES.glob("*/*.cfg")):
        load_config(path)
    with pytest.raises(InputError):
        load_config(FIXTURES / "missing.cfg")
