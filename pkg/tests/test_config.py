import json

import pytest

from magnetoforge.config import ConfigError, load_config, packaged_config, parse_config
from magnetoforge.material import LinearLaw
from magnetoforge.sources import GaugedLoop, Uniform

STEEL_CSV = str(packaged_config("steel_synthetic.csv"))


def base(**over):
    raw = {"mesh": {"box": {"n": 2, "inclusion": [[0, 0, 0], [0.5, 0.5, 0.5]]}},
           "materials": {"1": {"type": "linear"}, "2": {"type": "bh_csv", "path": STEEL_CSV}},
           "source": {"type": "uniform", "h0": [0, 0, 1000]}}
    raw.update(over)
    return raw


def test_minimal_config_defaults():
    cfg = parse_config(base())
    assert (cfg.formulation, cfg.p, cfg.newton.tol_rel) == ("mixed", 1, 1e-8)
    mesh = cfg.build_mesh()
    assert mesh.n_tets == 48
    laws = cfg.build_laws(mesh.regions)
    assert isinstance(laws[1], LinearLaw)
    assert isinstance(cfg.build_source(), Uniform)


@pytest.mark.parametrize("raw, fragment", [
    ({"mesh": {"box": {"n": 2}}}, "materials"),
    (base(formulation="edge"), "formulation"),
    (base(p=3), "p=3"),
    (base(extra=1), "extra"),
    (base(mesh={"box": {"n": 0}}), "mesh"),
    (base(mesh={"path": "a.msh", "box": {"n": 2}}), "mesh"),
    (base(materials={"1": {"type": "linear", "mu": -1}}), "materials"),
    (base(source={"type": "rectangle", "half_widths": [0.1]}), "source"),
    (base(newton={"tolerance": 1}), "newton"),
    (base(newton={"armijo_c": 2.0}), "newton"),
    (base(benchmark={"p": [3]}), "p=3"),
    (base(materials={"1": {"type": "bh_csv", "path": "missing.csv"}}), "not found"),
    (base(mesh={"path": "missing.msh"}), "not found"),
])
def test_schema_and_semantic_errors(raw, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(raw)


def test_unbound_region_and_mu_choice():
    cfg = parse_config(base(materials={"1": {"type": "linear"}}))
    with pytest.raises(ConfigError, match="region tag"):
        cfg.build_laws(cfg.build_mesh().regions)
    cfg = parse_config(base(materials={"1": {"type": "linear", "mu": 1e-6, "mu_r": 2}}))
    with pytest.raises(ConfigError, match="either"):
        cfg.build_laws()


def test_bad_source_geometry_is_config_error():
    src = {"type": "rectangle", "center": [0.5, 0.5, 0.5], "half_widths": [0.2, 0.2], "current": 1.0,
           "gauge": {"lo": [0.1, 0.1, 0], "hi": [0.9, 0.9, 1], "ramp": 0.1}}
    with pytest.raises(ConfigError, match="source"):
        parse_config(base(source=src)).build_source()


def test_load_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "steel.csv").write_text(open(STEEL_CSV).read())
    raw = base(materials={"1": {"type": "linear"}, "2": {"type": "bh_csv", "path": "steel.csv"}})
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw))
    cfg = load_config(path)
    assert set(cfg.build_laws(cfg.build_mesh().regions)) == {1, 2}


def test_mesh_levels_need_generated_box(tmp_path):
    from magnetoforge.mesh import generate_box, write_msh
    write_msh(generate_box(1), tmp_path / "m.msh")
    cfg = parse_config(base(mesh={"path": "m.msh"}, materials={"1": {"type": "linear"}}), tmp_path)
    assert cfg.build_mesh().n_tets == 6
    with pytest.raises(ConfigError, match="levels"):
        cfg.build_mesh(2)


@pytest.mark.parametrize("name", ["plate_in_box.json", "linear_cube.json"])
def test_packaged_configs_are_valid(name):
    cfg = load_config(packaged_config(name))
    mesh = cfg.build_mesh()
    cfg.build_laws(mesh.regions)
    src = cfg.build_source()
    if name == "plate_in_box.json":
        assert isinstance(src, GaugedLoop)
        assert len(cfg.benchmark["ampere_turns"]) == 2
        assert cfg.build_source(1e6).ampere_turns == pytest.approx(1e6)
