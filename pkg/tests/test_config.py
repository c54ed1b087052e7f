import pytest
import yaml

from dbsirads import config as cf


def test_defaults_and_presets():
    c = cf.load_config(environ={})
    assert c.experiment == "full-structure"
    assert c.replicates == 3 and c.walk["n_spins"] == 100_000
    assert c.geometry == cf.GEOMETRY_PRESETS["full-structure"]
    assert c.fit["beta"] == 1e-4
    assert c.rads_enabled


def test_profiles():
    c = cf.load_config(profile="paper", environ={})
    assert c.replicates == 10 and c.walk["n_spins"] == 1_000_000 and c.profile == "paper"
    with pytest.raises(cf.ConfigError):
        cf.load_config(profile="huge", environ={})


def test_file_env_cli_precedence(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"experiment": "fiber-only", "seed": 5, "walk": {"n_spins": 1000},
                                 "fit": {"beta": 0.01}}))
    env = {"DBSIRADS_WALK__N_SPINS": "2000", "DBSIRADS_WALK__D_IA": "1.5", "OTHER": "x"}
    c = cf.load_config(p, environ=env)
    assert c.experiment == "fiber-only" and c.seed == 5
    assert c.walk["n_spins"] == 2000 and c.walk["D_IA"] == 1.5
    assert c.fit["beta"] == 0.01 and c.fit["n1"] == 31
    assert c.rads_enabled
    c = cf.load_config(p, seed=9, output_dir=str(tmp_path / "o"), environ=env)
    assert c.seed == 9 and c.output_dir == str(tmp_path / "o")


def test_geometry_block_replaces_preset(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"experiment": "full-structure", "geometry": {"side_um": 50.0}}))
    assert cf.load_config(p, environ={}).geometry == {"side_um": 50.0}


def test_errors(tmp_path):
    with pytest.raises(cf.ConfigError, match="unknown experiment"):
        cf.load_config(overrides={"experiment": "nope"}, environ={})
    with pytest.raises(cf.ConfigError):
        cf.load_config(overrides={"replicates": 0}, environ={})
    p = tmp_path / "bad.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(cf.ConfigError):
        cf.load_config(p, environ={})


def test_dump_round_trip(tmp_path):
    c = cf.load_config(overrides={"experiment": "axonal-health", "seed": 4}, environ={})
    c.dump(tmp_path / "d.yaml")
    back = cf.load_config(tmp_path / "d.yaml", environ={})
    assert back.to_dict() | {"output_dir": None} == c.to_dict() | {"output_dir": None}
    assert "output_dir" not in yaml.safe_load((tmp_path / "d.yaml").read_text())


def test_shipped_fixtures_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.yaml"))
    assert len(files) >= 5
    for f in files:
        c = cf.load_config(f, environ={})
        assert c.experiment in cf.EXPERIMENTS
