import math

import pytest
import yaml

from srclock import config as C
from srclock.errors import ConfigError
from srclock.presets import PRESETS, preset, preset_dict

from conftest import make_config


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_resolve(name):
    cfg = preset(name)
    assert cfg.name == name
    assert cfg.schedule.stages
    cfg.grid.check_stability(cfg.params, cfg.ensembles)


def test_preset_contents():
    f2 = preset("fig2_ten_ensembles")
    assert len(f2.ensembles) == 10
    assert sum(e.n_atoms for e in f2.ensembles) == pytest.approx(4e5)
    assert f2.ensembles[0].detuning / (2 * math.pi) == pytest.approx(750.0)
    f3 = preset("fig3_two_ensembles")
    assert [e.n_atoms for e in f3.ensembles] == [9e4, 9e4]
    assert f3.ensembles[0].detuning / (2 * math.pi) == pytest.approx(460.0)
    assert f3.schedule.stages[0].duration == pytest.approx(8.8e-3)
    opt = preset("optimized_long_pulse")
    assert opt.schedule.stages[0].duration == pytest.approx(1.1e-3)
    loss = preset("loss_injection")
    assert loss.loss_injection.steady_state() == pytest.approx(8e4)
    assert not loss.monitored


@pytest.mark.parametrize("section,key", [
    ({"physics": {"kappa3_hz": 1.0}}, "physics.kappa3_hz"),
    ({"bogus": 1}, "bogus"),
    ({"grid": {"seed": "x"}}, "grid.seed"),
    ({"physics": {"eta": 2.0}}, "physics.eta"),
    ({"atoms": {"occupied": [7.5]}}, "atoms.occupied"),
    ({"analysis": {"band_hz": [5, 1]}}, "analysis.band_hz"),
    ({"schedule": [{"kind": "emit", "duration_s": 1e-3, "omega": 2}]}, "schedule[0].omega"),
    ({"schedule": [{"kind": "wait", "duration_s": 1e-3}]}, "schedule[0].kind"),
    ({"batch": {"n_trajectories": 0}}, "batch.n_trajectories"),
    ({"sweep": {"variable": "kappa"}}, "sweep.variable"),
])
def test_errors_name_the_key(section, key):
    with pytest.raises(ConfigError) as info:
        make_config(**section)
    assert info.value.key == key


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError) as info:
        C.load(tmp_path / "nope.yaml")
    assert info.value.key == "<file>"


def test_yaml_round_trip(tmp_path):
    raw = C._merge(C.DEFAULTS, preset_dict("fig3_two_ensembles"))
    p = tmp_path / "c.yaml"
    p.write_text(C.dump(raw))
    cfg = C.load(p)
    assert cfg.content_hash() == preset("fig3_two_ensembles").content_hash()
    assert yaml.safe_load(p.read_text())["name"] == "fig3_two_ensembles"


def test_hash_tracks_content():
    a = preset("fig3_two_ensembles")
    b = a.with_overrides({"grid": {"seed": 5}})
    assert a.content_hash() != b.content_hash()
    assert b.grid.seed == 5
    assert b.with_overrides({"grid": {"seed": 0}}).content_hash() == a.content_hash()


def test_emission_window_bounds():
    cfg = preset("fig3_two_ensembles")
    assert cfg.drive_end == pytest.approx(8.8e-3)
    assert cfg.emission_start == pytest.approx(8.8e-3)


def test_drive_strength_is_scaled():
    cfg = preset("fig2_ten_ensembles")
    assert cfg.schedule.stages[0].omega_m == pytest.approx(2 * math.pi * 7.5e3)
