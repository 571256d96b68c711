import copy
import json

import numpy as np
import pytest

from nhdms import config
from nhdms.cli import main, run_pipeline
from nhdms.homog import HomogenizedTensors

SMALL = {
    "geometry": {"inclusion": {"type": "sphere", "center": [0.5, 0.5, 0.5], "radius": 0.4},
                 "counts": [2, 1, 1], "eta": 4.0, "padding": 1.0},
    "materials": {"preset": "case_5_1"},
    "wave": {"omegas": [0.75]},
    "numerics": {"cell_resolution": 4, "lambdas_over_gamma": [10.0, 100.0, 1000.0]},
    "pipeline": "modified-multiscale",
}


def _cfg(**changes):
    cfg = copy.deepcopy(SMALL)
    for path, value in changes.items():
        block, key = path.split("__")
        cfg[block][key] = value
    return config.validate(cfg)


def test_unknown_key_rejected(tmp_path):
    bad = copy.deepcopy(SMALL)
    bad["numerics"]["tolerance"] = 1e-3
    with pytest.raises(config.ConfigError, match="tolerance"):
        config.validate(bad)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["solve", str(path), "--out", str(tmp_path / "o")]) == 2


def test_presets_load():
    for name in ("case_5_1", "case_5_2"):
        cfg = config.preset(name)
        assert cfg["materials"]["preset"] == name
        assert config.build_geometry(cfg).n_particles == 8
    with pytest.raises(config.ConfigError):
        config.preset("case_9")


def test_unknown_material_preset_rejected():
    bad = copy.deepcopy(SMALL)
    bad["materials"]["preset"] = "vacuum"
    with pytest.raises(config.ConfigError):
        config.validate(bad)


def test_homogenize_homogeneous_cell(tmp_path):
    # equal metal and host permeability: mu_hat is exactly the identity
    cfg = _cfg()
    cfg["pipeline"] = "homogenize"
    cfg["materials"]["overrides"] = {"eps_host": 9.5}
    status, manifest = run_pipeline(cfg, tmp_path, check=True)
    assert status == 0, manifest.get("checks")
    t = HomogenizedTensors.from_json(tmp_path / "tensors_static.json")
    assert np.allclose(t.mu_hat, np.eye(3), atol=1e-14)
    assert np.allclose(t.eps_hat, 9.5 * np.eye(3), atol=1e-12)


def test_modified_run_is_reproducible(tmp_path):
    cfg = _cfg()
    s1, m1 = run_pipeline(cfg, tmp_path / "a", check=True)
    s2, m2 = run_pipeline(cfg, tmp_path / "b", check=True)
    assert s1 == s2 == 0, m1.get("checks")
    assert m1["cache"]["modified[0.75]"]["factorizations_local"] == 1
    assert m1["cache"]["modified[0.75]"]["cache_hits"] == 1
    for m in (m1, m2):
        m.pop("timings")
    assert json.dumps(m1, sort_keys=True, default=str) == json.dumps(m2, sort_keys=True, default=str)
    on_disk = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert set(on_disk["files"]) == {p.name for p in (tmp_path / "a").iterdir()} - {"manifest.json"}
    errs = on_disk["results"]["modified[0.75]"]["errors"]
    assert set(errs) == {"err_E0", "err_E0_eta", "err_EM", "err_JM"}


def test_failing_stage_reports_partial(tmp_path):
    # the coarsening factor does not divide the resolution: the stage fails
    cfg = _cfg(numerics__coarsen=3)
    status, manifest = run_pipeline(cfg, tmp_path)
    assert status == 1
    assert manifest["status"] == "failed" and manifest["failed_stage"] == "modified[0.75]"
    assert (tmp_path / "manifest.json").is_file()


def test_cli_formats_and_preset_name(tmp_path, capsys):
    cfg = copy.deepcopy(SMALL)
    cfg["pipeline"] = "reference"
    cfg["output"] = {"formats": ["dof"]}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["solve", str(path), "--out", str(tmp_path / "o"), "--check"]) == 0
    assert "reference: ok" in capsys.readouterr().out
    names = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert names == ["manifest.json", "reference_w0.75_E.dof", "reference_w0.75_J.dof"]
