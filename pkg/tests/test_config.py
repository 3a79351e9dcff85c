import json

import pytest

from siphvit.config import DEFAULTS, ConfigError, RunConfig, canonical_json, validate_text


def diags(text, **kw):
    with pytest.raises(ConfigError) as e:
        validate_text(text, "c.json", **kw)
    return e.value.diagnostics


def test_defaults_resolve():
    cfg = RunConfig.from_text("{}")
    assert cfg.vit.name == "tiny" and cfg.vit.image_size == (224, 224)
    assert cfg.core.adc_bits == 8 and cfg.core.noise_mode == "worst_case"
    assert cfg.mgnet is None
    assert cfg.data["model"] == DEFAULTS["model"]


def test_json_syntax_error_has_line_and_column():
    d = diags('{\n  "seed": 1,\n  "image_size": ,\n}')
    assert d[0].startswith("c.json:3:17: invalid JSON")


def test_type_error_points_at_value():
    d = diags('{\n  "core": {\n    "adc_bits": "x"\n  }\n}')
    assert len(d) == 1 and d[0].startswith("c.json:3:17: core.adc_bits:")


def test_unknown_key_lists_allowed():
    d = diags('{"core": {"q_factr": 5000}}')
    assert "unknown key 'core.q_factr'" in d[0] and "q_factor" in d[0]
    assert d[0].startswith("c.json:1:11")


def test_every_problem_reported():
    d = diags('{\n "seed": -1,\n "noise": {"mode": "loud"},\n "bogus": 1\n}')
    assert len(d) == 3
    assert {x.split(":")[1] for x in d} == {"2", "3", "4"}


def test_semantic_checks(tmp_path):
    d = diags('{"weights": "missing.npz"}', base_dir=tmp_path)
    assert "does not exist" in d[0]
    assert "needs mask.path" in diags('{"mask": {"source": "file"}}')[0]
    assert "need functional" in diags('{"functional": false, "mask": {"source": "generate"}}')[0]
    assert "preset or all of" in diags('{"model": {"d_m": 64}}')[0]
    assert "not divisible" in diags('{"image_size": 100}')[0]


def test_explicit_model_and_grid():
    cfg = RunConfig.from_dict({"model": {"d_m": 64, "heads": 2, "depth": 2, "channels": 1},
                               "image_size": [48, 32],
                               "core": {"grid": {"spacing_nm": 6.0}}})
    assert (cfg.vit.d_m, cfg.vit.heads, cfg.vit.depth, cfg.vit.image_size) == (64, 2, 2, (48, 32))
    assert cfg.core.grid.spacing == 6.0 and cfg.core.grid.n_channels == 32


def test_top_level_seed_fills_unset_seeds():
    cfg = RunConfig.from_dict({"seed": 9, "noise": {"seed": 2}})
    d = cfg.data
    assert d["weights_seed"] == 9 and d["input"]["seed"] == 9 and d["mask"]["mgnet"]["seed"] == 9
    assert d["noise"]["seed"] == 2


def test_hash_is_canonical():
    a = RunConfig.from_text('{"seed": 1, "image_size": 96}')
    b = RunConfig.from_text('{\n"image_size": 96,\n  "seed": 1}')
    assert a.hash == b.hash
    assert a.hash != RunConfig.from_text('{"seed": 2, "image_size": 96}').hash
    assert json.loads(canonical_json(a.data)) == a.data


def test_with_overrides_revalidates():
    cfg = RunConfig.from_text("{}")
    assert cfg.with_overrides(image_size=96).vit.n_patches == 36
    with pytest.raises(ConfigError):
        cfg.with_overrides(core={"adc_bits": "eight"})


def test_load_resolves_relative_paths(tmp_path):
    (tmp_path / "table.json").write_text(json.dumps({"version": "t1", "adc_per_conversion": 2e-12}))
    (tmp_path / "run.json").write_text('{"cost_table": "table.json"}')
    cfg = RunConfig.load(tmp_path / "run.json")
    assert cfg.cost_table().version == "t1"
