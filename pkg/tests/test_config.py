import dataclasses

import pytest
import hypothesis.strategies as st
from hypothesis import given, settings

from tcdiffuser.config import ConfigError, RunConfig, load_config, parse_pairs


def test_defaults_mirror_hyperparameter_table():
    c = RunConfig()
    assert (c.T_HC, c.K, c.omega, c.lr, c.batch_size, c.gamma) == (5, 200, 1.2, 2e-4, 32, 0.99)
    assert c.L == 20 and c.top_y == 1 and c.max_return_offset == 0.0


def test_text_roundtrip_defaults():
    c = RunConfig()
    assert RunConfig.from_text(c.to_text()) == c


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(["historical", "immediate", "prospective"]),
       st.floats(0.0, 10.0, allow_nan=False), st.floats(1e-6, 1.0),
       st.integers(1, 9), st.lists(st.integers(1, 8), min_size=1, max_size=4),
       st.booleans(), st.sampled_from(["tcd", "tcd|rtg-ts", "return-only"]))
def test_text_roundtrip_is_lossless(env, omega, lr, top_y, mults, clip, flags):
    c = dataclasses.replace(RunConfig(), env=env, omega=omega, lr=lr, top_y=top_y,
                            dim_mults=tuple(mults), clip_x0=clip, flags=flags)
    assert RunConfig.from_text(c.to_text()) == c


def test_unknown_and_duplicate_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_text("omgea = 1.0\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_pairs("K = 10\nK = 20\n")
    with pytest.raises(ConfigError):
        parse_pairs("just words\n")


def test_comments_and_blank_lines():
    c = RunConfig.from_text("# toy run\n\nK = 10  # fewer steps\nclip_x0 = false\n")
    assert c.K == 10 and c.clip_x0 is False


@pytest.mark.parametrize("text", ["K = ten", "clip_x0 = yes", "T_HC = 20", "K = 0",
                                  "top_y = 0", "omega = -1", "env = maze", "flags = nope",
                                  "schedule = quadratic", "condition_dropout_p = 2"])
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_load_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("env = historical\nseed = 4\n")
    c = load_config(p)
    assert (c.env, c.seed) == ("historical", 4)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_derived_configs():
    c = RunConfig.from_text("lr = 0.001\nomega = 2.0\nnoise_scale = variance\n")
    assert c.train_config().lr == 1e-3
    g = c.guidance()
    assert (g.omega, g.noise_scale) == (2.0, "variance")
