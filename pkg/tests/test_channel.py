import json

import numpy as np
import pytest
from scipy import stats

from noma_wsr.channel import ChannelConfig, ConfigError, generate_instance, path_loss_dB, seeded_stream, user_distances


def test_path_loss_at_one_km():
    assert path_loss_dB(1000.0) == pytest.approx(128.1, abs=1e-12)
    assert path_loss_dB(100.0) == pytest.approx(128.1 - 37.6, abs=1e-12)


def test_noise_per_subcarrier():
    cfg = ChannelConfig()
    assert cfg.W_n == 5e5
    assert cfg.noise_per_subcarrier_W == pytest.approx(10 ** (-20.4) * 5e5, rel=1e-12)


def test_generation_is_deterministic():
    cfg = ChannelConfig(seed=42)
    a = generate_instance(cfg, 8, 2, substream=3)
    b = generate_instance(cfg, 8, 2, substream=3)
    assert a.to_json() == b.to_json()
    c = generate_instance(cfg, 8, 2, substream=4)
    assert not np.array_equal(a.gain, c.gain)


def test_instance_defaults():
    inst = generate_instance(ChannelConfig(seed=1), 5, 3)
    assert inst.N == 10 and inst.M == 3
    assert np.all(inst.P_max_n == inst.P_max)
    assert np.all((inst.weight > 0) & (inst.weight <= 1))
    assert np.all(inst.noise == inst.noise[0, 0])
    assert generate_instance(ChannelConfig(weights="equal"), 3).weight.tolist() == [1.0, 1.0, 1.0]


def components(cfg, K, substream=0):
    """Redraw distances, shadowing and fading in the documented order."""
    rng = seeded_stream(cfg.seed, substream)
    d = user_distances(rng, K, cfg.min_distance_m, cfg.cell_radius_m)
    shadow = rng.normal(0.0, cfg.shadowing_sigma_dB, K)
    fading = rng.exponential(1.0, (K, cfg.N))
    return d, shadow, fading


def test_gain_is_built_from_documented_draws():
    cfg = ChannelConfig(seed=9, N=4)
    d, shadow, fading = components(cfg, 6)
    expected = 10 ** (-(path_loss_dB(d) + shadow) / 10)[:, None] * fading
    assert np.allclose(generate_instance(cfg, 6).gain, expected, rtol=1e-12, atol=0)


def test_fading_and_shadowing_statistics():
    cfg = ChannelConfig(seed=2, N=1)
    _, shadow, fading = components(cfg, 10**6)
    assert 0.995 <= fading.mean() <= 1.005
    assert 7.8 <= shadow.std(ddof=1) <= 8.2


def test_user_radius_is_uniform_in_area():
    r0, R = 35.0, 250.0
    d = user_distances(seeded_stream(5), 10**4, r0, R)
    assert d.min() >= r0 and d.max() <= R
    result = stats.kstest(d, lambda r: (np.clip(r, r0, R) ** 2 - r0**2) / (R**2 - r0**2))
    assert result.pvalue > 0.01


def test_substreams_are_uncorrelated():
    a = seeded_stream(7, 0).random(10**5)
    b = seeded_stream(7, 1).random(10**5)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.05
    assert np.array_equal(a, seeded_stream(7, 0).random(10**5))


def test_config_files(tmp_path):
    toml = tmp_path / "c.toml"
    toml.write_text("[channel]\nN = 4\nP_max_W = 2.0\n")
    cfg = ChannelConfig.from_file(toml)
    assert cfg.N == 4 and cfg.P_max_W == 2.0
    js = tmp_path / "c.json"
    js.write_text(json.dumps({"cell_radius_m": 500.0}))
    assert ChannelConfig.from_file(js).cell_radius_m == 500.0


def test_config_rejects_invalid_values():
    with pytest.raises(ConfigError, match="unknown"):
        ChannelConfig.from_dict({"radius": 1})
    with pytest.raises(ConfigError):
        ChannelConfig(cell_radius_m=10.0, min_distance_m=35.0)
    with pytest.raises(ConfigError):
        ChannelConfig(weights="random")
    with pytest.raises(ConfigError):
        generate_instance(ChannelConfig(), 0)
