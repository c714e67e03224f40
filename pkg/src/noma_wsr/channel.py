"""Random single-cell instances: geometry, path loss, shadowing, Rayleigh fading."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .model import Instance

PATHLOSS_MODELS = {
    # distance in km, loss in dB
    "128.1+37.6log10(d)": lambda d_km: 128.1 + 37.6 * np.log10(d_km),
}
WEIGHT_MODELS = ("uniform", "equal")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    cell_radius_m: float = 250.0
    min_distance_m: float = 35.0
    carrier_GHz: float = 2.0
    pathloss_model: str = "128.1+37.6log10(d)"
    shadowing_sigma_dB: float = 8.0
    noise_psd_dBm_per_Hz: float = -174.0
    bandwidth_Hz: float = 5e6
    N: int = 10
    P_max_W: float = 1.0
    P_max_n_W: float | None = None  # per-subcarrier cap, defaults to P_max_W
    weights: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if not self.cell_radius_m > self.min_distance_m > 0:
            raise ConfigError("need cell_radius_m > min_distance_m > 0")
        if self.shadowing_sigma_dB < 0:
            raise ConfigError("shadowing_sigma_dB must be non-negative")
        if int(self.N) < 1:
            raise ConfigError("N must be at least 1")
        if self.bandwidth_Hz <= 0 or self.P_max_W <= 0:
            raise ConfigError("bandwidth_Hz and P_max_W must be positive")
        if self.P_max_n_W is not None and self.P_max_n_W <= 0:
            raise ConfigError("P_max_n_W must be positive")
        if self.pathloss_model not in PATHLOSS_MODELS:
            raise ConfigError(f"unknown pathloss_model {self.pathloss_model!r}")
        if self.weights not in WEIGHT_MODELS:
            raise ConfigError(f"weights must be one of {WEIGHT_MODELS}")

    @property
    def W_n(self) -> float:
        return self.bandwidth_Hz / self.N

    @property
    def noise_per_subcarrier_W(self) -> float:
        return 10.0 ** ((self.noise_psd_dBm_per_Hz - 30.0) / 10.0) * self.W_n

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ChannelConfig":
        """Read a ``.json`` or ``.toml`` config file."""
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib

            with path.open("rb") as fh:
                data = tomllib.load(fh)
        else:
            data = json.loads(path.read_text())
        return cls.from_dict(data.get("channel", data))


def seeded_stream(seed: int, substream: int = 0) -> np.random.Generator:
    """PCG64 generator for substream ``substream`` of experiment ``seed``.

    Built from ``SeedSequence(seed, spawn_key=(substream,))`` so substreams
    are independent and reproducible across platforms.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(substream),))))


def path_loss_dB(d_m, model: str = "128.1+37.6log10(d)"):
    return PATHLOSS_MODELS[model](np.asarray(d_m, dtype=float) / 1000.0)


def user_distances(rng: np.random.Generator, K: int, r_min: float, r_max: float) -> np.ndarray:
    """Distances of users dropped uniformly over the annulus area."""
    u = rng.random(K)
    return np.sqrt(u * (r_max**2 - r_min**2) + r_min**2)


def generate_instance(cfg: ChannelConfig, K: int, M: int = 1, substream: int = 0) -> Instance:
    """Draw one instance.

    Draw order per substream: distances (K), shadowing (K, one per user),
    fading (K x N, unit-mean exponential), weights (K).
    """
    if K < 1:
        raise ConfigError("K must be at least 1")
    rng = seeded_stream(cfg.seed, substream)
    d = user_distances(rng, K, cfg.min_distance_m, cfg.cell_radius_m)
    shadow = rng.normal(0.0, cfg.shadowing_sigma_dB, K)
    fading = rng.exponential(1.0, (K, cfg.N))
    large_scale = 10.0 ** (-(path_loss_dB(d, cfg.pathloss_model) + shadow) / 10.0)
    gain = large_scale[:, None] * fading
    noise = np.full((K, cfg.N), cfg.noise_per_subcarrier_W)
    if cfg.weights == "uniform":
        # (0, 1]: weights must stay strictly positive
        weight = 1.0 - rng.random(K)
    else:
        weight = np.ones(K)
    cap = cfg.P_max_W if cfg.P_max_n_W is None else cfg.P_max_n_W
    return Instance(
        gain=gain,
        noise=noise,
        weight=weight,
        W_n=cfg.W_n,
        P_max=cfg.P_max_W,
        P_max_n=np.full(cfg.N, cap),
        M=min(M, K),
    )
