"""Experiment configuration: defaults, JSON snapshots, dotted overrides.

The config is a plain key-value tree.  Units at this boundary are human
(dBm, dB, MHz, Mbps, meters, seconds); the builders convert to SI once.
Snapshots are emitted as sorted, indented JSON so reruns diff cleanly.
"""

from __future__ import annotations

import copy
import json

from .agents import AgentConfig, VideoModel
from .mobility import ScenarioConfig
from .power_math import LinkParams


class ConfigError(ValueError):
    """Invalid or missing configuration; message names the field path."""


DEFAULTS = {
    "scenario": {
        "kind": "constant_speed",
        "bs_spacing_m": 500.0,
        "road_offsets_m": [100.0],
        "speed_init_mps": [15.0, 15.0],
        "speed_clamp_mps": [10.0, 20.0],
        "accel_std_mps2": 0.3,
        "stop_duration_s": [0.0, 60.0],
        "light_offset_m": None,
        "pathloss_a_db": 35.3,
        "pathloss_b_db_per_decade": 37.6,
        "n_bs_tracked": 2,
        "history_len": 2,
    },
    "video": {
        "n_segments": 15,
        "frames_per_segment": 10,
        "frame_s": 1.0,
        "slot_s": 1e-3,
        "mean_rate_mbps": 8.0,
        "std_rate_mbps": 0.3,
    },
    "link": {
        "bandwidth_mhz": 20.0,
        "noise_dbm": -95.0,
        "p_max_dbm": 46.0,
    },
    "agent": {
        "lr_actor": 1e-4,
        "lr_critic": 1e-3,
        "omega": 1e-3,
        "batch": 1024,
        "gamma": 1.0,
        "noise_std_init_mbps": 10.0,
        "noise_std_final_mbps": 0.0,
        "virtual_episodes": 4,
        "penalty_lambda": 30.0,
        "penalty_cap": 50.0,
        "rate_bound_mbps": 80.0,
        "replay_capacity": 1_000_000,
        "hidden_ddpg": 200,
        "hidden_pds": 100,
        "episode_cap_factor": 4.0,
    },
    "run": {
        "algo": "pds_ddpg",
        "episodes": 1000,
        "seed": 0,
        "env_mode": "fading",
        "checkpoint_every": 100,
        "eval_episodes": 1000,
    },
}

# fields that a config file must state explicitly for a reproducible run
REQUIRED = (("run", "algo"), ("run", "episodes"), ("run", "seed"))

_RANGE_CHECKS = {
    ("scenario", "bs_spacing_m"): lambda v: v > 0,
    ("scenario", "n_bs_tracked"): lambda v: isinstance(v, int) and v >= 1,
    ("scenario", "history_len"): lambda v: isinstance(v, int) and v >= 0,
    ("video", "n_segments"): lambda v: isinstance(v, int) and v >= 2,
    ("video", "frames_per_segment"): lambda v: isinstance(v, int) and v >= 1,
    ("video", "frame_s"): lambda v: v > 0,
    ("video", "slot_s"): lambda v: v > 0,
    ("video", "mean_rate_mbps"): lambda v: v > 0,
    ("link", "bandwidth_mhz"): lambda v: v > 0,
    ("agent", "batch"): lambda v: isinstance(v, int) and v >= 1,
    ("agent", "gamma"): lambda v: 0 < v <= 1,
    ("agent", "virtual_episodes"): lambda v: isinstance(v, int) and v >= 0,
    ("agent", "rate_bound_mbps"): lambda v: v > 0,
    ("run", "episodes"): lambda v: isinstance(v, int) and v >= 1,
    ("run", "seed"): lambda v: isinstance(v, int),
    ("run", "algo"): lambda v: v in ("ddpg", "pds_ddpg"),
    ("run", "env_mode"): lambda v: v in ("fading", "idealized"),
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _walk_merge(base: dict, incoming: dict, path: str, errors: list):
    for key, value in incoming.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            errors.append(f"unknown field {here!r}")
            continue
        if isinstance(base[key], dict) and isinstance(value, dict):
            _walk_merge(base[key], value, here, errors)
        else:
            base[key] = value


def load_config(path, overrides=()) -> dict:
    """Read a JSON config, overlay it on the defaults, apply overrides."""
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")

    for section, field in REQUIRED:
        if section not in user or field not in user.get(section, {}):
            raise ConfigError(f"missing required field {section}.{field}")

    cfg = default_config()
    errors = []
    _walk_merge(cfg, user, "", errors)
    if errors:
        raise ConfigError("; ".join(errors))
    cfg = apply_overrides(cfg, overrides)
    validate_config(cfg)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Dotted-path overrides, e.g. agent.batch=512; values parse as JSON
    with a plain-string fallback."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown field {dotted!r}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown field {dotted!r}")
        node[parts[-1]] = value
    return cfg


def validate_config(cfg: dict) -> None:
    errors = []
    for (section, field), check in _RANGE_CHECKS.items():
        try:
            value = cfg[section][field]
        except (KeyError, TypeError):
            errors.append(f"missing required field {section}.{field}")
            continue
        try:
            ok = check(value)
        except TypeError:
            ok = False
        if not ok:
            errors.append(f"invalid value for {section}.{field}: {value!r}")
    if errors:
        raise ConfigError("; ".join(errors))


def save_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- builders: config tree -> runtime objects (unit conversion lives here) --

def build_scenario(cfg: dict) -> ScenarioConfig:
    s = cfg["scenario"]
    return ScenarioConfig(
        scenario_kind=s["kind"],
        bs_spacing=float(s["bs_spacing_m"]),
        road_offsets=tuple(float(x) for x in s["road_offsets_m"]),
        speed_init_range=tuple(float(x) for x in s["speed_init_mps"]),
        speed_clamp=tuple(float(x) for x in s["speed_clamp_mps"]),
        accel_std=float(s["accel_std_mps2"]),
        stop_duration_range=tuple(float(x) for x in s["stop_duration_s"]),
        light_offset=(None if s["light_offset_m"] is None
                      else float(s["light_offset_m"])),
        pathloss_a=float(s["pathloss_a_db"]),
        pathloss_b=float(s["pathloss_b_db_per_decade"]),
        n_bs_tracked=int(s["n_bs_tracked"]),
        history_len=int(s["history_len"]),
        dt=float(cfg["video"]["frame_s"]),
    )


def build_video_model(cfg: dict) -> VideoModel:
    v = cfg["video"]
    return VideoModel(
        n_segments=int(v["n_segments"]),
        frames_per_segment=int(v["frames_per_segment"]),
        dt=float(v["frame_s"]),
        tau=float(v["slot_s"]),
        mean_rate=float(v["mean_rate_mbps"]) * 1e6,
        std_rate=float(v["std_rate_mbps"]) * 1e6,
    )


def build_link(cfg: dict) -> LinkParams:
    l = cfg["link"]
    return LinkParams(
        alpha=1.0,  # per-frame placeholder, replaced by the environment
        sigma2=10.0 ** (float(l["noise_dbm"]) / 10.0) / 1000.0,
        bandwidth=float(l["bandwidth_mhz"]) * 1e6,
        p_max=10.0 ** (float(l["p_max_dbm"]) / 10.0) / 1000.0,
    )


def build_agent_config(cfg: dict) -> AgentConfig:
    a = cfg["agent"]
    return AgentConfig(
        lr_actor=float(a["lr_actor"]),
        lr_critic=float(a["lr_critic"]),
        omega=float(a["omega"]),
        batch=int(a["batch"]),
        gamma=float(a["gamma"]),
        noise_std_init=float(a["noise_std_init_mbps"]),
        noise_std_final=float(a["noise_std_final_mbps"]),
        virtual_episodes=int(a["virtual_episodes"]),
        penalty_lambda=float(a["penalty_lambda"]),
        penalty_cap=float(a["penalty_cap"]),
        rate_bound=float(a["rate_bound_mbps"]) * 1e6,
        replay_capacity=int(a["replay_capacity"]),
        hidden_ddpg=int(a["hidden_ddpg"]),
        hidden_pds=int(a["hidden_pds"]),
        episode_cap_factor=float(a["episode_cap_factor"]),
    )
