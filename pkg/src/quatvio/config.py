"""Flat dotted-key configuration with file, environment and CLI layers.

Config files are plain "key = value" lines with '#' comments. Every key
addresses one leaf of the run configuration, e.g. imu.sigma_g or
adaptive.w_thr. Environment variables use the QUATVIO_ prefix with a
double underscore standing in for the dot (QUATVIO_ADAPTIVE__W_THR).
Later layers win: defaults, then file, then environment, then explicit
command-line sets.
"""
from __future__ import annotations

import math
import os

import numpy as np

from .errors import ConfigError
from .filtering import FilterMode
from .pipeline import RunConfig

ENV_PREFIX = "QUATVIO_"

_BOUND_KEYS = ("intensity", "entropy", "blur", "pose_chi2", "culled_kf")


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"cannot parse boolean from {raw!r}")


def _parse_float(raw: str) -> float:
    try:
        val = float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse number from {raw!r}") from exc
    if not math.isfinite(val):
        raise ConfigError(f"config numbers must be finite, got {raw!r}")
    return val


def _parse_int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer from {raw!r}") from exc


def _parse_floats(raw: str, n: int) -> list[float]:
    parts = [p for p in raw.split(",") if p.strip() != ""]
    if len(parts) != n:
        raise ConfigError(f"expected {n} comma-separated numbers, got {raw!r}")
    return [_parse_float(p) for p in parts]


def _float_attr(obj_name: str, attr: str):
    def setter(cfg: RunConfig, raw: str) -> None:
        setattr(getattr(cfg, obj_name), attr, _parse_float(raw))

    def getter(cfg: RunConfig) -> str:
        return repr(float(getattr(getattr(cfg, obj_name), attr)))

    return getter, setter


def _float_top(attr: str):
    def setter(cfg: RunConfig, raw: str) -> None:
        setattr(cfg, attr, _parse_float(raw))

    def getter(cfg: RunConfig) -> str:
        return repr(float(getattr(cfg, attr)))

    return getter, setter


def _bool_top(attr: str):
    def setter(cfg: RunConfig, raw: str) -> None:
        setattr(cfg, attr, _parse_bool(raw))

    def getter(cfg: RunConfig) -> str:
        return str(bool(getattr(cfg, attr))).lower()

    return getter, setter


def _build_registry() -> dict:
    reg: dict = {}

    def add(key, getter, setter):
        reg[key] = (getter, setter)

    def set_mode(cfg, raw):
        try:
            cfg.mode = FilterMode(raw.strip())
        except ValueError as exc:
            raise ConfigError(
                f"unknown mode {raw!r}; choose from "
                f"{[m.value for m in FilterMode]}"
            ) from exc

    add("mode", lambda cfg: cfg.mode.value, set_mode)
    add(
        "seed",
        lambda cfg: str(cfg.seed),
        lambda cfg, raw: setattr(cfg, "seed", _parse_int(raw)),
    )

    for attr in ("sigma_g", "sigma_a", "sigma_wg", "sigma_wa", "tau_g", "tau_a"):
        add(f"imu.{attr}", *_float_attr("noise", attr))

    def set_g_world(cfg, raw):
        cfg.noise.g_world = np.array(_parse_floats(raw, 3))

    add(
        "imu.g_world",
        lambda cfg: ",".join(repr(float(x)) for x in cfg.noise.g_world),
        set_g_world,
    )

    def set_sigma_zupt(cfg, raw):
        cfg.meas.r_zupt = _parse_float(raw) ** 2 * np.eye(3)

    def set_sigma_vis_p(cfg, raw):
        cfg.meas.r_vis = cfg.meas.r_vis.copy()
        cfg.meas.r_vis[0:3, 0:3] = _parse_float(raw) ** 2 * np.eye(3)

    def set_sigma_vis_v(cfg, raw):
        cfg.meas.r_vis = cfg.meas.r_vis.copy()
        cfg.meas.r_vis[3:6, 3:6] = _parse_float(raw) ** 2 * np.eye(3)

    def set_sigma_acc(cfg, raw):
        if raw.strip() == "":
            cfg.meas.r_acc = None
        else:
            cfg.meas.r_acc = _parse_float(raw) ** 2 * np.eye(3)

    add(
        "meas.sigma_zupt",
        lambda cfg: repr(math.sqrt(float(cfg.meas.r_zupt[0, 0]))),
        set_sigma_zupt,
    )
    add(
        "meas.sigma_vis_p",
        lambda cfg: repr(math.sqrt(float(cfg.meas.r_vis[0, 0]))),
        set_sigma_vis_p,
    )
    add(
        "meas.sigma_vis_v",
        lambda cfg: repr(math.sqrt(float(cfg.meas.r_vis[3, 3]))),
        set_sigma_vis_v,
    )
    add(
        "meas.sigma_acc",
        lambda cfg: (
            "" if cfg.meas.r_acc is None else repr(math.sqrt(float(cfg.meas.r_acc[0, 0])))
        ),
        set_sigma_acc,
    )

    for attr in (
        "w_thr",
        "d_thr",
        "s",
        "alpha",
        "beta",
        "gamma",
        "zeta",
        "min_cov_p",
        "max_cov_p",
        "min_cov_v",
        "max_cov_v",
    ):
        add(f"adaptive.{attr}", *_float_attr("adaptive", attr))

    def bound_key(name):
        def setter(cfg, raw):
            lo, hi = _parse_floats(raw, 2)
            bounds = dict(cfg.adaptive.norm_bounds)
            bounds[name] = (lo, hi)
            cfg.adaptive.norm_bounds = bounds

        def getter(cfg):
            lo, hi = cfg.adaptive.norm_bounds[name]
            return f"{repr(float(lo))},{repr(float(hi))}"

        return getter, setter

    for name in _BOUND_KEYS:
        add(f"adaptive.bounds.{name}", *bound_key(name))

    add("adaptive.calibrate", *_bool_top("calibrate_pose_chi2"))
    add("adaptive.calibration_window_s", *_float_top("calibration_window_s"))

    for attr in ("alpha", "beta", "kappa"):
        add(f"sut.{attr}", *_float_attr("sut", attr))

    add(
        "zupt.window",
        lambda cfg: str(cfg.zupt_window),
        lambda cfg, raw: setattr(cfg, "zupt_window", _parse_int(raw)),
    )
    add("zupt.acc_std", *_float_top("zupt_acc_std"))
    add("zupt.gyro_std", *_float_top("zupt_gyro_std"))
    add("zupt.gyro_mean", *_float_top("zupt_gyro_mean"))
    add("zupt.max_speed", *_float_top("zupt_max_speed"))
    add("zupt.enable", *_bool_top("enable_zupt"))
    add("gravity.eps", *_float_top("gravity_eps"))
    add("gravity.enable", *_bool_top("enable_gravity"))
    add("filter.use_reset_jacobian", *_bool_top("use_reset_jacobian"))

    def set_p_diag(cfg, raw):
        cfg.init_p_diag = np.array(_parse_floats(raw, 15))

    add(
        "init.p_diag",
        lambda cfg: ",".join(repr(float(x)) for x in cfg.init_p_diag),
        set_p_diag,
    )

    return reg


KEY_REGISTRY = _build_registry()


def parse_config_file(path) -> dict[str, str]:
    """Read key = value pairs, keeping values as strings."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def env_overrides(environ=None) -> dict[str, str]:
    """Collect QUATVIO_-prefixed variables as config keys.

    Double underscores in the variable name become dots, and the rest is
    lowercased, so QUATVIO_ADAPTIVE__W_THR addresses adaptive.w_thr.
    """
    environ = environ if environ is not None else os.environ
    out: dict[str, str] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        out[key] = value
    return out


def parse_set_args(pairs: list[str]) -> dict[str, str]:
    """Parse repeated --set key=value arguments."""
    out: dict[str, str] = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        out[key.strip()] = value.strip()
    return out


def apply_flat(cfg: RunConfig, flat: dict[str, str]) -> RunConfig:
    """Apply dotted-key overrides in place; unknown keys are an error."""
    for key in flat:
        if key not in KEY_REGISTRY:
            known = ", ".join(sorted(KEY_REGISTRY))
            raise ConfigError(f"unknown config key {key!r}; known keys: {known}")
    for key, raw in flat.items():
        KEY_REGISTRY[key][1](cfg, raw)
    return cfg


def resolve_config(
    file_path=None,
    cli_sets: list[str] | None = None,
    environ=None,
) -> RunConfig:
    """Build a validated RunConfig from all layers in precedence order."""
    flat: dict[str, str] = {}
    if file_path:
        flat.update(parse_config_file(file_path))
    flat.update(env_overrides(environ))
    if cli_sets:
        flat.update(parse_set_args(cli_sets))
    cfg = RunConfig()
    apply_flat(cfg, flat)
    return cfg.validate()


def dump_flat(cfg: RunConfig) -> dict[str, str]:
    """Serialize the resolved config as a flat string map for manifests."""
    return {key: KEY_REGISTRY[key][0](cfg) for key in sorted(KEY_REGISTRY)}
