"""Scenario files: a strict, versioned YAML tree.

Unknown keys and wrong types are rejected so a typo can never silently fall
back to a default.  Example::

    schema_version: 1
    seed: 7
    horizon: 200
    app: match-and-go
    robots: {count: 3}
    sync: {K_vote: 2}
    drops: {p: 0.05}
    world: {physics: full}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .apps import APPS
from .simworld import (
    FULL,
    KINEMATIC,
    STATIC,
    DropSchedule,
    FlowMount,
    NoiseSpec,
    PlantState,
    World,
    WorldParams,
)
from .sync import MAX_ROBOTS, SyncConfig
from .vm import Robot

SCHEMA_VERSION = 1


class ConfigInvalid(ValueError):
    pass


_NUM = (int, float)

SCHEMA: dict = {
    "schema_version": int,
    "seed": int,
    "horizon": int,
    "app": str,
    "robots": {"count": int, "poses": list},
    "sync": {"K_vote": int, "round_period": _NUM, "autonomous_threshold": int,
             "member_timeout": int, "grace_rounds": int},
    "noise": {"gyro": _NUM, "flow": _NUM, "uwb": _NUM, "accel": _NUM, "turn": _NUM},
    "drops": {"losses": list, "p": _NUM, "burst_max": int, "burst_rate": _NUM},
    "world": {"physics": str, "arena": list, "lag": _NUM, "ekf_dt": _NUM, "uwb_every": int,
              "flow_height": _NUM, "flow_alpha": _NUM, "initial_sigma": _NUM},
    "sweep": {"robots": list, "p": list, "K_vote": list},
}
REQUIRED = ("schema_version", "horizon")


def _check(tree: Any, schema: dict, where: str) -> None:
    if not isinstance(tree, dict):
        raise ConfigInvalid(f"{where or 'document'} must be a mapping")
    for key, val in tree.items():
        if key not in schema:
            raise ConfigInvalid(f"unknown key {where}{key!r}")
        want = schema[key]
        if isinstance(want, dict):
            _check(val, want, f"{where}{key}.")
        elif isinstance(val, bool) or not isinstance(val, want):
            raise ConfigInvalid(f"{where}{key} has the wrong type ({type(val).__name__})")


@dataclass
class ScenarioConfig:
    horizon: int
    seed: int = 0
    app: str = "noop"
    n: int = 3
    poses: Optional[list] = None
    sync: SyncConfig = field(default_factory=SyncConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    drops: dict = field(default_factory=dict)
    world: WorldParams = field(default_factory=WorldParams)
    sweep: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def schedule(self, seed: Optional[int] = None) -> DropSchedule:
        d = self.drops
        stochastic = d.get("p", 0) > 0 or (d.get("burst_max", 0) > 0 and d.get("burst_rate", 0) > 0)
        return DropSchedule(
            d.get("losses", ()),
            seed=(self.seed if seed is None else seed) if stochastic else None,
            p=d.get("p", 0.0), burst_max=d.get("burst_max", 0), burst_rate=d.get("burst_rate", 0.0),
        )

    def initial_poses(self) -> list[PlantState]:
        if self.poses is not None:
            return [PlantState(float(p[0]), float(p[1])) for p in self.poses]
        ax, ay = self.world.arena
        # spread on a ring inside the arena
        out = []
        for i in range(self.n):
            a = 2 * math.pi * i / self.n + 0.3
            out.append(PlantState(ax / 2 + 0.3 * ax * math.cos(a), ay / 2 + 0.3 * ay * math.sin(a)))
        return out


def parse_config(tree: Any) -> ScenarioConfig:
    _check(tree, SCHEMA, "")
    for key in REQUIRED:
        if key not in tree:
            raise ConfigInvalid(f"missing required key {key!r}")
    if tree["schema_version"] != SCHEMA_VERSION:
        raise ConfigInvalid(f"unsupported schema_version {tree['schema_version']}")
    try:
        rb = tree.get("robots", {})
        n = rb.get("count", 3)
        if not 1 <= n <= MAX_ROBOTS:
            raise ConfigInvalid(f"robot count must lie in 1..{MAX_ROBOTS}")
        poses = rb.get("poses")
        if poses is not None and (len(poses) != n or any(len(p) != 2 for p in poses)):
            raise ConfigInvalid("robots.poses needs one [x, y] pair per robot")
        sync = SyncConfig(**tree.get("sync", {}))
        seed = tree.get("seed", 0)
        noise = NoiseSpec(seed=seed, **tree.get("noise", {}))
        w = dict(tree.get("world", {}))
        mount = FlowMount(height=w.pop("flow_height", FlowMount.height),
                          alpha=w.pop("flow_alpha", FlowMount.alpha))
        if "arena" in w:
            w["arena"] = tuple(float(v) for v in w["arena"])
            if len(w["arena"]) != 2 or min(w["arena"]) <= 0:
                raise ConfigInvalid("world.arena must be two positive lengths")
        world = WorldParams(mount=mount, noise=noise, seed=seed, **w)
        if world.physics not in (STATIC, KINEMATIC, FULL):
            raise ConfigInvalid(f"unknown physics level {world.physics!r}")
        app = tree.get("app", "noop")
        if app not in APPS:
            raise ConfigInvalid(f"unknown app {app!r}; choose from {sorted(APPS)}")
        horizon = tree["horizon"]
        if horizon < 1:
            raise ConfigInvalid("horizon must be positive")
        drops = dict(tree.get("drops", {}))
        for loss in drops.get("losses", []):
            if len(loss) != 3 or not all(isinstance(v, int) for v in loss):
                raise ConfigInvalid("drops.losses entries must be [round, sender, receiver]")
        # validate eagerly
        DropSchedule(drops.get("losses", ()), seed=0, p=drops.get("p", 0.0),
                     burst_max=drops.get("burst_max", 0), burst_rate=drops.get("burst_rate", 0.0))
    except ConfigInvalid:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(str(exc)) from exc
    return ScenarioConfig(horizon=horizon, seed=seed, app=app, n=n, poses=poses, sync=sync,
                          noise=noise, drops=drops, world=world,
                          sweep=dict(tree.get("sweep", {})), raw=tree)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigInvalid(f"malformed YAML in {path}: {exc}") from exc
    return parse_config(tree)


def build_world(cfg: ScenarioConfig, schedule: Optional[DropSchedule] = None,
                sync: Optional[SyncConfig] = None, n: Optional[int] = None) -> World:
    sync = sync or cfg.sync
    n = n or cfg.n
    if n != cfg.n:
        cfg = ScenarioConfig(**{**cfg.__dict__, "n": n, "poses": None})
    robots = [Robot(i, sync, range(n)) for i in range(n)]
    for r in robots:
        r.register_app(APPS[cfg.app](r.id, sync))
    return World(robots, cfg.initial_poses(), schedule or cfg.schedule(), cfg.world)
