"""Named benchmark scenarios and their on-disk configuration format.

Each scenario is a plain dataclass that serializes to a single YAML
document (block style, fixed key order) so a run can be exported, hand
edited, and loaded back; builtin configurations round-trip bit-exactly.
Builder functions turn a config into the runtime objects: plant, cost
model, world, and controller spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from . import dynamics
from .controller import (
    ControllerSpec,
    FailureWorld,
    NominalWorld,
    SensingWorld,
    WindWorld,
)
from .costs import CostModel, RectObstacle, default_cost
from .mppi import MPPIParams
from .scp import SCPConfig
from .uncertainty import RangeSensor

__all__ = ["ScenarioConfig", "builtin_scenarios", "make_plant", "make_cost",
           "make_world", "make_spec"]

_PLANTS = ("freeflyer", "quadrotor")
_UNCERTAINTIES = ("failure", "wind", "sensing", "learning")
_CONTROLLERS = ("pmpc", "ce", "mppi")

# required keys (and validation ranges) of the per-uncertainty params block
_PARAM_KEYS = {
    "failure": ("p_fail",),
    "wind": ("alpha", "noise_var"),
    "sensing": ("cloud_std", "sigma_true", "sigma_filter", "cloud_size"),
    "learning": ("width",),
}

_OBSTACLE_KEYS = ("xmin", "xmax", "ymin", "ymax", "weight")
_MPPI_KEYS = ("iterations", "n_sequences", "sigma", "lam")
_COST_KEYS = ("q_pos", "q_other", "r_act")
_SOLVER_KEYS = ("rho_x", "max_scp_iter", "qp_eps")

_COST_DEFAULTS = {"q_pos": 1.0, "q_other": 0.1, "r_act": 1e-2}
_SOLVER_DEFAULTS = {"rho_x": 10.0, "max_scp_iter": 30, "qp_eps": 1e-6}

# far edge of the half-plane walls; everything interesting happens within
# a few tens of meters of the origin
_FAR = 100.0


@dataclass
class ScenarioConfig:
    name: str
    plant: str
    uncertainty: str
    start: tuple
    goal: tuple
    obstacles: tuple          # of (xmin, xmax, ymin, ymax, weight)
    N: int
    Nc: int
    M: int
    T: int
    controller: str = "pmpc"
    episodes: int = 50
    seed: int = 0
    params: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    mppi: dict | None = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("scenario needs a name")
        if self.plant not in _PLANTS:
            raise ValueError(f"unknown plant: {self.plant!r}")
        if self.uncertainty not in _UNCERTAINTIES:
            raise ValueError(f"unknown uncertainty: {self.uncertainty!r}")
        if self.controller not in _CONTROLLERS:
            raise ValueError(f"unknown controller: {self.controller!r}")
        self.start = tuple(float(v) for v in self.start)
        self.goal = tuple(float(v) for v in self.goal)
        if len(self.start) != 6 or len(self.goal) != 6:
            raise ValueError("start and goal must be full 6-dim states")
        self.obstacles = tuple(
            tuple(float(v) for v in ob) for ob in self.obstacles)
        for ob in self.obstacles:
            if len(ob) != 5:
                raise ValueError("obstacle needs (xmin, xmax, ymin, ymax, "
                                 "weight)")
            RectObstacle(*ob)  # range checks
        for name, lo in (("N", 1), ("Nc", 0), ("M", 1), ("T", 1),
                         ("episodes", 1), ("seed", 0)):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < lo:
                raise ValueError(f"{name} must be an integer >= {lo}")
        if self.Nc > self.N:
            raise ValueError("need Nc <= N")
        self._check_params()
        self.cost = {**_COST_DEFAULTS, **self.cost}
        if set(self.cost) != set(_COST_KEYS):
            raise ValueError(f"cost block allows only the keys {_COST_KEYS}")
        if not all(self.cost[k] > 0.0 for k in _COST_KEYS):
            raise ValueError("cost weights must be positive")
        self.solver = {**_SOLVER_DEFAULTS, **self.solver}
        if set(self.solver) != set(_SOLVER_KEYS):
            raise ValueError(
                f"solver block allows only the keys {_SOLVER_KEYS}")
        if not (self.solver["rho_x"] > 0.0 and self.solver["qp_eps"] > 0.0):
            raise ValueError("solver rho_x and qp_eps must be positive")
        cap = self.solver["max_scp_iter"]
        if not isinstance(cap, (int, np.integer)) or cap < 1:
            raise ValueError("solver max_scp_iter must be an integer >= 1")
        if self.mppi is not None:
            if set(self.mppi) != set(_MPPI_KEYS):
                raise ValueError(f"mppi block needs exactly {_MPPI_KEYS}")
            MPPIParams(N=self.N, Nc=self.Nc, **self.mppi)  # range checks

    def _check_params(self):
        required = _PARAM_KEYS[self.uncertainty]
        if set(self.params) != set(required):
            raise ValueError(
                f"{self.uncertainty} scenario needs params {required}")
        p = self.params
        if self.uncertainty == "failure" and not 0.0 <= p["p_fail"] <= 1.0:
            raise ValueError("p_fail must lie in [0, 1]")
        if self.uncertainty == "wind":
            if not abs(p["alpha"]) < 1.0:
                raise ValueError("wind alpha must satisfy |alpha| < 1")
            if not p["noise_var"] > 0.0:
                raise ValueError("wind noise_var must be positive")
        if self.uncertainty == "sensing":
            if not (p["cloud_std"] > 0 and p["sigma_filter"] > 0
                    and p["sigma_true"] >= 0):
                raise ValueError("sensing noise scales must be positive")
            if not (isinstance(p["cloud_size"], (int, np.integer))
                    and p["cloud_size"] >= 2):
                raise ValueError("cloud_size must be an integer >= 2")
        if self.uncertainty == "learning":
            if not (isinstance(p["width"], (int, np.integer))
                    and p["width"] >= 1):
                raise ValueError("width must be a positive integer")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "plant": self.plant,
            "uncertainty": self.uncertainty,
            "controller": self.controller,
            "start": list(self.start),
            "goal": list(self.goal),
            "obstacles": [dict(zip(_OBSTACLE_KEYS, ob))
                          for ob in self.obstacles],
            "N": self.N,
            "Nc": self.Nc,
            "M": self.M,
            "T": self.T,
            "episodes": self.episodes,
            "seed": self.seed,
            "params": dict(self.params),
            "cost": {k: self.cost[k] for k in _COST_KEYS},
            "solver": {k: self.solver[k] for k in _SOLVER_KEYS},
            "mppi": dict(self.mppi) if self.mppi is not None else None,
        }

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False,
                              default_flow_style=None)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ValueError("scenario config must be a mapping")
        known = {"name", "plant", "uncertainty", "controller", "start",
                 "goal", "obstacles", "N", "Nc", "M", "T", "episodes",
                 "seed", "params", "cost", "solver", "mppi"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        missing = known - set(d) - {"controller", "episodes", "seed",
                                    "params", "cost", "solver", "mppi"}
        if missing:
            raise ValueError(f"missing config keys: {sorted(missing)}")
        obstacles = d.get("obstacles") or []
        rows = []
        for ob in obstacles:
            if not isinstance(ob, dict) or set(ob) != set(_OBSTACLE_KEYS):
                raise ValueError(
                    f"each obstacle needs exactly the keys {_OBSTACLE_KEYS}")
            rows.append(tuple(ob[k] for k in _OBSTACLE_KEYS))
        kwargs = {k: d[k] for k in known & set(d)
                  if k not in ("obstacles",)}
        kwargs["obstacles"] = tuple(rows)
        for block in ("params", "cost", "solver"):
            if kwargs.get(block) is None:
                kwargs[block] = {}
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        try:
            d = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ValueError(f"malformed scenario config: {exc}") from exc
        return cls.from_dict(d)

    def override(self, **changes) -> "ScenarioConfig":
        """Copy with fields replaced (None values are ignored)."""
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes)


_FF_MPPI = {"iterations": 50, "n_sequences": 60, "sigma": 0.3, "lam": 1e-3}
_QUAD_MPPI = {"iterations": 30, "n_sequences": 100, "sigma": 0.2,
              "lam": 1e-5}

# two rectangles leaving the gap y in [10, 13] open for x > 0
_PASSAGE = (
    (0.0, _FAR, -_FAR, 10.0, 1e3),
    (0.0, _FAR, 13.0, _FAR, 1e3),
)

# free space: |y| <= 5 for x <= 20, plus the downward leg x in [10, 20];
# two outer walls at weight 1e2 and the inner corner block at 1e3
_CORRIDOR = (
    (-_FAR, _FAR, 5.0, _FAR, 1e2),
    (20.0, _FAR, -_FAR, _FAR, 1e2),
    (-_FAR, 10.0, -_FAR, -5.0, 1e3),
)

_REST = (0.0, 0.0, 0.0, 0.0)


def builtin_scenarios() -> dict:
    """The six named benchmark configurations."""
    ff_fail = ScenarioConfig(
        name="ff-failure", plant="freeflyer", uncertainty="failure",
        start=(-20.0, 0.0) + _REST, goal=(-0.5, 0.0) + _REST,
        obstacles=((0.0, _FAR, -_FAR, _FAR, 1e2),),
        N=20, Nc=7, M=16, T=40,
        params={"p_fail": 0.05}, mppi=dict(_FF_MPPI))
    quad_wind = ScenarioConfig(
        name="quad-wind", plant="quadrotor", uncertainty="wind",
        start=(-3.0, 12.0) + _REST, goal=(15.0, 10.0) + _REST,
        obstacles=_PASSAGE,
        N=20, Nc=10, M=10, T=40,
        params={"alpha": 0.9, "noise_var": 2.0}, mppi=dict(_QUAD_MPPI))
    ff_sense = ScenarioConfig(
        name="ff-sensing", plant="freeflyer", uncertainty="sensing",
        start=(0.0, 0.0) + _REST, goal=(15.0, -20.0) + _REST,
        obstacles=_CORRIDOR,
        N=20, Nc=5, M=10, T=60,
        params={"cloud_std": 3.0, "sigma_true": 3.0, "sigma_filter": 10.0,
                "cloud_size": 10},
        mppi=dict(_FF_MPPI))
    quad_sense = ScenarioConfig(
        name="quad-sensing", plant="quadrotor", uncertainty="sensing",
        start=(-3.0, 5.0) + _REST, goal=(15.0, 10.0) + _REST,
        obstacles=_PASSAGE,
        N=20, Nc=5, M=10, T=40,
        params={"cloud_std": 1.0, "sigma_true": 1.0, "sigma_filter": 1.0,
                "cloud_size": 10},
        mppi=dict(_QUAD_MPPI))
    ff_learn = ScenarioConfig(
        name="ff-learning", plant="freeflyer", uncertainty="learning",
        start=(0.0, 0.0) + _REST, goal=(15.0, -20.0) + _REST,
        obstacles=_CORRIDOR,
        N=20, Nc=10, M=10, T=60,
        episodes=10,
        params={"width": 64}, mppi=dict(_FF_MPPI))
    quad_learn = ScenarioConfig(
        name="quad-learning", plant="quadrotor", uncertainty="learning",
        start=(0.0, 0.0) + _REST, goal=(15.0, 10.0) + _REST,
        obstacles=_PASSAGE,
        N=20, Nc=1, M=10, T=50,
        episodes=10,
        params={"width": 32}, mppi=dict(_QUAD_MPPI))
    out = (ff_fail, quad_wind, ff_sense, quad_sense, ff_learn, quad_learn)
    return {cfg.name: cfg for cfg in out}


# ---------------------------------------------------------------------------
# Builders: config -> runtime objects
# ---------------------------------------------------------------------------

def make_plant(cfg: ScenarioConfig):
    return dynamics.freeflyer() if cfg.plant == "freeflyer" \
        else dynamics.quadrotor()


def make_cost(cfg: ScenarioConfig, plant=None) -> CostModel:
    plant = plant or make_plant(cfg)
    obstacles = [RectObstacle(*ob) for ob in cfg.obstacles]
    model = default_cost(np.array(cfg.goal), action_dim=plant.action_dim,
                         obstacles=obstacles)
    qp, qo, ra = (cfg.cost[k] for k in _COST_KEYS)
    model.stage.Q = np.diag([qp, qp, qo, qo, qo, qo])
    model.stage.R = ra * np.eye(plant.action_dim)
    return model


def make_world(cfg: ScenarioConfig, plant=None):
    plant = plant or make_plant(cfg)
    start = np.array(cfg.start)
    if cfg.uncertainty == "failure":
        return FailureWorld(plant=plant, x_start=start,
                            p_fail=cfg.params["p_fail"])
    if cfg.uncertainty == "wind":
        return WindWorld(plant=plant, x_start=start,
                         alpha=cfg.params["alpha"],
                         noise_var=cfg.params["noise_var"])
    if cfg.uncertainty == "sensing":
        walls = tuple(RectObstacle(*ob) for ob in cfg.obstacles)
        sensor = RangeSensor(cfg.params["sigma_true"],
                             cfg.params["sigma_filter"])
        return SensingWorld(plant=plant, x_start=start, walls=walls,
                            sensor=sensor, cloud_std=cfg.params["cloud_std"],
                            cloud_size=cfg.params["cloud_size"])
    return NominalWorld(plant=plant, x_start=start)


def make_spec(cfg: ScenarioConfig, *, controller=None, nc=None,
              particles=None, models=None, ce_model=None) -> ControllerSpec:
    """Controller spec for a scenario, with optional CLI-style overrides."""
    kind = controller if controller is not None else cfg.controller
    if kind not in _CONTROLLERS:
        raise ValueError(f"unknown controller: {kind!r}")
    M = 1 if kind == "ce" else (particles if particles is not None
                                else cfg.M)
    nc_val = cfg.Nc if nc is None else nc
    plant = make_plant(cfg)
    cost = make_cost(cfg, plant)
    scp = SCPConfig(N=cfg.N, Nc=nc_val, rho_x=cfg.solver["rho_x"],
                    max_scp_iter=cfg.solver["max_scp_iter"],
                    qp_eps_abs=cfg.solver["qp_eps"],
                    qp_eps_rel=cfg.solver["qp_eps"])
    mppi = None
    if kind == "mppi":
        if cfg.mppi is None:
            raise ValueError(f"scenario {cfg.name!r} has no mppi parameters")
        mppi = MPPIParams(N=cfg.N, Nc=scp.Nc, **cfg.mppi)
    if cfg.uncertainty == "learning":
        if kind == "ce":
            if ce_model is None:
                raise ValueError("learning scenario with a ce controller "
                                 "needs a ce_model")
        elif models is None or len(models) != M:
            raise ValueError("learning scenario needs one model per "
                             "particle")
    return ControllerSpec(
        kind=kind, M=M, scp=scp, uncertainty=cfg.uncertainty, plant=plant,
        cost=cost, p_fail=cfg.params.get("p_fail", 0.05), mppi=mppi,
        models=models, ce_model=ce_model)
