"""Scenario configuration: parsing, validation and serialization.

Configs are TOML with explicit units in field names.  Serialization is
deterministic (fixed key order, 17 significant digits) so parse ->
serialize -> parse round-trips exactly.
"""

from __future__ import annotations

import hashlib

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

from .errors import StructuralError

TARGET_DIM = 4
BIAS_DIM = 2


@dataclass(frozen=True)
class ScenarioConfig:
    n_robots: int
    n_targets: int
    edges: tuple            # undirected robot-id pairs, must form a tree
    tasks: dict             # robot id -> tuple of tracked target ids
    dt_seconds: float = 0.1
    horizon_steps: int = 100
    process_noise_intensity: float = 0.08
    r_target_m2: float = 0.05
    r_landmark_m2: float = 0.00035
    sigma_position_m: float = 10.0
    sigma_velocity_mps: float = 1.0
    sigma_bias_m: float = 1.0
    mc_runs: int = 250
    seed: int = 0
    conservative_filtering: bool = True
    with_bias: bool = True
    exchange_mode: str = "simultaneous"

    def __post_init__(self):
        object.__setattr__(self, "edges",
                           tuple(tuple(sorted(map(int, e))) for e in self.edges))
        object.__setattr__(self, "tasks",
                           {int(r): tuple(int(t) for t in ts)
                            for r, ts in self.tasks.items()})
        self.validate()

    # -- validation ----------------------------------------------------

    def validate(self):
        robots = set(range(1, self.n_robots + 1))
        if set(self.tasks) != robots:
            raise StructuralError(
                f"tasks must cover robots {sorted(robots)}, got {sorted(self.tasks)}"
            )
        tracked = set()
        for r, ts in self.tasks.items():
            if not ts:
                raise StructuralError(f"robot {r} tracks no targets")
            for t in ts:
                if not 1 <= t <= self.n_targets:
                    raise StructuralError(f"robot {r} tracks unknown target {t}")
            tracked.update(ts)
        if tracked != set(range(1, self.n_targets + 1)):
            missing = sorted(set(range(1, self.n_targets + 1)) - tracked)
            raise StructuralError(f"targets {missing} are tracked by no robot")
        # the channel-filter framework requires an undirected acyclic topology
        parent = {r: r for r in robots}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edges:
            if a not in robots or b not in robots:
                raise StructuralError(f"edge ({a},{b}) references unknown robot")
            ra, rb = find(a), find(b)
            if ra == rb:
                raise StructuralError(
                    "topology contains a cycle; the communication graph must "
                    "be undirected and a-cyclic"
                )
            parent[ra] = rb
        if self.n_robots > 1 and len(self.edges) != self.n_robots - 1:
            raise StructuralError("topology must be connected")
        if self.exchange_mode not in ("simultaneous", "sweep"):
            raise StructuralError(f"unknown exchange_mode {self.exchange_mode!r}")
        for name in ("dt_seconds", "process_noise_intensity", "r_target_m2",
                     "r_landmark_m2", "sigma_position_m", "sigma_velocity_mps"):
            if getattr(self, name) <= 0:
                raise StructuralError(f"{name} must be positive")
        if self.horizon_steps < 1 or self.mc_runs < 1:
            raise StructuralError("horizon_steps and mc_runs must be >= 1")

    # -- derived structure --------------------------------------------

    def target_subject(self, t: int) -> str:
        return f"t{t}"

    def bias_subject(self, r: int) -> str:
        return f"b{r}"

    def robot_subjects(self, r: int) -> dict:
        """subject -> (dim, dynamic) for one robot's task vector."""
        subs = {self.target_subject(t): (TARGET_DIM, True) for t in self.tasks[r]}
        if self.with_bias:
            subs[self.bias_subject(r)] = (BIAS_DIM, False)
        return subs

    def common_subjects(self, a: int, b: int) -> frozenset:
        shared = set(self.tasks[a]) & set(self.tasks[b])
        return frozenset(self.target_subject(t) for t in shared)

    def neighbors(self, r: int):
        out = []
        for a, b in self.edges:
            if a == r:
                out.append(b)
            elif b == r:
                out.append(a)
        return sorted(out)

    def robot_dim(self, r: int) -> int:
        return sum(d for d, _ in self.robot_subjects(r).values())

    def global_dim(self) -> int:
        n = self.n_targets * TARGET_DIM
        if self.with_bias:
            n += self.n_robots * BIAS_DIM
        return n

    def max_common_dim(self) -> int:
        return max(
            (sum(TARGET_DIM for _ in self.common_subjects(a, b))
             for a, b in self.edges),
            default=0,
        )

    # -- (de)serialization --------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        try:
            scn = d["scenario"]
            noise = d["noise"]
            priors = d["priors"]
            topo = d["topology"]
            tasks = d["tasks"]
        except KeyError as e:
            raise StructuralError(f"config is missing section {e.args[0]!r}") from e

        def get(sec, secname, key):
            try:
                return sec[key]
            except KeyError:
                raise StructuralError(f"config field {secname}.{key} is missing")

        return cls(
            n_robots=get(scn, "scenario", "n_robots"),
            n_targets=get(scn, "scenario", "n_targets"),
            dt_seconds=get(scn, "scenario", "dt_seconds"),
            horizon_steps=get(scn, "scenario", "horizon_steps"),
            mc_runs=get(scn, "scenario", "mc_runs"),
            seed=get(scn, "scenario", "seed"),
            conservative_filtering=get(scn, "scenario", "conservative_filtering"),
            with_bias=scn.get("with_bias", True),
            exchange_mode=scn.get("exchange_mode", "simultaneous"),
            process_noise_intensity=get(noise, "noise", "process_noise_intensity"),
            r_target_m2=get(noise, "noise", "r_target_m2"),
            r_landmark_m2=get(noise, "noise", "r_landmark_m2"),
            sigma_position_m=get(priors, "priors", "sigma_position_m"),
            sigma_velocity_mps=get(priors, "priors", "sigma_velocity_mps"),
            sigma_bias_m=get(priors, "priors", "sigma_bias_m"),
            edges=get(topo, "topology", "edges"),
            tasks=tasks,
        )

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    @classmethod
    def loads(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(tomllib.loads(text))

    def dumps(self) -> str:
        def fmt(x):
            if isinstance(x, bool):
                return "true" if x else "false"
            if isinstance(x, int):
                return str(x)
            if isinstance(x, float):
                return repr(x)  # shortest exact round-trip, TOML-valid
            raise TypeError(type(x))

        lines = ["[scenario]"]
        for key in ("n_robots", "n_targets", "dt_seconds", "horizon_steps",
                    "mc_runs", "seed", "conservative_filtering", "with_bias"):
            lines.append(f"{key} = {fmt(getattr(self, key))}")
        lines.append(f'exchange_mode = "{self.exchange_mode}"')
        lines += ["", "[noise]"]
        for key in ("process_noise_intensity", "r_target_m2", "r_landmark_m2"):
            lines.append(f"{key} = {fmt(getattr(self, key))}")
        lines += ["", "[priors]"]
        for key in ("sigma_position_m", "sigma_velocity_mps", "sigma_bias_m"):
            lines.append(f"{key} = {fmt(getattr(self, key))}")
        lines += ["", "[topology]"]
        lines.append("edges = [" + ", ".join(f"[{a}, {b}]" for a, b in self.edges) + "]")
        lines += ["", "[tasks]"]
        for r in sorted(self.tasks):
            lines.append(f'"{r}" = [' + ", ".join(str(t) for t in self.tasks[r]) + "]")
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def replace(self, **kw) -> "ScenarioConfig":
        from dataclasses import asdict
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return ScenarioConfig(**d)


def paper_scenario(**overrides) -> ScenarioConfig:
    """The 4-robot chain tracking 5 targets with per-robot sensor biases."""
    cfg = ScenarioConfig(
        n_robots=4,
        n_targets=5,
        edges=((1, 2), (2, 3), (3, 4)),
        tasks={1: (1, 2), 2: (2, 3), 3: (3, 4, 5), 4: (4, 5)},
    )
    return cfg.replace(**overrides) if overrides else cfg
