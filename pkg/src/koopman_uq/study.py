"""Study configuration and the pieces shared by the CLI commands."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dynamics import equilibrium_state, generate_training_set
from .errors import ConfigError
from .koopman import KoopmanModel, build_dictionary, fit_edmd
from .powergrid import Case, ReducedNetwork, bundled_case_path, kron_reduce, load_case, solve_power_flow
from .sampling import ParamDistribution, SampleSet, draw_params


@dataclass(frozen=True)
class StudyConfig:
    """Flat study settings; JSON keys match the field names."""

    case: str | None = None  # None -> bundled 39-bus case
    outage: tuple[str, ...] = ("15-16",)
    uncertain: tuple[str, ...] | None = None  # generator ids whose H is uncertain; None -> all
    dist: str = "gaussian"
    spread: float = 0.10
    sampler: str = "iid"  # evaluation / MC samples
    train_sampler: str = "lhs"
    n_t: int = 75
    n_mc: int = 10_000
    dictionary: str = "hermite2"
    horizon: float = 10.0
    dt_int: float = 0.005
    dt_snap: float = 0.01
    svd_truncation: float = 1e-10
    max_condition: float = 1e8
    seed: int = 2021
    out_dir: str = "out"
    threads: int = 1
    qoi: tuple[str, str] = ("G2", "G10")
    window: tuple[float, float] = (0.0, 5.0)
    kde_time: float = 2.0
    ks_times: tuple[float, ...] = (1.0, 2.0, 3.0, 4.0, 5.0)
    samples: str | None = None  # CSV overriding the evaluation draw

    def __post_init__(self):
        for name in ("outage", "qoi", "window", "ks_times", "uncertain"):
            val = getattr(self, name)
            if isinstance(val, list):
                object.__setattr__(self, name, tuple(val))
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise ConfigError(msg)

        if self.n_t < 2:
            bad("n_t must be >= 2")
        if self.n_mc < 1:
            bad("n_mc must be >= 1")
        if self.dist not in ("gaussian", "uniform"):
            bad(f"dist must be gaussian or uniform, got {self.dist!r}")
        for key in ("sampler", "train_sampler"):
            if getattr(self, key) not in ("lhs", "iid"):
                bad(f"{key} must be lhs or iid")
        if not 0 < self.spread < 1:
            bad("spread must lie in (0, 1)")
        if self.dictionary not in ("linear", "hermite2", "hermite2_trig"):
            bad(f"unknown dictionary {self.dictionary!r}")
        if self.horizon < 0 or self.dt_int <= 0 or self.dt_snap <= 0:
            bad("horizon must be >= 0 and time steps > 0")
        ratio = self.dt_snap / self.dt_int
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            bad("dt_snap must be an integer multiple of dt_int")
        steps = self.horizon / self.dt_snap
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1):
            bad("horizon must be an integer multiple of dt_snap")
        if not self.svd_truncation > 0:
            bad("svd_truncation must be > 0")
        if self.threads < 1:
            bad("threads must be >= 1")
        if len(self.qoi) != 2:
            bad("qoi must name two generators")
        if len(self.window) != 2 or self.window[0] > self.window[1]:
            bad("window must be [t0, t1] with t0 <= t1")
        for key in ("case", "samples"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise FileNotFoundError(f"{key} file not found: {path}")

    @property
    def k_max(self) -> int:
        return int(round(self.horizon / self.dt_snap))

    @property
    def eval_seed(self) -> int:
        """Seed of the evaluation draw shared by MC and the surrogate."""
        return self.seed + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "StudyConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path, **overrides) -> "StudyConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def replace(self, **changes) -> "StudyConfig":
        d = asdict(self)
        d.update(changes)
        return StudyConfig(**d)


@dataclass(frozen=True)
class Scenario:
    case: Case
    net: ReducedNetwork
    uncertain: tuple[int, ...]
    x0_true: np.ndarray
    nominal_m: np.ndarray
    qoi: tuple[int, int]
    param_names: tuple[str, ...] = field(default=())


def build_scenario(cfg: StudyConfig) -> Scenario:
    """Power flow on the intact network, then the post-outage reduced model."""
    case = load_case(cfg.case if cfg.case else bundled_case_path())
    pf = solve_power_flow(case)
    if not pf.converged:
        raise ConfigError(f"power flow did not converge (mismatch {pf.max_mismatch:.3e})")
    net = kron_reduce(case, pf, cfg.outage)
    ids = cfg.uncertain if cfg.uncertain is not None else [g.id for g in case.generators]
    uncertain = tuple(case.generator_index(g) for g in ids)
    x0 = equilibrium_state(net, uncertain)
    qoi = (case.generator_index(cfg.qoi[0]), case.generator_index(cfg.qoi[1]))
    names = tuple(f"H_{case.generators[i].id.lstrip('G')}" for i in uncertain)
    return Scenario(case, net, uncertain, x0[: 2 * net.n_gen], x0[2 * net.n_gen:], qoi, names)


def parameter_distribution(cfg: StudyConfig, sc: Scenario) -> ParamDistribution:
    return ParamDistribution.relative(sc.nominal_m, cfg.spread, cfg.dist, sc.param_names)


def training_samples(cfg: StudyConfig, sc: Scenario) -> SampleSet:
    return draw_params(parameter_distribution(cfg, sc), cfg.n_t, cfg.train_sampler, cfg.seed)


def evaluation_samples(cfg: StudyConfig, sc: Scenario) -> SampleSet:
    if cfg.samples:
        ss = SampleSet.from_csv(cfg.samples)
        if ss.samples.shape[1] != len(sc.uncertain):
            raise ConfigError(f"{cfg.samples}: expected {len(sc.uncertain)} parameter columns")
        return ss
    return draw_params(parameter_distribution(cfg, sc), cfg.n_mc, cfg.sampler, cfg.eval_seed)


@dataclass(frozen=True)
class TrainingResult:
    model: KoopmanModel
    samples: SampleSet
    simulation_time: float
    fit_time: float

    @property
    def training_time(self) -> float:
        return self.simulation_time + self.fit_time


def train_surrogate(cfg: StudyConfig, sc: Scenario, samples: SampleSet | None = None) -> TrainingResult:
    """Simulate the training trajectories and fit the EDMD model."""
    samples = samples if samples is not None else training_samples(cfg, sc)
    t0 = time.perf_counter()
    trajs = generate_training_set(sc.net, sc.x0_true, samples.samples, cfg.horizon, cfg.dt_int,
                                  cfg.dt_snap, sc.uncertain)
    t1 = time.perf_counter()
    d = build_dictionary(cfg.dictionary, sc.net.n_gen, len(sc.uncertain), trajs)
    model = fit_edmd(trajs, d, cfg.svd_truncation, cfg.max_condition)
    t2 = time.perf_counter()
    return TrainingResult(model, samples, t1 - t0, t2 - t1)
