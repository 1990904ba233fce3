"""Run configuration: a versioned JSON document with one section per concern."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .integrator import SolverConfig
from .models import GrowthConstants, ReactionModel, build_model, fit_model
from .noise_process import CovarianceSpec, NoiseGrid, WienerPath, mix_seed
from .ou_stationary import InitMode
from .spectral_core import BasisSpec, make_basis

SCHEMA = "partdiss.config/1"
KINDS = ("simulate", "pullback", "absorb", "splitting", "ou-stats", "validate")

# kind-specific experiment fields and their defaults
EXPERIMENT_DEFAULTS = {
    "simulate": {"t0": 0.0, "t1": 10.0, "initial_radius": 1.0, "initial_seed": 0},
    "splitting": {"t0": 0.0, "t1": 10.0, "initial_radius": 1.0, "initial_seed": 0},
    "pullback": {"pullback_times": [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0], "radius": 10.0,
                 "count": 8, "sample_seed": 0, "threshold": 1e-6},
    "absorb": {"scale_ladder": [1.0, 10.0, 100.0], "t_max": 100.0, "count": 8, "sample_seed": 0,
               "saturation": True},
    "ou-stats": {"seeds": 20, "horizon": 1000.0, "stride": 16, "threshold": 0.05, "lp_power": 4.0},
    "validate": {},
}


def _strict(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be an object")
    names = {f.name for f in fields(cls)}
    extra = set(d) - names
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(extra)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"section {section!r}: {exc}") from None


@dataclass
class BasisSection:
    n: int
    N: int
    M: int
    d: float = 1.0
    padding: float = 3.0


@dataclass
class NoiseSection:
    h_noise: float
    t_min: float
    t_max: float
    seed: int
    cov1: dict
    cov2: dict
    alpha: float
    ou_init: dict = field(default_factory=lambda: {"kind": "exact_diagonal"})
    tail_modes: int = 256


@dataclass
class ModelSection:
    name: str
    parameters: dict = field(default_factory=dict)
    fit_box: float = 10.0
    fit_samples: int = 2000
    constants: dict | None = None


@dataclass
class SolverSection:
    h_step: float
    scheme: str = "etd1"
    record_every: int = 1
    norms: list = field(default_factory=lambda: ["l2", "h1"])
    lp_power: float = 4.0


@dataclass
class OutputSection:
    directory: str = "out"
    snapshots: bool = False


@dataclass
class RunConfig:
    basis: BasisSection
    noise: NoiseSection
    model: ModelSection
    solver: SolverSection
    experiment: dict
    output: OutputSection = field(default_factory=OutputSection)
    schema: str = SCHEMA

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "basis": asdict(self.basis),
            "noise": asdict(self.noise),
            "model": asdict(self.model),
            "solver": asdict(self.solver),
            "experiment": dict(self.experiment),
            "output": asdict(self.output),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def sha256(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        schema = d.get("schema")
        if schema != SCHEMA:
            raise ConfigError(f"unsupported schema {schema!r}; expected {SCHEMA!r}")
        missing = {"basis", "noise", "model", "solver", "experiment"} - set(d)
        if missing:
            raise ConfigError(f"missing sections: {sorted(missing)}")
        extra = set(d) - {"schema", "basis", "noise", "model", "solver", "experiment", "output"}
        if extra:
            raise ConfigError(f"unknown sections: {sorted(extra)}")
        cfg = cls(
            basis=_strict(BasisSection, d["basis"], "basis"),
            noise=_strict(NoiseSection, d["noise"], "noise"),
            model=_strict(ModelSection, d["model"], "model"),
            solver=_strict(SolverSection, d["solver"], "solver"),
            experiment=dict(d["experiment"]),
            output=_strict(OutputSection, d.get("output", {}), "output"),
            schema=schema,
        )
        cfg.check()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_json(text)

    # -- consistency ------------------------------------------------------
    @property
    def kind(self) -> str:
        return self.experiment.get("kind", "validate")

    def experiment_params(self, kind: str | None = None) -> dict:
        """Kind-specific fields with defaults filled in.

        Fields are taken from the experiment section only when its kind
        matches; another subcommand on the same file runs with defaults.
        """
        kind = kind or self.kind
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}")
        out = dict(EXPERIMENT_DEFAULTS[kind])
        if kind == self.kind:
            given = {k: v for k, v in self.experiment.items() if k != "kind"}
            extra = set(given) - set(out)
            if extra:
                raise ConfigError(f"unknown fields for experiment {kind!r}: {sorted(extra)}")
            out.update(given)
        return out

    def check(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        nz = self.noise
        grid = NoiseGrid(nz.h_noise, nz.t_min, nz.t_max, nz.seed)
        grid.steps(self.solver.h_step, "h_step")
        if self.solver.h_step < nz.h_noise:
            raise ConfigError("h_step must be a positive multiple of h_noise")
        self.solver_config()
        InitMode.parse(nz.ou_init)
        if not 0 < nz.alpha < 0.5:
            raise ConfigError(f"alpha must lie in (0, 1/2), got {nz.alpha}")
        p = self.experiment_params()
        if self.kind == "pullback":
            if max(p["pullback_times"]) > -nz.t_min:
                raise ConfigError("pullback times must not exceed |t_min|")
        if self.kind == "absorb":
            need = p["t_max"] * (2 if p["saturation"] else 1)
            if need > -nz.t_min:
                raise ConfigError(f"absorption needs |t_min| >= {need}")
        if self.kind in ("simulate", "splitting"):
            for key in ("t0", "t1"):
                grid.steps(p[key], key)
        if self.kind == "ou-stats" and p["horizon"] > nz.t_max:
            raise ConfigError("ou-stats horizon exceeds t_max")

    # -- builders ---------------------------------------------------------
    def build_basis(self) -> BasisSpec:
        b = self.basis
        try:
            return make_basis(b.n, b.N, b.M, b.d, b.padding)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def build_covariances(self, basis: BasisSpec):
        return (CovarianceSpec.from_dict(self.noise.cov1, basis, 1),
                CovarianceSpec.from_dict(self.noise.cov2, basis, 2))

    def build_path(self, basis: BasisSpec, member: int | None = None) -> WienerPath:
        nz = self.noise
        seed = nz.seed if member is None else mix_seed(nz.seed, member)
        cov1, cov2 = self.build_covariances(basis)
        return WienerPath(NoiseGrid(nz.h_noise, nz.t_min, nz.t_max, seed), cov1, cov2)

    def build_model(self, basis: BasisSpec) -> ReactionModel:
        ms = self.model
        m = build_model(ms.name, dict(ms.parameters))
        if ms.constants:
            try:
                m = m.with_constants(GrowthConstants(**ms.constants))
            except TypeError as exc:
                raise ConfigError(f"bad model constants: {exc}") from None
        if not m.constants.complete:
            m = fit_model(m, ms.fit_box, ms.fit_samples, basis)
        return m

    def solver_config(self, snapshots: bool | None = None) -> SolverConfig:
        s = self.solver
        return SolverConfig(s.h_step, s.scheme, s.record_every, tuple(s.norms), s.lp_power,
                            self.output.snapshots if snapshots is None else snapshots)

    def ou_mode(self) -> InitMode:
        return InitMode.parse(self.noise.ou_init)
