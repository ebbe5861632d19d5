"""Experiment configuration: INI text with one section per module.

Every key has a typed default; unknown sections or keys are rejected so a
typo never silently falls back to a default. ``to_ini`` writes a canonical
form whose sha256 is the config hash carried by every output file.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import MusicConfig
from .channel import ArrayConfig, ChannelConfig, NoiseModel, PilotConfig
from .charting import ChartingConfig
from .errors import ConfigError
from .raytrace import VEHICLE, TraceConfig
from .scene import ScenarioParams


@dataclass(frozen=True)
class ExperimentSection:
    seeds: tuple = (0, 1, 2, 3, 4)
    modes: tuple = ("static", "dynamic")
    n_samples: int = 2000
    supervision: tuple = (5.0, 10.0, 25.0, 35.0, 50.0)  # percent of the dataset
    validation_fraction: float = 0.5
    split: str = "trajectory"  # or "point"
    run_baselines: bool = True


@dataclass(frozen=True)
class SceneSection:
    width: float = 550.0
    depth: float = 670.0
    block_size: float = 60.0
    street_width: float = 15.0
    height_min: float = 12.0
    height_max: float = 45.0
    glass_fraction: float = 0.3
    max_setback: float = 3.0
    chamfer_min: float = 4.0
    chamfer_max: float = 12.0
    bs_height: float = 21.7
    bs_column: int = -1  # -1: middle column
    bs_rows: int = 4
    bs_cols: int = 8
    ve_rows: int = 4
    ve_cols: int = 2
    spacing: float = 0.5


@dataclass(frozen=True)
class TrafficSection:
    n_vehicles: int = 200
    n_steps: int = 60
    dt: float = 1.0


@dataclass(frozen=True)
class RaytraceSection:
    max_order: int = 2
    ground: bool = True
    vehicle_reflections: bool = False
    loss_concrete_db: float = 6.0
    loss_glass_db: float = 2.0
    loss_vehicle_db: float = 3.0


@dataclass(frozen=True)
class ChannelSection:
    bandwidth: float = 200e6
    f0: float = 28e9
    tau_max: float = 2e-6
    n_subcarriers: int = 512
    rolloff: float = 0.25
    pulse_support: int = 8
    pilot_power: float = 1.0
    pilot_symbols: int = 16
    pilot_seed: int = 0
    snr_db: float = 30.0  # at reference_distance in free space; inf = noiseless
    reference_distance: float = 100.0
    wssus: bool = False
    interferer_inr_db: float = math.nan  # nan: no interferer
    interferer_az_deg: float = 90.0
    interferer_el_deg: float = 0.0


@dataclass(frozen=True)
class FeaturesSection:
    eig_floor: float = 1e-10


@dataclass(frozen=True)
class ChartingSection:
    perplexity: float = 40.0
    momentum: float = 0.6
    learning_rate: float = 100.0
    n_iter: int = 1500
    anchor_mode: str = "hard"
    penalty_weight: float = 1e-3
    scale: float = 10.0  # meters per chart unit; 0 = anchor box diagonal
    init_std: float = 1e-2
    exaggeration: float = 12.0
    exaggeration_iters: int = 600
    dtype: str = "float64"


@dataclass(frozen=True)
class EvaluateSection:
    k: int = 0  # 0: ceil(0.01 N) over the evaluated points


@dataclass(frozen=True)
class BaselinesSection:
    cell_size: float = 4.0
    k_f: int = 3
    music_sources: int = 1
    music_az_step_deg: float = 0.5
    music_el_step_deg: float = 1.0
    music_peak_margin_db: float = 3.0


SECTIONS = {
    "experiment": ExperimentSection,
    "scene": SceneSection,
    "traffic": TrafficSection,
    "raytrace": RaytraceSection,
    "channel": ChannelSection,
    "features": FeaturesSection,
    "charting": ChartingSection,
    "evaluate": EvaluateSection,
    "baselines": BaselinesSection,
}

# sections that determine the generated dataset
DATASET_SECTIONS = ("scene", "traffic", "raytrace", "channel")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    scene: SceneSection = field(default_factory=SceneSection)
    traffic: TrafficSection = field(default_factory=TrafficSection)
    raytrace: RaytraceSection = field(default_factory=RaytraceSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    charting: ChartingSection = field(default_factory=ChartingSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    baselines: BaselinesSection = field(default_factory=BaselinesSection)

    def __post_init__(self):
        ex = self.experiment
        if ex.n_samples < 4:
            raise ConfigError("n_samples must be at least 4")
        if not ex.seeds:
            raise ConfigError("at least one seed required")
        for m in ex.modes:
            if m not in ("static", "dynamic"):
                raise ConfigError(f"unknown mode {m!r}")
        for s in ex.supervision:
            if not 0 < s < 100:
                raise ConfigError(f"supervision {s} outside (0, 100)")
        if not 0 < ex.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if ex.split not in ("trajectory", "point"):
            raise ConfigError(f"unknown split {ex.split!r}")
        if max(ex.supervision, default=0) / 100 > 1 - ex.validation_fraction + 1e-12:
            raise ConfigError("supervision exceeds the training fraction")
        # building the module configs validates their ranges
        self.scenario_params().validate()
        self.trace_config("static")
        self.channel_config()
        self.pilot_config()
        self.charting_config()
        self.music_config()
        if self.baselines.cell_size <= 0 or self.baselines.k_f < 1:
            raise ConfigError("cell_size must be positive and k_f >= 1")
        if self.evaluate.k < 0:
            raise ConfigError("evaluate.k must be >= 0")

    def replace(self, section: str, **kw) -> ExperimentConfig:
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **kw)})

    # -- module configs ----------------------------------------------------

    def bs_array(self) -> ArrayConfig:
        s = self.scene
        return ArrayConfig(s.bs_rows, s.bs_cols, s.spacing, boresight=math.pi / 2)

    def ve_array(self, heading: float = 0.0) -> ArrayConfig:
        s = self.scene
        return ArrayConfig(s.ve_rows, s.ve_cols, s.spacing, boresight=heading)

    def scenario_params(self) -> ScenarioParams:
        s = self.scene
        return ScenarioParams(
            width=s.width, depth=s.depth, block_size=s.block_size, street_width=s.street_width,
            height_range=(s.height_min, s.height_max), glass_fraction=s.glass_fraction,
            max_setback=s.max_setback, chamfer_range=(s.chamfer_min, s.chamfer_max),
            bs_height=s.bs_height, bs_column=None if s.bs_column < 0 else s.bs_column,
            bs_array=self.bs_array(),
        )

    def trace_config(self, mode: str) -> TraceConfig:
        r = self.raytrace
        return TraceConfig(
            max_order=r.max_order, f0=self.channel.f0,
            losses_db={"concrete": r.loss_concrete_db, "glass": r.loss_glass_db, VEHICLE: r.loss_vehicle_db},
            mode=mode, ground=r.ground, vehicle_reflections=r.vehicle_reflections,
        )

    def channel_config(self) -> ChannelConfig:
        c = self.channel
        return ChannelConfig(c.bandwidth, c.f0, c.tau_max, c.n_subcarriers, c.rolloff, c.pulse_support)

    def pilot_config(self) -> PilotConfig:
        c = self.channel
        return PilotConfig(c.pilot_power, c.pilot_symbols, c.pilot_seed)

    def reference_power(self) -> float:
        c = self.channel
        return (299_792_458.0 / (4 * math.pi * c.reference_distance * c.f0)) ** 2

    def noise_model(self) -> NoiseModel:
        c = self.channel
        n_rx = self.scene.bs_rows * self.scene.bs_cols
        if math.isnan(c.interferer_inr_db):
            return NoiseModel.white(n_rx, c.snr_db, self.reference_power())
        if math.isinf(c.snr_db):
            raise ConfigError("an interferer needs a finite snr_db")
        return NoiseModel.with_interferer(
            self.bs_array(), c.snr_db, self.reference_power(),
            (math.radians(c.interferer_az_deg), math.radians(c.interferer_el_deg)), c.interferer_inr_db,
        )

    def charting_config(self) -> ChartingConfig:
        c = self.charting
        return ChartingConfig(
            perplexity=c.perplexity, momentum=c.momentum, learning_rate=c.learning_rate,
            n_iter=c.n_iter, anchor_mode=c.anchor_mode, penalty_weight=c.penalty_weight,
            scale=c.scale if c.scale > 0 else None, init_std=c.init_std,
            exaggeration=c.exaggeration, exaggeration_iters=c.exaggeration_iters, dtype=c.dtype,
        )

    def music_config(self) -> MusicConfig:
        b = self.baselines
        return MusicConfig(
            n_sources=b.music_sources, az_step=math.radians(b.music_az_step_deg),
            el_step=math.radians(b.music_el_step_deg), delay_step=1.0 / self.channel.bandwidth,
            peak_margin_db=b.music_peak_margin_db,
        )

    # -- hashing -----------------------------------------------------------

    def hash(self, sections=None) -> str:
        return hashlib.sha256(to_ini(self, sections).encode()).hexdigest()

    def dataset_hash(self, seed: int, mode: str) -> str:
        ex = self.experiment
        key = (to_ini(self, DATASET_SECTIONS)
               + f"n_samples={ex.n_samples}\nvalidation_fraction={ex.validation_fraction!r}\n"
               f"split={ex.split}\nseed={seed}\nmode={mode}\n")
        return hashlib.sha256(key.encode()).hexdigest()


# -- text form ------------------------------------------------------------------


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, default, where: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            proto = default[0] if default else ""
            return tuple(_parse(t, proto, where) for t in items)
        return text
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None


def to_ini(cfg: ExperimentConfig, sections=None) -> str:
    lines = []
    for name in sections or SECTIONS:
        lines.append(f"[{name}]")
        sec = getattr(cfg, name)
        for f in dataclasses.fields(sec):
            lines.append(f"{f.name} = {_format(getattr(sec, f.name))}")
        lines.append("")
    return "\n".join(lines)


def from_ini_text(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    kwargs = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        cls = SECTIONS[name]
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in parser.items(name):
            if key not in known:
                raise ConfigError(f"{source}: unknown key {key!r} in [{name}]")
            values[key] = _parse(raw, getattr(defaults, key), f"{source} [{name}] {key}")
        kwargs[name] = cls(**values)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from None
    return from_ini_text(text, str(p))
