"""Flat sectioned key/value configuration shared by every CLI command.

The file format is INI (``[section]`` then ``key = value``).  Every key has a
typed default equal to the corresponding module constant; unknown sections or
keys are rejected, and values are validated by building the module objects.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .density import DensityParams
from .extract import ExtractionConfig
from .optimize import LossWeights, TrainConfig
from .sampling import SamplingConfig


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    type: type
    default: object
    help: str
    full: object = None  # full-scale value, when it differs from the desk default


def _opt_float(text):
    return None if str(text).strip().lower() in ("", "none") else float(text)


def _fractions(text):
    text = str(text).strip().lower()
    if text in ("", "none"):
        return ()
    return tuple(float(v) for v in text.split(","))


SCHEMA = (
    Key("density", "s", float, 1000.0,
        "sharpness used when rendering or extracting analytic fields"),
    Key("density", "c", float, 5.0, "opacity constant of the modified density"),
    Key("density", "beta", float, 100.0, "softplus sharpness applied to raw UDF values"),

    Key("sampling", "n0", int, 64, "uniform samples per ray"),
    Key("sampling", "per_iter", int, 16, "importance samples added per pass", full=112),
    Key("sampling", "k", int, 4, "importance passes"),
    Key("sampling", "ahs", bool, True, "adaptive hierarchical sampling (sharpness tracks s)"),

    Key("train", "iterations", int, 20000, "optimization steps", full=300000),
    Key("train", "batch_rays", int, 512, "rays per step"),
    Key("train", "lr", float, 5e-4, "Adam learning rate (fallback for every parameter group)"),
    Key("train", "lr_udf", _opt_float, 5e-3,
        "learning rate of the UDF grid at the starting resolution (none: use lr)"),
    Key("train", "lr_color", _opt_float, None, "learning rate of the color grid (none: use lr)"),
    Key("train", "lr_s", _opt_float, 5e-3, "learning rate of log s (none: use lr)"),
    Key("train", "resolution", int, 64, "grid nodes per axis"),
    Key("train", "upsample_at", _fractions, (0.1, 0.25),
        "run fractions at which the grid doubles up to resolution (none: fixed)"),
    Key("train", "init_distance", float, 0.3, "initial UDF value at every node"),
    Key("train", "s_init", float, 30.0, "initial sharpness"),
    Key("train", "eik_points", int, 1024, "random points for the eikonal term per step"),
    Key("train", "lambda1", float, 0.1, "eikonal weight"),
    Key("train", "lambda2", float, 0.01, "near-zero regularizer weight"),
    Key("train", "lambda3", float, 0.001, "1/s penalty weight"),
    Key("train", "tau", float, 5.0, "decay of the near-zero regularizer"),
    Key("train", "s_penalty", bool, True, "include the 1/s penalty"),
    Key("train", "roi_radius", float, 1.0, "radius of the region of interest"),
    Key("train", "log_every", int, 500, "iterations between progress lines"),

    Key("extract", "pixel_stride", int, 5, "cast one ray every this many pixels"),
    Key("extract", "fg_threshold", float, 0.5, "foreground if in-ROI weight exceeds this"),
    Key("extract", "roi_radius", float, 1.0, "radius of the region of interest"),
    Key("extract", "n0", int, 64, "uniform samples per extraction ray"),
    Key("extract", "per_iter", int, 48, "importance samples per pass at extraction"),
    Key("extract", "k", int, 4, "importance passes at extraction"),

    Key("scene", "texture", str, "textureless", "textureless or texture-rich"),
    Key("scene", "n_views", int, 36, "number of cameras", full=72),
    Key("scene", "image_size", int, 64, "image width and height in pixels", full=1024),
    Key("scene", "camera_radius", float, 3.0, "orbit radius of the cameras"),
    Key("scene", "reference_s", float, 2000.0, "sharpness of the reference renders"),
    Key("scene", "gt_points", int, 100000, "points in the ground-truth cloud"),
)

SECTIONS = ("density", "sampling", "train", "extract", "scene")
_INDEX = {(k.section, k.name): k for k in SCHEMA}


def _parse(key: Key, text):
    if key.type is bool:
        low = str(text).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"[{key.section}] {key.name}: expected a boolean, got {text!r}")
    try:
        return key.type(text)
    except (TypeError, ValueError):
        raise ValueError(f"[{key.section}] {key.name}: cannot parse {text!r}") from None


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value) or "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


class Config:
    """Typed values for every schema key, defaulting to the module constants."""

    def __init__(self, values=None):
        self.values = {(k.section, k.name): k.default for k in SCHEMA}
        for (section, name), val in (values or {}).items():
            self.set(section, name, val)
        self.validate()

    def get(self, section, name):
        return self.values[(section, name)]

    def set(self, section, name, value):
        key = _INDEX.get((section, name))
        if key is None:
            raise KeyError(f"unknown config key [{section}] {name}")
        self.values[(section, name)] = _parse(key, value) if isinstance(value, str) else value

    # builders -----------------------------------------------------------------
    def density_params(self, s=None) -> DensityParams:
        return DensityParams(s=self.get("density", "s") if s is None else s,
                             c=self.get("density", "c"), beta=self.get("density", "beta"))

    def sampling_config(self) -> SamplingConfig:
        g = lambda n: self.get("sampling", n)  # noqa: E731
        return SamplingConfig(n0=g("n0"), per_iter=g("per_iter"), k=g("k"), ahs=g("ahs"))

    def train_config(self, seed=0) -> TrainConfig:
        g = lambda n: self.get("train", n)  # noqa: E731
        weights = LossWeights(lambda1=g("lambda1"), lambda2=g("lambda2"), lambda3=g("lambda3"),
                              tau=g("tau"), use_s_penalty=g("s_penalty"))
        return TrainConfig(
            iterations=g("iterations"), batch_rays=g("batch_rays"), lr=g("lr"),
            lr_udf=g("lr_udf"), lr_color=g("lr_color"), lr_s=g("lr_s"),
            resolution=g("resolution"), upsample_at=g("upsample_at"), init_distance=g("init_distance"), s_init=g("s_init"),
            eik_points=g("eik_points"), sampling=self.sampling_config(), weights=weights,
            roi_radius=g("roi_radius"), seed=seed, log_every=g("log_every"))

    def extraction_config(self, seed=0) -> ExtractionConfig:
        g = lambda n: self.get("extract", n)  # noqa: E731
        return ExtractionConfig(
            pixel_stride=g("pixel_stride"), fg_threshold=g("fg_threshold"),
            roi_radius=g("roi_radius"),
            sampling=SamplingConfig(n0=g("n0"), per_iter=g("per_iter"), k=g("k"), ahs=True),
            seed=seed)

    def validate(self):
        """Raise ValueError if any value violates a module invariant."""
        self.density_params()
        self.train_config()
        self.extraction_config()
        for name in ("iterations", "batch_rays", "resolution", "eik_points", "log_every"):
            if self.get("train", name) < (2 if name == "resolution" else 1):
                raise ValueError(f"[train] {name} is too small")
        for name in ("lr", "lr_udf", "lr_color", "lr_s"):
            v = self.get("train", name)
            if v is not None and not v > 0:
                raise ValueError(f"[train] {name} must be positive")
        if self.get("scene", "texture") not in ("textureless", "texture-rich"):
            raise ValueError("[scene] texture must be textureless or texture-rich")
        for name in ("n_views", "image_size", "gt_points"):
            if self.get("scene", name) < 1:
                raise ValueError(f"[scene] {name} must be positive")
        if not self.get("scene", "camera_radius") > 1.0:
            raise ValueError("[scene] camera_radius must exceed the unit sphere")

    # text round-trip ----------------------------------------------------------
    def dumps(self) -> str:
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            for k in SCHEMA:
                if k.section == section:
                    lines.append(f"{k.name} = {_format(self.get(section, k.name))}")
            lines.append("")
        return "\n".join(lines)

    def dump(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text) -> "Config":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        parser.read_string(text)
        values = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise KeyError(f"unknown config section [{section}]")
            for name, raw in parser.items(section):
                if (section, name) not in _INDEX:
                    raise KeyError(f"unknown config key [{section}] {name}")
                values[(section, name)] = raw
        return cls(values)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as fh:
            return cls.loads(fh.read())

    def __eq__(self, other):
        return isinstance(other, Config) and self.values == other.values


def full_scale() -> Config:
    """The full-scale settings; available on request, never the default."""
    cfg = Config()
    for k in SCHEMA:
        if k.full is not None:
            cfg.set(k.section, k.name, k.full)
    cfg.validate()
    return cfg


def describe_keys() -> str:
    """One line per key with its default (and full-scale value where different)."""
    out = []
    for k in SCHEMA:
        extra = f", full scale {_format(k.full)}" if k.full is not None else ""
        out.append(f"  [{k.section}] {k.name} = {_format(k.default)}  ({k.help}{extra})")
    return "\n".join(out)
