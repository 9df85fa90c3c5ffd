"""
Run configuration: one JSON document with a section per pipeline stage.

Every section maps onto a dataclass. Unknown keys are rejected so that a misspelled tuning knob
fails loudly, and each error names the offending key path (``merge.w``).
"""
import json
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path

from .estimate import EstimationConfig
from .reconstruct import MergeConfig
from .simulate import SimulationConfig


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is the dotted key path of the offending entry."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class OtfConfig:
    """
    :ivar k_cutoff: cutoff of the synthesized OTF in cycles/pixel
    :ivar bead_threshold: relative detection threshold for bead images
    :ivar bead_window: bead box size in pixels; 0 selects ``4 / k_cutoff`` rounded to odd
    """
    k_cutoff: float = 0.25
    bead_threshold: float = 0.3
    bead_window: int = 0

    def __post_init__(self):
        if not 0 < self.k_cutoff <= 0.5:
            raise ValueError(f"k_cutoff must lie in (0, 0.5], got {self.k_cutoff}")
        if not 0 < self.bead_threshold < 1:
            raise ValueError("bead_threshold must lie in (0, 1)")
        if self.bead_window < 0:
            raise ValueError("bead_window must be >= 0")


@dataclass
class PreprocessConfig:
    """
    :ivar bg_radius: disk radius of the background opening in pixels
    :ivar normalize: equalize frame mean and std after background removal
    """
    bg_radius: float = 10.0
    normalize: bool = True

    def __post_init__(self):
        if self.bg_radius < 1:
            raise ValueError("bg_radius must be >= 1")


@dataclass
class PsfConfig:
    """
    :ivar size: effective-PSF window (even sizes grow by one)
    :ivar rows: equations per solve; 0 selects ``7 size^2``
    :ivar repeats: number of solves averaged
    :ivar seed: RNG seed of the row selection
    :ivar downsample: ``mean`` or ``fourier`` reduction of a 2N reconstruction
    """
    size: int = 40
    rows: int = 0
    repeats: int = 100
    seed: int = 0
    downsample: str = "mean"

    def __post_init__(self):
        if self.size < 1 or self.repeats < 1 or self.rows < 0:
            raise ValueError("size and repeats must be >= 1 and rows >= 0")
        if self.downsample not in ("mean", "fourier"):
            raise ValueError("downsample must be 'mean' or 'fourier'")


@dataclass
class IoConfig:
    """
    :ivar center_crop: crop loaded images to a centered square of this size (0 disables)
    :ivar raw_range: keep stored sample values instead of mapping to [0, 1] (objects only; raw
      frames are always read as stored)
    """
    center_crop: int = 0
    raw_range: bool = False

    def __post_init__(self):
        if self.center_crop < 0:
            raise ValueError("center_crop must be >= 0")


@dataclass
class RunConfig:
    otf: OtfConfig = field(default_factory=OtfConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    estimation: EstimationConfig = field(default_factory=EstimationConfig)
    merge: MergeConfig = field(default_factory=MergeConfig)
    psf: PsfConfig = field(default_factory=PsfConfig)
    io: IoConfig = field(default_factory=IoConfig)


def _default(f):
    if f.default is not MISSING:
        return f.default
    return f.default_factory()


def _coerce(value, default, path):
    """Check ``value`` against the type of the field default and convert lists to tuples."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if isinstance(default, int) and not float(value).is_integer():
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return type(default)(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(default):
            raise ConfigError(path, f"expected a list of {len(default)} numbers, got {value!r}")
        return tuple(_coerce(v, d, f"{path}[{i}]") for i, (v, d) in enumerate(zip(value, default)))
    return value


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown key (allowed: {', '.join(sorted(known))})")
    kwargs = {}
    for name, value in data.items():
        key = f"{path}.{name}" if path else name
        default = _default(known[name])
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, key)
        else:
            kwargs[name] = _coerce(value, default, key)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        # pin the failure on the first key that fails on its own
        for name, value in kwargs.items():
            try:
                cls(**{name: value})
            except (ValueError, TypeError) as single:
                raise ConfigError(f"{path}.{name}" if path else name, str(single)) from exc
        raise ConfigError(path, str(exc)) from exc


def config_from_dict(data):
    """Typed :class:`RunConfig` from a parsed JSON object; missing keys take their defaults."""
    return _build(RunConfig, data, "")


def load_config(path):
    """
    Read and validate a JSON configuration file.

    :raises ConfigError: on malformed JSON, unknown keys, wrong types or out-of-range values
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg):
    """JSON-ready dict that :func:`config_from_dict` maps back to an equal config."""
    return _plain(asdict(cfg))
