"""Flat key/value experiment configuration.

The config file format is plain text, one ``key = value`` pair per line,
``#`` comments, and dotted keys for grouping. Physical quantities carry an
explicit unit suffix and are converted to SI on load::

    geometry.inverse_lambda1 = 1.2 um^-1
    geometry.focal_length    = 10 cm
    geometry.pupil_area      = 25 cm^2
    object.max_photon_density = 1e7 cm^-2

Recognized keys (defaults in parentheses):

=========================== =================================================
geometry.inverse_lambda1    inverse wavelength of arm 1 (1.2 um^-1)
geometry.inverse_lambda2    inverse wavelength of arm 2 (0.8 um^-1)
geometry.inverse_lambda3    inverse wavelength of arm 3 (3.2 um^-1)
geometry.focal_length       lens focal length (10 cm)
geometry.pupil_area         aperture area S_a (25 cm^2)
geometry.pixel_area         object pixel area S_p (100 um^2)
crystal.epsilon             coupling ratio gamma/beta in (0,1) (0.4)
crystal.beta_z              dimensionless interaction length beta·z (1.0)
crystal.beta                down-conversion coupling scale (1 cm^-1)
object.phantom              builtin phantom name (two_slits)
object.path                 PGM file path; overrides object.phantom
object.height/object.width  image dims (64, 64)
object.slit_width           two_slits option (height/8)
object.separation           two_slits option (height/8)
object.block_size           checkerboard option (2)
object.photons_per_pixel    input photons per fully transparent pixel
object.max_photon_density   alternative: photon density; n = density·S_p
                            (1e7 cm^-2; exclusive with photons_per_pixel)
sensors.psf_width           sensor window side in pixels (3)
sensors.stride              sensor grid pitch (1)
sensors.offset              sensor grid offset (0)
sensors.response            sensor gain (1.0)
sensors.armK.*              per-arm overrides of the four fields, K in 1..3
arms                        comma list of measured arms (1,2,3)
noise.extra                 extra device-noise variance, scalar or per-arm (0)
noise.scale                 noise amplitude multiplier; 0 disables noise (1.0)
reduction.tau               threshold multiplier(s), comma list (0.0)
reduction.transform         identity | haar | dct (haar)
reduction.pinv_tolerance    relative pseudoinverse cutoff (1e-10)
reduction.fixed_point_tol   refinement stop tolerance (1e-10)
reduction.max_fixed_point_iters  (500)
reduction.qp_tol            projection KKT tolerance (1e-8)
reduction.qp_max_iters      (20000)
seeds.count                 number of Monte Carlo seeds (100)
seeds.base                  base seed (1234)
output.dir                  output directory (out)
output.save_images          write per-seed PGM images (false)
axial_approximation         evaluate optics at the axis only (false)
single_arm                  auto or 1/2/3: arm for the single-arm pipeline
=========================== =================================================
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParameterError
from .measurement import SensorModel
from .optics import CrystalParams, OpticalGeometry
from .reduction import ReductionConfig

_LENGTH_SCALE = {"nm": 1e-9, "um": 1e-6, "mm": 1e-3, "cm": 1e-2, "m": 1.0}
_UNIT_RE = re.compile(r"^([a-z]+)(?:\^(-?\d+))?$")
_NUMBER_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def parse_quantity(text: str) -> float:
    """Parse ``"<number> [unit]"`` into an SI float.

    Units are a length unit (nm/um/mm/cm/m) with an optional integer power,
    e.g. ``um^-1``, ``cm^2``. Bare numbers are returned unchanged.
    """
    parts = text.strip().split()
    if not parts or len(parts) > 2:
        raise ParameterError(f"cannot parse quantity {text!r}")
    if not _NUMBER_RE.match(parts[0]):
        raise ParameterError(f"cannot parse number in {text!r}")
    value = float(parts[0])
    if len(parts) == 1:
        return value
    m = _UNIT_RE.match(parts[1])
    if not m or m.group(1) not in _LENGTH_SCALE:
        raise ParameterError(f"unknown unit {parts[1]!r} in {text!r}")
    power = int(m.group(2)) if m.group(2) else 1
    return value * _LENGTH_SCALE[m.group(1)] ** power


def parse_config_text(text: str) -> dict[str, str]:
    """Parse the flat key/value format into an ordered mapping of strings."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().lower()
        value = value.strip()
        if not key or not value:
            raise ParameterError(f"line {lineno}: empty key or value in {raw!r}")
        if key in entries:
            raise ParameterError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = value
    return entries


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    raise ParameterError(f"{key}: expected true or false, got {value!r}")


def _parse_float_list(value: str, key: str) -> tuple[float, ...]:
    try:
        return tuple(float(v.strip()) for v in value.split(","))
    except ValueError as exc:
        raise ParameterError(f"{key}: cannot parse list {value!r}") from exc


def _parse_int_list(value: str, key: str) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip()) for v in value.split(","))
    except ValueError as exc:
        raise ParameterError(f"{key}: cannot parse list {value!r}") from exc


_PHANTOM_OPTION_KEYS = ("slit_width", "separation", "block_size")
_SENSOR_FIELDS = ("psf_width", "stride", "offset", "response")

_KNOWN_KEYS = (
    {
        "geometry.inverse_lambda1", "geometry.inverse_lambda2",
        "geometry.inverse_lambda3", "geometry.focal_length",
        "geometry.pupil_area", "geometry.pixel_area",
        "crystal.epsilon", "crystal.beta_z", "crystal.beta",
        "object.phantom", "object.path", "object.height", "object.width",
        "object.photons_per_pixel", "object.max_photon_density",
        "arms", "noise.extra", "noise.scale",
        "reduction.tau", "reduction.transform", "reduction.pinv_tolerance",
        "reduction.fixed_point_tol", "reduction.max_fixed_point_iters",
        "reduction.qp_tol", "reduction.qp_max_iters",
        "seeds.count", "seeds.base",
        "output.dir", "output.save_images",
        "axial_approximation", "single_arm",
    }
    | {f"object.{k}" for k in _PHANTOM_OPTION_KEYS}
    | {f"sensors.{f}" for f in _SENSOR_FIELDS}
    | {f"sensors.arm{a}.{f}" for a in (1, 2, 3) for f in _SENSOR_FIELDS}
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment setup (all quantities in SI / counts)."""

    geometry: OpticalGeometry
    crystal: CrystalParams
    phantom: str | None = "two_slits"
    object_path: str | None = None
    dims: tuple[int, int] = (64, 64)
    phantom_options: tuple[tuple[str, int], ...] = ()
    photons_per_pixel: float = 10.0
    sensors: tuple[SensorModel, ...] = (SensorModel(),) * 3
    arms: tuple[int, ...] = (1, 2, 3)
    extra_noise: tuple[float, ...] | None = None
    noise_scale: float = 1.0
    taus: tuple[float, ...] = (0.0,)
    reduction: ReductionConfig = ReductionConfig(transform="haar")
    seeds_count: int = 100
    seed_base: int = 1234
    output_dir: str = "out"
    save_images: bool = False
    axial_approximation: bool = False
    single_arm: int | None = None
    raw_entries: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.phantom is None and self.object_path is None:
            raise ParameterError("config needs object.phantom or object.path")
        if any(d < 1 for d in self.dims):
            raise ParameterError(f"image dims must be positive, got {self.dims}")
        if not (self.photons_per_pixel > 0 and math.isfinite(self.photons_per_pixel)):
            raise ParameterError(
                f"photons_per_pixel must be positive, got {self.photons_per_pixel}"
            )
        if len(self.sensors) != len(self.arms):
            raise ParameterError("need one sensor model per measured arm")
        if self.seeds_count < 1:
            raise ParameterError(f"seeds.count must be >= 1, got {self.seeds_count}")
        if self.seed_base < 0:
            raise ParameterError(f"seeds.base must be >= 0, got {self.seed_base}")
        if self.noise_scale < 0.0:
            raise ParameterError(f"noise.scale must be >= 0, got {self.noise_scale}")
        if not self.taus or any(t < 0.0 for t in self.taus):
            raise ParameterError(f"reduction.tau values must be >= 0, got {self.taus}")
        if self.single_arm is not None and self.single_arm not in (1, 2, 3):
            raise ParameterError(
                f"single_arm must be 1, 2, 3 or auto, got {self.single_arm}"
            )


def default_config() -> ExperimentConfig:
    """The reference setup used throughout: default optics and a two-slit object."""
    geom = OpticalGeometry.from_inverse_wavelengths(
        1.2e6, 0.8e6, 3.2e6, focal_length=0.10, pupil_area=25e-4, pixel_area=100e-12
    )
    crystal = CrystalParams.from_dimensionless(epsilon=0.4, beta_z=1.0, beta=100.0)
    return ExperimentConfig(geometry=geom, crystal=crystal)


def config_from_mapping(entries: dict[str, str]) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed key/value strings."""
    unknown = sorted(set(entries) - _KNOWN_KEYS)
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")

    def get(key: str, default: str | None = None) -> str | None:
        return entries.get(key, default)

    def get_float(key: str, default: float) -> float:
        v = get(key)
        return parse_quantity(v) if v is not None else default

    def get_int(key: str, default: int) -> int:
        v = get(key)
        if v is None:
            return default
        try:
            return int(v)
        except ValueError as exc:
            raise ParameterError(f"{key}: expected integer, got {v!r}") from exc

    base = default_config()

    geom = OpticalGeometry.from_inverse_wavelengths(
        get_float("geometry.inverse_lambda1", 1.2e6),
        get_float("geometry.inverse_lambda2", 0.8e6),
        get_float("geometry.inverse_lambda3", 3.2e6),
        focal_length=get_float("geometry.focal_length", 0.10),
        pupil_area=get_float("geometry.pupil_area", 25e-4),
        pixel_area=get_float("geometry.pixel_area", 100e-12),
    )
    crystal = CrystalParams.from_dimensionless(
        epsilon=get_float("crystal.epsilon", 0.4),
        beta_z=get_float("crystal.beta_z", 1.0),
        beta=get_float("crystal.beta", 100.0),
    )

    if "object.photons_per_pixel" in entries and "object.max_photon_density" in entries:
        raise ParameterError(
            "object.photons_per_pixel and object.max_photon_density are exclusive"
        )
    if "object.photons_per_pixel" in entries:
        photons = parse_quantity(entries["object.photons_per_pixel"])
    else:
        density = get_float("object.max_photon_density", 1e7 * 1e4)  # SI m^-2
        photons = density * geom.pixel_area

    dims = (get_int("object.height", 64), get_int("object.width", 64))
    phantom = get("object.phantom")
    object_path = get("object.path")
    if object_path is None and phantom is None:
        phantom = "two_slits"
    options = tuple(
        (k, get_int(f"object.{k}", 0))
        for k in _PHANTOM_OPTION_KEYS
        if f"object.{k}" in entries
    )

    arms = _parse_int_list(entries["arms"], "arms") if "arms" in entries else (1, 2, 3)

    def sensor_for(arm: int) -> SensorModel:
        def fval(name: str, cast, default):
            v = get(f"sensors.arm{arm}.{name}", get(f"sensors.{name}"))
            if v is None:
                return default
            try:
                return cast(v)
            except ValueError as exc:
                raise ParameterError(f"sensors.{name}: bad value {v!r}") from exc

        return SensorModel(
            psf_width=fval("psf_width", int, 3),
            stride=fval("stride", int, 1),
            offset=fval("offset", int, 0),
            response=fval("response", float, 1.0),
        )

    sensors = tuple(sensor_for(a) for a in arms)

    extra = None
    if "noise.extra" in entries:
        levels = _parse_float_list(entries["noise.extra"], "noise.extra")
        if len(levels) == 1:
            levels = levels * len(arms)
        if len(levels) != len(arms):
            raise ParameterError("noise.extra needs one value, or one per arm")
        if any(v < 0.0 for v in levels):
            raise ParameterError("noise.extra values must be >= 0")
        extra = levels if any(v > 0.0 for v in levels) else None

    taus = (
        _parse_float_list(entries["reduction.tau"], "reduction.tau")
        if "reduction.tau" in entries
        else (0.0,)
    )
    reduction = ReductionConfig(
        tau=taus[0],
        transform=get("reduction.transform", "haar"),
        pinv_tolerance=get_float("reduction.pinv_tolerance", 1e-10),
        fixed_point_tol=get_float("reduction.fixed_point_tol", 1e-10),
        max_fixed_point_iters=get_int("reduction.max_fixed_point_iters", 500),
        qp_tol=get_float("reduction.qp_tol", 1e-8),
        qp_max_iters=get_int("reduction.qp_max_iters", 20000),
    )

    single_raw = get("single_arm", "auto")
    if single_raw.lower() == "auto":
        single_arm = None
    else:
        try:
            single_arm = int(single_raw)
        except ValueError as exc:
            raise ParameterError(
                f"single_arm: expected auto or an arm index, got {single_raw!r}"
            ) from exc

    return replace(
        base,
        geometry=geom,
        crystal=crystal,
        phantom=phantom,
        object_path=object_path,
        dims=dims,
        phantom_options=options,
        photons_per_pixel=photons,
        sensors=sensors,
        arms=arms,
        extra_noise=extra,
        noise_scale=get_float("noise.scale", 1.0),
        taus=taus,
        reduction=reduction,
        seeds_count=get_int("seeds.count", 100),
        seed_base=get_int("seeds.base", 1234),
        output_dir=get("output.dir", "out"),
        save_images=_parse_bool(get("output.save_images", "false"),
                                "output.save_images"),
        axial_approximation=_parse_bool(get("axial_approximation", "false"),
                                        "axial_approximation"),
        single_arm=single_arm,
        raw_entries=tuple(sorted(entries.items())),
    )


def load_config(path) -> ExperimentConfig:
    """Read and resolve a config file; missing keys fall back to defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParameterError(f"cannot read config file {path}: {exc}") from exc
    return config_from_mapping(parse_config_text(text))
