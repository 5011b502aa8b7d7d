"""Config parsing: quantities with units, flat key/value files, resolution."""

import pytest

from pamux import ParameterError
from pamux.config import (
    config_from_mapping,
    default_config,
    load_config,
    parse_config_text,
    parse_quantity,
)


# ---------------------------------------------------------------------------
# quantities


@pytest.mark.parametrize("text,want", [
    ("1.2 um^-1", 1.2e6),
    ("0.8 um^-1", 0.8e6),
    ("10 cm", 0.10),
    ("25 cm^2", 25e-4),
    ("100 um^2", 100e-12),
    ("1e7 cm^-2", 1e11),
    ("5", 5.0),
    ("-3.5e-2", -0.035),
    ("2 m", 2.0),
    ("450 nm", 450e-9),
    ("1 mm^3", 1e-9),
])
def test_parse_quantity(text, want):
    assert parse_quantity(text) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("text", [
    "um", "3 parsec", "1 2 3", "x um", "", "1 um^x", "1 um^", "nan um",
])
def test_parse_quantity_rejects(text):
    with pytest.raises(ParameterError):
        parse_quantity(text)


# ---------------------------------------------------------------------------
# flat file format


def test_parse_config_text():
    text = """
    # leading comment
    crystal.epsilon = 0.4   # trailing comment
    CRYSTAL.beta_z = 2.0

    object.phantom = two_slits
    """
    entries = parse_config_text(text)
    assert entries == {
        "crystal.epsilon": "0.4",
        "crystal.beta_z": "2.0",
        "object.phantom": "two_slits",
    }


@pytest.mark.parametrize("bad", [
    "crystal.epsilon 0.4",
    "crystal.epsilon =",
    "= 0.4",
    "a = 1\na = 2",
])
def test_parse_config_text_rejects(bad):
    with pytest.raises(ParameterError):
        parse_config_text(bad)


# ---------------------------------------------------------------------------
# resolution


def test_empty_mapping_is_default():
    cfg = config_from_mapping({})
    dft = default_config()
    assert cfg.geometry == dft.geometry
    assert cfg.crystal == dft.crystal
    assert cfg.photons_per_pixel == pytest.approx(10.0, rel=1e-12)
    assert cfg.dims == (64, 64)
    assert cfg.taus == (0.0,)
    assert cfg.arms == (1, 2, 3)
    assert cfg.single_arm is None
    assert cfg.reduction.transform == "haar"


def test_mapping_overrides():
    cfg = config_from_mapping({
        "crystal.epsilon": "0.6",
        "crystal.beta_z": "2.5",
        "object.height": "16",
        "object.width": "8",
        "object.phantom": "checkerboard",
        "object.block_size": "4",
        "object.photons_per_pixel": "25",
        "arms": "1, 3",
        "sensors.psf_width": "5",
        "sensors.arm3.psf_width": "1",
        "sensors.arm3.response": "2.0",
        "noise.extra": "0.5",
        "noise.scale": "0.0",
        "reduction.tau": "0.0, 0.5, 1.0",
        "reduction.transform": "dct",
        "seeds.count": "7",
        "seeds.base": "99",
        "output.save_images": "true",
        "single_arm": "3",
    })
    assert cfg.crystal.epsilon == pytest.approx(0.6)
    assert cfg.crystal.length_z * cfg.crystal.beta == pytest.approx(2.5)
    assert cfg.dims == (16, 8)
    assert cfg.phantom == "checkerboard"
    assert dict(cfg.phantom_options) == {"block_size": 4}
    assert cfg.photons_per_pixel == 25.0
    assert cfg.arms == (1, 3)
    assert cfg.sensors[0].psf_width == 5 and cfg.sensors[0].response == 1.0
    assert cfg.sensors[1].psf_width == 1 and cfg.sensors[1].response == 2.0
    assert cfg.extra_noise == (0.5, 0.5)
    assert cfg.noise_scale == 0.0
    assert cfg.taus == (0.0, 0.5, 1.0)
    assert cfg.reduction.tau == 0.0
    assert cfg.reduction.transform == "dct"
    assert cfg.seeds_count == 7 and cfg.seed_base == 99
    assert cfg.save_images is True
    assert cfg.single_arm == 3


def test_photon_density_alternative():
    cfg = config_from_mapping({"object.max_photon_density": "2e7 cm^-2"})
    assert cfg.photons_per_pixel == pytest.approx(20.0, rel=1e-12)
    with pytest.raises(ParameterError):
        config_from_mapping({
            "object.photons_per_pixel": "10",
            "object.max_photon_density": "1e7 cm^-2",
        })


@pytest.mark.parametrize("entries", [
    {"bogus.key": "1"},
    {"object.phantom": "two_slits", "objeect.height": "8"},
    {"noise.extra": "0.1, 0.2"},          # 2 values for 3 arms
    {"noise.extra": "-1"},
    {"single_arm": "5"},
    {"output.save_images": "yes"},
    {"seeds.count": "0"},
    {"reduction.tau": "-0.5"},
    {"noise.scale": "-1"},
    {"object.height": "zero"},
    {"single_arm": "banana"},
])
def test_mapping_rejects(entries):
    with pytest.raises(ParameterError):
        config_from_mapping(entries)


def test_zero_extra_noise_collapses_to_none():
    cfg = config_from_mapping({"noise.extra": "0, 0, 0"})
    assert cfg.extra_noise is None
    cfg2 = config_from_mapping({"noise.extra": "0, 0.25, 0"})
    assert cfg2.extra_noise == (0.0, 0.25, 0.0)


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# sample run\n"
        "crystal.beta_z = 2.0\n"
        "object.height = 8\n"
        "object.width = 8\n"
        "seeds.count = 3\n"
        "output.dir = results\n",
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.crystal.length_z * cfg.crystal.beta == pytest.approx(2.0)
    assert cfg.dims == (8, 8)
    assert cfg.seeds_count == 3
    assert cfg.output_dir == "results"
    assert ("seeds.count", "3") in cfg.raw_entries
