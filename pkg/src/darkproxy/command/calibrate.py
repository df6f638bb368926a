import argparse
import logging
import os

from ..config import Config
from ..decouple import BandNoiseModel
from ..decouple import calibrate_band_noise
from ..decouple import calibrate_frame_noise
from ..decouple import calibrate_system_gain
from ..decouple import remove_frame_noise
from ..synth import CalibrationProfile
from ..synth import save_profile
from .common import finish
from .common import flag_or_config
from .common import output_dir
from .common import read_dark_sets
from .common import read_flat_sets
from .common import start_manifest

description = "Calibrate frame-wise and band-wise noise and the system gain"

logger = logging.getLogger("darkproxy.command.calibrate")


def setup_parser(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--darks", required=True, metavar="manifest", help="Dark frame manifest")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--flats", metavar="manifest", help="Flat frame manifest (photon transfer)")
    group.add_argument(
        "--gain-slope",
        type=float,
        metavar="K/ISO",
        help="Nominal system gain per ISO unit, used instead of flat frames",
    )


def system_gain(config: Config, args: argparse.Namespace, isos: list[int]) -> dict[int, float]:
    """Gain from flat frames, else from ``--gain-slope`` or the ``calibrate`` section"""
    if args.flats:
        return calibrate_system_gain(read_flat_sets(args.flats))
    section = config["calibrate"]
    if (slope := flag_or_config(args.gain_slope, section, "gain_slope")) is not None:
        logger.info(f"no flat frames: using nominal gain {slope:g} x ISO")
        return {iso: slope * iso for iso in isos}
    table = section["gain"]
    if missing := [iso for iso in isos if iso not in table]:
        raise ValueError(
            f"no system gain for ISO(s) {missing}: "
            "pass --flats or --gain-slope, or set calibrate:gain for every ISO"
        )
    logger.info("no flat frames: using the configured gain table")
    return {iso: table[iso] for iso in isos}


def execute(config: Config, args: argparse.Namespace) -> int:
    out = output_dir(args)
    manifest = start_manifest(config, args)
    manifest.add_input("darks", args.darks)
    if args.flats:
        manifest.add_input("flats", args.flats)

    dark_sets = read_dark_sets(args.darks)
    frame_model = calibrate_frame_noise(dark_sets)
    band_model = BandNoiseModel()
    for s in dark_sets:
        residuals = [remove_frame_noise(f, frame_model) for f in s]
        entry = calibrate_band_noise(residuals, s.iso)
        band_model.add(entry)
        logger.debug(
            f"ISO {s.iso}: BLE={frame_model.ble[s.iso]:.4f} "
            f"sigma_row={entry.sigma_row:.4f} sigma_col={entry.sigma_col:.4f}"
        )
    gain = system_gain(config, args, frame_model.isos)
    ref = dark_sets[0].frames[0]
    profile = CalibrationProfile(
        frame=frame_model,
        band=band_model,
        gain=gain,
        bit_depth=ref.bit_depth,
        black_level=ref.black_level,
        white_level=ref.white_level,
    )
    save_profile(profile, os.path.join(out, "profile"))
    finish(manifest, out)
    return 0
