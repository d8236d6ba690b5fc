"""Command-line pipeline: simulate -> correlate -> reconstruct -> fit.

Each stage reads and writes the formats defined in biphoton.io, so a
pipeline can be re-run from any intermediate product.  A run directory
always contains a manifest with every parameter and derived seed needed
to reproduce it bit for bit.

Exit codes: 0 success, 1 usage or configuration error, 2 malformed data,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from . import io as bio
from .correlate import cross_correlate
from .errors import BiphotonError, ConfigError, DataError, NumericalError
from .fit import fit_constant_phase, fit_double_exponential
from .model import RECONSTRUCTION_PHASES, AnalyzerSetting, TpwfModel
from .reconstruct import PhaseTriple, reconstruct_curve
from .simulate import SimConfig, derive_setting_seed, generate_stream

__all__ = ["PipelineConfig", "main"]

MANIFEST_FORMAT = "run-manifest/1"
MANIFEST_NAME = "manifest.json"

_NS = 1e-9
_PS = 1e-12


@dataclass(frozen=True)
class PipelineConfig:
    """Fully validated parameters for one end-to-end run."""

    seed: int = 1
    model: TpwfModel = TpwfModel(amplitude=1.0, corr_time=39.3e-9, tau_offset=0.0, phase=0.9)
    gamma: float = 1.0
    pair_rate: float = 2000.0
    singles_rate_a: float = 1000.0
    singles_rate_b: float = 1000.0
    duration: float = 10.0
    jitter_sigma: float = 0.0
    dead_time: float = 0.0
    tau_window: float = 400e-9
    bin_width: float = 4e-9
    tau_max: float = 200e-9
    background_mode: str = "none"
    gamma_mode: str = "per_bin"
    wing_fraction: float = 0.2
    fix_corr_time: float | None = None
    phase_threshold: float = 0.1

    def __post_init__(self):
        if self.gamma < 0.0:
            raise ConfigError("gamma must be >= 0")
        if self.background_mode not in ("none", "wing_subtract"):
            raise ConfigError(f"unknown background_mode {self.background_mode!r}")
        if self.gamma_mode not in ("per_bin", "pooled"):
            raise ConfigError(f"unknown gamma_mode {self.gamma_mode!r}")
        self.sim_config(0)  # validates rates, durations, window

    def sim_config(self, setting_index: int) -> SimConfig:
        return SimConfig(
            pair_rate=self.pair_rate,
            singles_rate_a=self.singles_rate_a,
            singles_rate_b=self.singles_rate_b,
            duration=self.duration,
            jitter_sigma=self.jitter_sigma,
            dead_time=self.dead_time,
            tau_window=self.tau_window,
            seed=derive_setting_seed(self.seed, setting_index),
        )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": {
                "amplitude": self.model.amplitude,
                "corr_time_ns": self.model.corr_time / _NS,
                "tau_offset_ns": self.model.tau_offset / _NS,
                "phase_rad": self.model.phase,
            },
            "gamma": self.gamma,
            "sim": {
                "pair_rate_hz": self.pair_rate,
                "singles_rate_a_hz": self.singles_rate_a,
                "singles_rate_b_hz": self.singles_rate_b,
                "duration_s": self.duration,
                "jitter_sigma_ps": self.jitter_sigma / _PS,
                "dead_time_ns": self.dead_time / _NS,
                "tau_window_ns": self.tau_window / _NS,
            },
            "correlate": {
                "bin_width_ns": self.bin_width / _NS,
                "tau_max_ns": self.tau_max / _NS,
            },
            "reconstruct": {
                "background_mode": self.background_mode,
                "gamma_mode": self.gamma_mode,
                "wing_fraction": self.wing_fraction,
            },
            "fit": {
                "fix_corr_time_ns": None
                if self.fix_corr_time is None
                else self.fix_corr_time / _NS,
                "phase_threshold": self.phase_threshold,
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        def section(d, name, allowed):
            sub = d.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            unknown = set(sub) - set(allowed)
            if unknown:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
            return sub

        top_allowed = {"seed", "model", "gamma", "sim", "correlate", "reconstruct", "fit"}
        unknown = set(obj) - top_allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")

        m = section(obj, "model", {"amplitude", "corr_time_ns", "tau_offset_ns", "phase_rad"})
        s = section(
            obj,
            "sim",
            {
                "pair_rate_hz",
                "singles_rate_a_hz",
                "singles_rate_b_hz",
                "duration_s",
                "jitter_sigma_ps",
                "dead_time_ns",
                "tau_window_ns",
            },
        )
        c = section(obj, "correlate", {"bin_width_ns", "tau_max_ns"})
        r = section(obj, "reconstruct", {"background_mode", "gamma_mode", "wing_fraction"})
        f = section(obj, "fit", {"fix_corr_time_ns", "phase_threshold"})

        defaults = cls()
        model = TpwfModel(
            amplitude=float(m.get("amplitude", defaults.model.amplitude)),
            corr_time=float(m.get("corr_time_ns", defaults.model.corr_time / _NS)) * _NS,
            tau_offset=float(m.get("tau_offset_ns", defaults.model.tau_offset / _NS)) * _NS,
            phase=float(m.get("phase_rad", defaults.model.phase)),
        )
        fix_tc = f.get("fix_corr_time_ns", None)
        return cls(
            seed=int(obj.get("seed", defaults.seed)),
            model=model,
            gamma=float(obj.get("gamma", defaults.gamma)),
            pair_rate=float(s.get("pair_rate_hz", defaults.pair_rate)),
            singles_rate_a=float(s.get("singles_rate_a_hz", defaults.singles_rate_a)),
            singles_rate_b=float(s.get("singles_rate_b_hz", defaults.singles_rate_b)),
            duration=float(s.get("duration_s", defaults.duration)),
            jitter_sigma=float(s.get("jitter_sigma_ps", defaults.jitter_sigma / _PS)) * _PS,
            dead_time=float(s.get("dead_time_ns", defaults.dead_time / _NS)) * _NS,
            tau_window=float(s.get("tau_window_ns", defaults.tau_window / _NS)) * _NS,
            bin_width=float(c.get("bin_width_ns", defaults.bin_width / _NS)) * _NS,
            tau_max=float(c.get("tau_max_ns", defaults.tau_max / _NS)) * _NS,
            background_mode=str(r.get("background_mode", defaults.background_mode)),
            gamma_mode=str(r.get("gamma_mode", defaults.gamma_mode)),
            wing_fraction=float(r.get("wing_fraction", defaults.wing_fraction)),
            fix_corr_time=None if fix_tc is None else float(fix_tc) * _NS,
            phase_threshold=float(f.get("phase_threshold", defaults.phase_threshold)),
        )


def _load_config(args) -> PipelineConfig:
    """Defaults, overridden by the config file, overridden by flags."""
    obj = {}
    if getattr(args, "config", None):
        obj = bio.read_json(args.config)
        if not isinstance(obj, dict):
            raise ConfigError("config file must hold a JSON object")
    config = PipelineConfig.from_dict(obj)
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "bin_width_ns", None) is not None:
        updates["bin_width"] = args.bin_width_ns * _NS
    if getattr(args, "tau_max_ns", None) is not None:
        updates["tau_max"] = args.tau_max_ns * _NS
    if getattr(args, "background_mode", None) is not None:
        updates["background_mode"] = args.background_mode
    if getattr(args, "gamma_mode", None) is not None:
        updates["gamma_mode"] = args.gamma_mode
    if updates:
        config = dataclasses.replace(config, **updates)
    return config


def _tag_names(index: int) -> tuple[str, str]:
    return f"tags_phi{index}_A.bttg", f"tags_phi{index}_B.bttg"


def _simulate_setting(config: PipelineConfig, index: int, out_dir: str) -> dict:
    phi = RECONSTRUCTION_PHASES[index]
    setting = AnalyzerSetting.balanced(phi)
    sim = config.sim_config(index)
    stream_a, stream_b = generate_stream(sim, setting, config.model, config.gamma)
    name_a, name_b = _tag_names(index)
    bio.write_timetags(os.path.join(out_dir, name_a), stream_a)
    bio.write_timetags(os.path.join(out_dir, name_b), stream_b)
    return {
        "index": index,
        "phi_rad": phi,
        "theta_rad": setting.theta,
        "seed": sim.seed,
        "tags_a": name_a,
        "tags_b": name_b,
        "n_tags_a": len(stream_a),
        "n_tags_b": len(stream_b),
        "duration_s": stream_a.duration,
        "exposure_s": stream_a.exposure,
    }


def run_simulate(config: PipelineConfig, out_dir: str, only_setting: int | None = None) -> dict:
    """Simulate the analyzer settings (concurrently) and write a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    indices = [only_setting] if only_setting is not None else [0, 1, 2]
    with ThreadPoolExecutor(max_workers=len(indices)) as pool:
        entries = list(pool.map(lambda k: _simulate_setting(config, k, out_dir), indices))
    manifest = {
        "format": MANIFEST_FORMAT,
        "config": config.to_dict(),
        "settings": entries,
    }
    bio.write_json(os.path.join(out_dir, MANIFEST_NAME), manifest)
    return manifest


def _hist_name(index: int) -> str:
    return f"hist_phi{index}.json"


def run_correlate(run_dir: str, config: PipelineConfig, manifest: dict) -> list:
    """Correlate every setting recorded in a manifest."""
    def one(entry):
        setting = AnalyzerSetting(theta=entry["theta_rad"], phi=entry["phi_rad"])
        stream_a = bio.read_timetag_stream(
            os.path.join(run_dir, entry["tags_a"]),
            duration=entry["duration_s"],
            exposure=entry.get("exposure_s"),
            channel="A",
        )
        stream_b = bio.read_timetag_stream(
            os.path.join(run_dir, entry["tags_b"]),
            duration=entry["duration_s"],
            exposure=entry.get("exposure_s"),
            channel="B",
        )
        hist = cross_correlate(stream_a, stream_b, config.bin_width, config.tau_max, setting)
        path = os.path.join(run_dir, _hist_name(entry["index"]))
        bio.write_json(path, bio.histogram_to_dict(hist))
        return path

    entries = manifest["settings"]
    with ThreadPoolExecutor(max_workers=max(len(entries), 1)) as pool:
        return list(pool.map(one, entries))


def run_reconstruct(hist_paths, config: PipelineConfig, out_path: str):
    hists = [bio.histogram_from_dict(bio.read_json(p)) for p in hist_paths]
    triple = PhaseTriple(*hists)
    recon = reconstruct_curve(
        triple,
        background_mode=config.background_mode,
        gamma_mode=config.gamma_mode,
        wing_fraction=config.wing_fraction,
    )
    bio.write_json(out_path, bio.recon_to_dict(recon))
    return recon


def run_fit(recon_path: str, config: PipelineConfig, out_path: str) -> dict:
    recon = bio.recon_from_dict(bio.read_json(recon_path))
    envelope = fit_double_exponential(recon, fix_corr_time=config.fix_corr_time)
    phase = fit_constant_phase(recon, weight_threshold=config.phase_threshold)
    doc = {
        "format": bio.FIT_FORMAT,
        "fits": {
            "envelope": bio.fit_to_dict(envelope, "double_exponential_envelope"),
            "phase": bio.fit_to_dict(phase, "constant_phase"),
        },
    }
    bio.write_json(out_path, doc)
    return doc


# --- command handlers -------------------------------------------------

def _cmd_simulate(args) -> int:
    config = _load_config(args)
    manifest = run_simulate(config, args.output_dir, only_setting=args.phi_setting)
    for entry in manifest["settings"]:
        print(
            f"setting {entry['index']} (phi = {entry['phi_rad']:.6f} rad): "
            f"{entry['n_tags_a']} A tags, {entry['n_tags_b']} B tags"
        )
    print(f"wrote {os.path.join(args.output_dir, MANIFEST_NAME)}")
    return 0


def _cmd_correlate(args) -> int:
    config = _load_config(args)
    if args.input_dir:
        manifest = bio.read_json(os.path.join(args.input_dir, MANIFEST_NAME))
        paths = run_correlate(args.input_dir, config, manifest)
        for p in paths:
            print(f"wrote {p}")
        return 0
    if not (args.tags_a and args.tags_b and args.duration_s and args.output):
        raise ConfigError(
            "either --input-dir or all of --tags-a, --tags-b, --duration-s, --output"
        )
    setting = None
    if args.phi_rad is not None:
        setting = AnalyzerSetting.balanced(args.phi_rad)
    stream_a = bio.read_timetag_stream(args.tags_a, duration=args.duration_s)
    stream_b = bio.read_timetag_stream(args.tags_b, duration=args.duration_s)
    hist = cross_correlate(stream_a, stream_b, config.bin_width, config.tau_max, setting)
    bio.write_json(args.output, bio.histogram_to_dict(hist))
    print(f"wrote {args.output}")
    return 0


def _cmd_reconstruct(args) -> int:
    config = _load_config(args)
    if args.input_dir:
        hist_paths = [os.path.join(args.input_dir, _hist_name(k)) for k in range(3)]
        out = args.output or os.path.join(args.input_dir, "reconstruction.json")
    else:
        if not (args.hist0 and args.hist1 and args.hist2 and args.output):
            raise ConfigError(
                "either --input-dir or all of --hist0, --hist1, --hist2, --output"
            )
        hist_paths = [args.hist0, args.hist1, args.hist2]
        out = args.output
    recon = run_reconstruct(hist_paths, config, out)
    print(f"reconstructed {recon.n_valid}/{len(recon.tau)} valid bins -> {out}")
    return 0


def _cmd_fit(args) -> int:
    config = _load_config(args)
    if args.fix_corr_time_ns is not None:
        config = dataclasses.replace(config, fix_corr_time=args.fix_corr_time_ns * _NS)
    if args.phase_threshold is not None:
        config = dataclasses.replace(config, phase_threshold=args.phase_threshold)
    doc = run_fit(args.recon, config, args.output)
    env = doc["fits"]["envelope"]["params"]
    ph = doc["fits"]["phase"]["params"]
    print(
        f"envelope: fwhm = {env['fwhm'] / _NS:.3f} ns, "
        f"tau_offset = {env['tau_offset'] / _NS:.3f} ns; "
        f"phase = {ph['phase']:.4f} rad"
    )
    print(f"wrote {args.output}")
    return 0


def _cmd_pipeline(args) -> int:
    config = _load_config(args)
    out_dir = args.output_dir
    manifest = run_simulate(config, out_dir)
    hist_paths = run_correlate(out_dir, config, manifest)
    recon_path = os.path.join(out_dir, "reconstruction.json")
    run_reconstruct(hist_paths, config, recon_path)
    fit_path = os.path.join(out_dir, "fits.json")
    doc = run_fit(recon_path, config, fit_path)
    env = doc["fits"]["envelope"]["params"]
    ph = doc["fits"]["phase"]["params"]
    print(f"pipeline complete in {out_dir}")
    print(
        f"envelope: amplitude = {env['amplitude']:.4g}, "
        f"fwhm = {env['fwhm'] / _NS:.3f} ns; phase = {ph['phase']:.4f} rad"
    )
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="biphoton",
        description="Simulate and reconstruct biphoton temporal wave functions "
        "from two-photon interference coincidence data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--bin-width-ns", type=float, help="coincidence bin width")
        p.add_argument("--tau-max-ns", type=float, help="histogram half range")
        p.add_argument(
            "--background-mode", choices=["none", "wing_subtract"], help="background handling"
        )
        p.add_argument(
            "--gamma-mode", choices=["per_bin", "pooled"], help="reference amplitude handling"
        )

    p_sim = sub.add_parser("simulate", help="generate time-tag files for the phase settings")
    add_common(p_sim)
    p_sim.add_argument("--output-dir", required=True)
    p_sim.add_argument(
        "--phi-setting", type=int, choices=[0, 1, 2], help="simulate a single setting"
    )
    p_sim.set_defaults(func=_cmd_simulate)

    p_corr = sub.add_parser("correlate", help="histogram coincidences from time-tag files")
    add_common(p_corr)
    p_corr.add_argument("--input-dir", help="run directory holding a manifest")
    p_corr.add_argument("--tags-a")
    p_corr.add_argument("--tags-b")
    p_corr.add_argument("--duration-s", type=float)
    p_corr.add_argument("--phi-rad", type=float)
    p_corr.add_argument("--output")
    p_corr.set_defaults(func=_cmd_correlate)

    p_rec = sub.add_parser("reconstruct", help="invert three histograms into psi(tau)")
    add_common(p_rec)
    p_rec.add_argument("--input-dir", help="run directory with hist_phi{0,1,2}.json")
    p_rec.add_argument("--hist0")
    p_rec.add_argument("--hist1")
    p_rec.add_argument("--hist2")
    p_rec.add_argument("--output")
    p_rec.set_defaults(func=_cmd_reconstruct)

    p_fit = sub.add_parser("fit", help="fit envelope and phase to a reconstruction")
    add_common(p_fit)
    p_fit.add_argument("--recon", required=True)
    p_fit.add_argument("--output", required=True)
    p_fit.add_argument("--fix-corr-time-ns", type=float)
    p_fit.add_argument("--phase-threshold", type=float)
    p_fit.set_defaults(func=_cmd_fit)

    p_pipe = sub.add_parser("pipeline", help="run all stages into one directory")
    add_common(p_pipe)
    p_pipe.add_argument("--output-dir", required=True)
    p_pipe.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        loc = f" at byte {exc.byte_offset}" if exc.byte_offset is not None else ""
        print(f"data error{loc}: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, BiphotonError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
