"""Experiment configuration and synthetic pipeline assembly.

A configuration is a nested mapping (loaded from YAML by the CLI). Every
section has defaults; :func:`parse_config` validates the whole tree before
anything is computed and reports errors by dotted field path.
"""

import copy
import hashlib
from dataclasses import dataclass

import numpy as np

from . import _rng
from .core import fft2c
from .encoding import SCHEMES, ImagingOperator, make_birdcage_maps, make_mask
from .errors import ConfigError
from .estimators import SketchPlan
from .models import ACTIVATIONS, KINDS as MODEL_KINDS, make_model
from .noise import (
    CoilCovariance,
    NoiseSourceModel,
    SampleCovariance,
    build_coil_covariance,
    estimate_coil_covariance,
    sample_noise,
)
from .phantoms import KINDS as PHANTOM_KINDS, make_phantom
from .probes import DISTRIBUTIONS

ESTIMATORS = ("sketch", "naive", "mc", "brute")

DEFAULTS = {
    "seed": 0,
    "slice": 0,
    "phantom": {"kind": "smooth-random", "rows": 32, "cols": 32, "seed": None},
    "coils": {"count": 4, "maps": "birdcage", "radius": 1.5},
    "mask": {"scheme": "poisson-disc-2d", "R": 8.0, "seed": None, "calib": None},
    "noise": {
        "covariance": "estimated",
        "sigma": 0.02,
        "n_sources": None,
        "coupling": 0.3,
        "corner_fraction": 0.05,
        "alpha": 1.0,
    },
    "model": {
        "kind": "unrolled-dc",
        "steps": 4,
        "seed": 0,
        "dc": "gradient",
        "channels": 8,
        "n_layers": 3,
        "kernel_size": 3,
        "activation": "silu",
        "gain": 1.0,
        "out_scale": 0.5,
    },
    "estimators": ["sketch", "naive", "mc"],
    "S": 1000,
    "N": 3000,
    "distribution": "random-phase",
    "linearization": "measured",
    "mc_mode": "measured",
    "chunk": 50,
    "threads": 1,
    "out": "results",
}


def slice_seed(experiment_seed, slice_index):
    """Mask seed for one slice: a stable hash of ``(slice, experiment seed)``."""
    digest = hashlib.sha256(f"{slice_index}:{experiment_seed}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(where, "expected a mapping")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _need(cond, path, message):
    if not cond:
        raise ConfigError(path, message)


def _int(value, path, low=None):
    _need(isinstance(value, (int, np.integer)) and not isinstance(value, bool),
          path, f"expected an integer, got {value!r}")
    if low is not None:
        _need(value >= low, path, f"must be >= {low}")
    return int(value)


def _num(value, path, low=None, strict=False):
    _need(isinstance(value, (int, float)) and not isinstance(value, bool),
          path, f"expected a number, got {value!r}")
    if low is not None:
        _need(value > low if strict else value >= low, path,
              f"must be {'>' if strict else '>='} {low}")
    return float(value)


def _choice(value, options, path):
    _need(value in options, path, f"expected one of {list(options)}, got {value!r}")
    return value


def parse_config(raw=None, **overrides):
    """Merge ``raw`` and keyword overrides over the defaults and validate."""
    cfg = _merge(DEFAULTS, raw)
    cfg = _merge(DEFAULTS, {**cfg, **overrides})
    _int(cfg["seed"], "seed")
    _int(cfg["slice"], "slice", 0)
    ph = cfg["phantom"]
    _choice(ph["kind"], PHANTOM_KINDS, "phantom.kind")
    _int(ph["rows"], "phantom.rows", 8)
    _int(ph["cols"], "phantom.cols", 8)
    if ph["seed"] is not None:
        _int(ph["seed"], "phantom.seed")
    _int(cfg["coils"]["count"], "coils.count", 1)
    _choice(cfg["coils"]["maps"], ("birdcage",), "coils.maps")
    _num(cfg["coils"]["radius"], "coils.radius", 1, strict=True)
    mk = cfg["mask"]
    _choice(mk["scheme"], SCHEMES, "mask.scheme")
    _num(mk["R"], "mask.R", 1)
    if mk["seed"] is not None:
        _int(mk["seed"], "mask.seed")
    if mk["calib"] is not None:
        _int(mk["calib"], "mask.calib", 0)
    nz = cfg["noise"]
    _choice(nz["covariance"], ("estimated", "sources", "identity"), "noise.covariance")
    _num(nz["sigma"], "noise.sigma", 0, strict=True)
    if nz["n_sources"] is not None:
        _int(nz["n_sources"], "noise.n_sources", 1)
    _num(nz["coupling"], "noise.coupling", 0)
    frac = _num(nz["corner_fraction"], "noise.corner_fraction", 0, strict=True)
    _need(frac < 1, "noise.corner_fraction", "must be < 1")
    _num(nz["alpha"], "noise.alpha", 0, strict=True)
    md = cfg["model"]
    _choice(md["kind"], MODEL_KINDS, "model.kind")
    _int(md["steps"], "model.steps", 1)
    _int(md["seed"], "model.seed")
    _choice(md["dc"], ("gradient", "cg"), "model.dc")
    _int(md["channels"], "model.channels", 1)
    _int(md["n_layers"], "model.n_layers", 1)
    k = _int(md["kernel_size"], "model.kernel_size", 1)
    _need(k % 2 == 1, "model.kernel_size", "must be odd")
    _choice(md["activation"], ACTIVATIONS, "model.activation")
    _num(md["gain"], "model.gain", 0)
    _num(md["out_scale"], "model.out_scale", 0)
    est = cfg["estimators"]
    _need(isinstance(est, list) and est, "estimators", "expected a non-empty list")
    for i, name in enumerate(est):
        _choice(name, ESTIMATORS, f"estimators[{i}]")
    _int(cfg["S"], "S", 1)
    _int(cfg["N"], "N", 2)
    _choice(cfg["distribution"], DISTRIBUTIONS, "distribution")
    _choice(cfg["linearization"], ("measured", "true"), "linearization")
    _choice(cfg["mc_mode"], ("measured", "clean"), "mc_mode")
    _int(cfg["chunk"], "chunk", 1)
    _int(cfg["threads"], "threads", 1)
    if "brute" in est:
        _need(ph["rows"] * ph["cols"] <= 1024, "estimators",
              "brute needs at most 1024 voxels")
    return cfg


@dataclass
class Pipeline:
    """Synthetic acquisition plus reconstruction, ready for the estimators."""

    cfg: dict
    image: np.ndarray
    operator: ImagingOperator
    true_cov: CoilCovariance
    cov: SampleCovariance
    clean: np.ndarray
    measured: np.ndarray
    model: object

    def plan(self, **overrides):
        cfg = self.cfg
        lin = None
        if cfg["linearization"] == "true":
            lin = self.operator.adjoint(self.clean)
        kwargs = dict(
            operator=self.operator,
            cov=self.cov,
            model=self.model,
            measured=self.measured,
            linearization=lin,
            S=cfg["S"],
            seed=cfg["seed"],
            distribution=cfg["distribution"],
            chunk=cfg["chunk"],
            threads=cfg["threads"],
            clean=self.clean,
        )
        kwargs.update(overrides)
        return SketchPlan(**kwargs)


def build_pipeline(cfg) -> Pipeline:
    """Phantom, coils, mask, noise and model from a validated configuration.

    The acquisition is simulated fully sampled with noise from the
    configured source model; the coil covariance is then taken from the
    source model, the identity, or estimated from the outer k-space of that
    acquisition, and finally scaled by ``noise.alpha``.
    """
    seed = cfg["seed"]
    ph = cfg["phantom"]
    rows, cols = ph["rows"], ph["cols"]
    phantom_seed = seed if ph["seed"] is None else ph["seed"]
    image = make_phantom(ph["kind"], rows, cols, phantom_seed).image
    n_coils = cfg["coils"]["count"]
    maps = make_birdcage_maps(n_coils, rows, cols, cfg["coils"]["radius"])
    mk = cfg["mask"]
    mask_seed = slice_seed(seed, cfg["slice"]) if mk["seed"] is None else mk["seed"]
    mask = make_mask(mk["scheme"], (rows, cols), mk["R"], mask_seed, mk["calib"])
    op = ImagingOperator(maps, mask)

    nz = cfg["noise"]
    sources = NoiseSourceModel.random(
        n_coils, nz["n_sources"], seed, sigma=nz["sigma"], coupling=nz["coupling"]
    )
    true_cov = build_coil_covariance(sources)
    full = fft2c(maps * image)
    acq_noise = sample_noise(SampleCovariance(true_cov, (rows, cols)), seed,
                             domain=_rng.ACQUISITION)
    acquired = full + acq_noise
    if nz["covariance"] == "estimated":
        coil_cov = estimate_coil_covariance(acquired, nz["corner_fraction"])
    elif nz["covariance"] == "sources":
        coil_cov = true_cov
    else:
        coil_cov = CoilCovariance.identity(n_coils)
    coil_cov = coil_cov.scaled(nz["alpha"])
    cov = SampleCovariance(coil_cov, (rows, cols))

    md = cfg["model"]
    net = {k: md[k] for k in ("channels", "n_layers", "kernel_size", "activation",
                              "gain", "out_scale")}
    model = make_model(md["kind"], op, steps=md["steps"], seed=md["seed"], dc=md["dc"],
                       **net)
    return Pipeline(cfg, image, op, true_cov, cov, mask.apply(full),
                    mask.apply(acquired), model)
