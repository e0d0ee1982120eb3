"""Run configuration: profiles, JSON config files and flag overrides.

A config file is one JSON document::

    {
      "profile": "quickstart",
      "data": {"synthetic": {"d": 64, "k_true": 16, ...}}   # or {"sites": ["dir", ...]}
      "hyper": {"k": 16, "g": 10, "eta": 0.07, ...},
      "folds": 4,
      "threads": 1,
      "out": "runs/demo",
      "roi": {"count": null, "signed": false, "top_atoms": 10, "top_rois": 10},
      "sweep": {"param": "k", "values": [8, 16, 32]}
    }

Every key is optional.  ``profile`` picks the base values (``default`` or
``quickstart``); the file overrides the profile and command-line flags
override the file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataio import SyntheticSpec
from .dl_core import Hyperparams
from .errors import ConfigurationError

DEFAULT_HYPER = Hyperparams()

# Desk-scale settings for the planted synthetic federation; steps and
# iteration counts are scaled so the whole 4-fold run takes seconds.
QUICKSTART_HYPER = Hyperparams(
    lambda1=1.0,
    lambda2=0.02,
    lambda3=0.001,
    lambda4=0.1,
    eta=0.07,
    k=16,
    g=10,
    iters_local=30,
    iters_fed=60,
    iters_pretrain=5000,
    seed=0,
)
QUICKSTART_SYNTH = SyntheticSpec(d=64, k_true=16, g_true=10, n_sites=4, n_per_site=150)

PROFILES = {"default": (DEFAULT_HYPER, None), "quickstart": (QUICKSTART_HYPER, QUICKSTART_SYNTH)}


@dataclass
class RunConfig:
    hyper: Hyperparams = field(default_factory=Hyperparams)
    synthetic: SyntheticSpec | None = None
    sites: list | None = None
    folds: int = 4
    threads: int = 1
    out: Path = Path("pfeddl_out")
    figures: bool = True
    roi_count: int | None = None
    roi_signed: bool = False
    top_atoms: int = 10
    top_rois: int = 10
    sweep_param: str | None = None
    sweep_values: list | None = None

    def validate(self, need_data: bool = True) -> None:
        if need_data and (self.synthetic is None) == (self.sites is None):
            raise ConfigurationError("exactly one data source is required: a synthetic spec or a list of site directories")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be at least 1, got {self.threads}")
        if self.sweep_values is not None and len(self.sweep_values) == 0:
            raise ConfigurationError("sweep range is empty")

    def hyper_dict(self) -> dict:
        return asdict(self.hyper)


def _hyper_from(base: Hyperparams, values: dict) -> Hyperparams:
    known = {f.name for f in fields(Hyperparams)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown hyperparameter(s): {sorted(unknown)}")
    return base.with_(**values)


def _synth_from(base: SyntheticSpec | None, values: dict) -> SyntheticSpec:
    known = {f.name for f in fields(SyntheticSpec)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"unknown synthetic spec field(s): {sorted(unknown)}")
    merged = {**(base.to_dict() if base else {}), **values}
    if "n_sites" in values and "n_per_site" not in values and base is not None:
        merged["n_per_site"] = base.n_per_site[0]
    return SyntheticSpec(**merged)


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return data


def build_config(file_data: dict | None = None, profile: str | None = None, **flags) -> RunConfig:
    """Merge profile, file values and flag overrides (flags win).

    Recognized flags: ``seed``, ``out``, ``threads``, ``folds``, ``sites``,
    ``synthetic`` (bool: use the profile's synthetic spec), ``figures``,
    ``sweep_param``, ``sweep_values``.  ``None`` means "not given".
    """
    data = dict(file_data or {})
    profile = profile or data.get("profile") or "default"
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    base_hyper, base_synth = PROFILES[profile]
    cfg = RunConfig(hyper=_hyper_from(base_hyper, data.get("hyper", {})))

    src = data.get("data", {})
    if "synthetic" in src and "sites" in src:
        raise ConfigurationError("config names both synthetic and site data sources")
    if "synthetic" in src:
        cfg.synthetic = _synth_from(base_synth, src["synthetic"] or {})
    elif "sites" in src:
        cfg.sites = [Path(p) for p in src["sites"]]
    elif base_synth is not None:
        cfg.synthetic = base_synth

    for key in ("folds", "threads", "top_atoms", "top_rois"):
        if key in data:
            setattr(cfg, key, int(data[key]))
    if "out" in data:
        cfg.out = Path(data["out"])
    roi = data.get("roi", {})
    cfg.roi_count = roi.get("count", cfg.roi_count)
    cfg.roi_signed = bool(roi.get("signed", cfg.roi_signed))
    cfg.top_atoms = int(roi.get("top_atoms", cfg.top_atoms))
    cfg.top_rois = int(roi.get("top_rois", cfg.top_rois))
    sweep = data.get("sweep")
    if sweep is not None:
        cfg.sweep_param = sweep.get("param")
        cfg.sweep_values = list(sweep.get("values", []))

    if flags.get("sites"):
        cfg.sites = [Path(p) for p in flags["sites"]]
        cfg.synthetic = None
    if flags.get("seed") is not None:
        cfg.hyper = cfg.hyper.with_(seed=flags["seed"])
        if cfg.synthetic is not None:
            cfg.synthetic = _synth_from(cfg.synthetic, {"seed": flags["seed"]})
    for key in ("threads", "folds", "sweep_param", "sweep_values", "figures"):
        if flags.get(key) is not None:
            setattr(cfg, key, flags[key])
    if flags.get("out") is not None:
        cfg.out = Path(flags["out"])
    return cfg


def sweep_hyper(hyper: Hyperparams, param: str, value) -> Hyperparams:
    """``hyper`` with ``param`` set to ``value``.

    Sweeping ``k`` keeps the global fraction ``g / k`` of the base setting.
    """
    known = {f.name: f for f in fields(Hyperparams)}
    if param not in known or param == "seed":
        raise ConfigurationError(f"cannot sweep {param!r}")
    try:
        if param in ("k", "g", "iters_local", "iters_fed", "iters_pretrain"):
            value = int(value)
        else:
            value = float(value)
    except ValueError:
        raise ConfigurationError(f"{param}: cannot parse value {value!r}") from None
    if param == "k":
        g = min(value, int(round(value * hyper.g / hyper.k)))
        return hyper.with_(k=value, g=g)
    return hyper.with_(**{param: value})
