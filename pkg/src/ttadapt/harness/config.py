"""Experiment configuration: defaults, TOML files, dotted-key overrides, hashing."""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

from ..errors import ConfigError
from ..streams import StreamSpec, SyntheticSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_DEFAULTS_PATH = Path(__file__).with_name("defaults.toml")

ADAPTER_NAMES = ("source", "bn1", "tent", "eta", "sar", "deyo", "roid", "cmf", "tpt", "vte")
GRADIENT_ADAPTERS = ("tent", "eta", "sar", "deyo", "roid", "cmf")


def load_defaults() -> dict:
    with open(_DEFAULTS_PATH, "rb") as fh:
        return tomllib.load(fh)


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_override_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: dict, dotted: str) -> None:
    if "=" not in dotted:
        raise ConfigError(f"override must look like section.key=value, got {dotted!r}")
    path, raw = dotted.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"override: unknown section {'.'.join(keys[:-1])!r}")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError(f"override: unknown key {path.strip()!r}")
    node[keys[-1]] = _parse_override_value(raw.strip())


class ExperimentConfig:
    """Validated view over the merged config dict."""

    def __init__(self, raw: dict):
        self.raw = raw
        self._validate()

    @classmethod
    def load(cls, config_path=None, overrides=(), seed=None, out=None) -> "ExperimentConfig":
        cfg = load_defaults()
        if config_path:
            path = Path(config_path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            with open(path, "rb") as fh:
                try:
                    user = tomllib.load(fh)
                except tomllib.TOMLDecodeError as exc:
                    raise ConfigError(f"bad TOML in {path}: {exc}") from exc
            cfg = _deep_merge(cfg, user)
        for item in overrides:
            apply_override(cfg, item)
        if seed is not None:
            cfg["run"]["seed"] = int(seed)
        if out is not None:
            cfg["run"]["out"] = str(out)
        return cls(cfg)

    # -- section accessors --------------------------------------------------

    @property
    def dataset(self) -> dict:
        return self.raw["dataset"]

    @property
    def prompts(self) -> dict:
        return self.raw["prompts"]

    @property
    def encoder(self) -> dict:
        return self.raw["encoder"]

    @property
    def adapter(self) -> dict:
        return self.raw["adapter"]

    @property
    def stream(self) -> dict:
        return self.raw["stream"]

    @property
    def run(self) -> dict:
        return self.raw["run"]

    @property
    def seed(self) -> int:
        return int(self.run["seed"])

    @property
    def label(self) -> str:
        return self.adapter.get("label") or self.adapter["name"]

    def synthetic_spec(self) -> SyntheticSpec:
        syn = self.dataset["synthetic"]
        return SyntheticSpec(
            n_classes=int(syn["n_classes"]),
            d_in=int(syn["d_in"]),
            d_embed=int(syn["d_embed"]),
            hidden=int(syn["hidden"]),
            samples_per_domain=int(syn["samples_per_domain"]),
            train_samples=int(syn["train_samples"]),
            heldout_samples=int(syn["heldout_samples"]),
            sigma_cluster=float(syn["sigma_cluster"]),
            domains=tuple(syn["domains"]),
            seed=self.seed,
        )

    def stream_spec(self) -> StreamSpec:
        return StreamSpec(
            scenario=self.stream["scenario"],
            domain_order=tuple(int(d) for d in self.stream["domain_order"]),
            batch_size=int(self.stream["batch_size"]),
            seed=self.seed,
        )

    def prior_correction_enabled(self) -> bool:
        flag = self.adapter["use_prior_correction"]
        if flag == "auto":
            return self.stream["scenario"] == "correlated"
        if flag in ("on", True):
            return True
        if flag in ("off", False):
            return False
        raise ConfigError(f"adapter.use_prior_correction must be auto/on/off, got {flag!r}")

    # -- validation ----------------------------------------------------------

    def _validate(self) -> None:
        ds, enc, ad, st = self.dataset, self.encoder, self.adapter, self.stream
        if ds["kind"] not in ("synthetic", "ttae"):
            raise ConfigError(f"dataset.kind must be synthetic or ttae, got {ds['kind']!r}")
        if enc["kind"] not in ("toy", "frozen"):
            raise ConfigError(f"encoder.kind must be toy or frozen, got {enc['kind']!r}")
        if enc["norm"] not in ("none", "layer_norm", "batch_norm"):
            raise ConfigError(f"encoder.norm invalid: {enc['norm']!r}")
        if ad["name"] not in ADAPTER_NAMES:
            raise ConfigError(f"adapter.name must be one of {ADAPTER_NAMES}, got {ad['name']!r}")
        if st["scenario"] not in ("continual", "correlated", "mixed"):
            raise ConfigError(f"stream.scenario invalid: {st['scenario']!r}")

        frozen = enc["kind"] == "frozen"
        if frozen != (ds["kind"] == "ttae"):
            raise ConfigError("encoder.kind=frozen pairs with dataset.kind=ttae (and toy with synthetic)")
        if ds["kind"] == "ttae":
            if not ds["path"]:
                raise ConfigError("dataset.kind=ttae requires dataset.path")
            if not Path(ds["path"]).exists():
                raise ConfigError(f"dataset.path not found: {ds['path']}")
        if self.prompts["kind"] not in ("analog", "ttap"):
            raise ConfigError(f"prompts.kind must be analog or ttap, got {self.prompts['kind']!r}")
        if self.prompts["kind"] == "ttap":
            if not self.prompts["paths"]:
                raise ConfigError("prompts.kind=ttap requires prompts.paths")
            for p in self.prompts["paths"]:
                if not Path(p).exists():
                    raise ConfigError(f"prompt bank not found: {p}")
        elif ds["kind"] == "ttae":
            raise ConfigError("frozen datasets need prompts.kind=ttap (no analog prototypes)")

        name = ad["name"]
        if frozen and name in GRADIENT_ADAPTERS + ("bn1",):
            raise ConfigError(f"adapter {name!r} needs a trainable encoder, not a frozen table")
        if name == "bn1" and enc["norm"] != "batch_norm":
            raise ConfigError("adapter bn1 requires encoder.norm=batch_norm")
        if name == "deyo" and frozen:
            raise ConfigError("adapter deyo requires raw-input access; frozen tables are unsupported")
        if int(ad["accumulate"]) < 1:
            raise ConfigError("adapter.accumulate must be >= 1")
        if int(ad["accumulate"]) > 1:
            if name not in GRADIENT_ADAPTERS:
                raise ConfigError("adapter.accumulate>1 wraps gradient-based adapters only")
            if enc["norm"] == "batch_norm":
                raise ConfigError("adapter.accumulate>1 requires a batch-norm-free encoder")
        self.prior_correction_enabled()

    # -- reproducibility ------------------------------------------------------

    def canonical(self) -> dict:
        """Config echo for manifests; the output location is not part of the identity."""
        echo = json.loads(json.dumps(self.raw, sort_keys=True))
        echo["run"].pop("out", None)
        return echo

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
