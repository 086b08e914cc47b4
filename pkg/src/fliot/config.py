"""INI experiment configs: ``[section]`` blocks of ``key = value`` lines.

Every :class:`~fliot.sim.ExperimentConfig` field is nameable as
``section.key``; ``--set section.key=value`` overrides win over the file.
Errors name the file and line of the offending key. The canonical dump of the
resolved settings is hashed into every output for provenance.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .compression import CompressionConfig
from .errors import ConfigError, FliotError
from .metrics import EnergyModel
from .privacy import DpConfig
from .rnn import TrainingConfig
from .sharing import DEFAULT_PRIME
from .sim import CostModel, ExperimentConfig
from .traffic import DEFAULT_INTENSITY, DataConfig


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s: str) -> Optional[float]:
    return None if s.strip().lower() in ("", "none", "off") else float(s)


def _int(s: str) -> int:
    return int(s.strip(), 0)


def _list(conv: Callable) -> Callable:
    def parse(s: str):
        items = [p.strip() for p in s.split(",") if p.strip()]
        return [conv(p) for p in items]
    parse.__name__ = f"list_of_{conv.__name__}"
    return parse


def _compression_point(s: str) -> Optional[tuple[float, int]]:
    if s.strip().lower() == "off":
        return None
    frac, bits = s.split(":")
    return float(frac), int(bits)


_t, _c, _e, _data = TrainingConfig(), CostModel(), EnergyModel(), DataConfig()

# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable, object]] = {
    "experiment.n_devices": (_int, 50),
    "experiment.rounds": (_int, 20),
    "experiment.participation_fraction": (float, 1.0),
    "experiment.aggregation_mode": (str, "plaintext"),
    "experiment.seed": (_int, 2024),
    "experiment.centralized_baseline": (_bool, True),
    "data.seq_len": (_int, _data.seq_len),
    "data.n_features": (_int, _data.n_features),
    "data.windows_per_device": (_int, _data.windows_per_device),
    "data.attack_min_frac": (float, _data.attack_min_frac),
    "data.attack_max_frac": (float, _data.attack_max_frac),
    "data.intensity_ddos": (float, DEFAULT_INTENSITY["ddos"]),
    "data.intensity_port_scan": (float, DEFAULT_INTENSITY["port_scan"]),
    "data.intensity_malware_propagation": (float, DEFAULT_INTENSITY["malware_propagation"]),
    "model.hidden_size": (_int, 4),
    "model.activation": (str, "tanh"),
    "training.eta0": (float, _t.eta0),
    "training.local_epochs": (_int, _t.local_epochs),
    "training.batch_size": (_int, _t.batch_size),
    "training.loss_kind": (str, _t.loss_kind),
    "training.clip_norm": (_opt_float, None),
    "privacy.enabled": (_bool, False),
    "privacy.sigma": (float, 0.0),
    "privacy.clip_norm": (_opt_float, None),
    "compression.enabled": (_bool, False),
    "compression.prune_fraction": (float, 0.0),
    "compression.quant_bits": (_int, 8),
    "crypto.key_bits": (_int, 512),
    "crypto.scale_bits": (_int, 16),
    "crypto.range_bound": (float, 8.0),
    "crypto.n_aggregators": (_int, 2),
    "crypto.smpc_prime": (_int, DEFAULT_PRIME),
    "detection.threshold_percentile": (float, 99.0),
    "cost.latency_per_byte": (float, _c.latency_per_byte),
    "cost.latency_per_message": (float, _c.latency_per_message),
    "cost.latency_per_flop": (float, _c.latency_per_flop),
    "cost.latency_per_bigint_mult": (float, _c.latency_per_bigint_mult),
    "cost.server_speedup": (float, _c.server_speedup),
    "cost.energy_alpha": (float, _e.alpha),
    "cost.energy_beta": (float, _e.beta),
    "cost.energy_gamma": (float, _e.gamma),
    "sweep.noise_sigma": (_list(float), [0.0, 0.001, 0.01]),
    "sweep.n_devices": (_list(_int), [10, 50, 100, 200]),
    "sweep.aggregation_mode": (_list(str), ["plaintext", "homomorphic", "secret_shared"]),
    "sweep.compression": (_list(_compression_point), [None, (0.5, 8), (0.75, 4)]),
    "ingest.feature_columns": (_list(str), []),
    "ingest.label_column": (str, "Label"),
    "ingest.benign_labels": (_list(str), ["BENIGN"]),
    "ingest.seq_len": (_int, 16),
    "ingest.stride": (_int, 0),
    "ingest.train_fraction": (float, 0.6),
}

SECTION_OF_FIELD_ERRORS = ("experiment", "data", "model", "training", "privacy", "compression",
                           "crypto", "detection", "cost")


@dataclass
class SweepGrid:
    noise_sigma: list
    n_devices: list
    aggregation_mode: list
    compression: list


@dataclass
class IngestSpec:
    feature_columns: list
    label_column: str
    benign_labels: list
    seq_len: int
    stride: int
    train_fraction: float


@dataclass
class RunConfig:
    experiment: ExperimentConfig
    sweep: SweepGrid
    ingest: IngestSpec
    values: dict = field(repr=False)
    source: Optional[str] = None

    @property
    def text(self) -> str:
        return dump(self.values)

    @property
    def hash(self) -> str:
        return config_hash(self.values)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return f"{v[0]!r}:{v[1]}"
    if isinstance(v, list):
        return ", ".join("off" if x is None else _format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump(values: dict) -> str:
    """Canonical INI text of resolved settings (sorted sections and keys)."""
    lines, section = [], None
    for key in sorted(values):
        sec, name = key.split(".", 1)
        if sec != section:
            if section is not None:
                lines.append("")
            lines.append(f"[{sec}]")
            section = sec
        lines.append(f"{name} = {_format(values[key])}")
    return "\n".join(lines) + "\n"


def config_hash(values: dict) -> str:
    return hashlib.sha256(dump(values).encode()).hexdigest()[:16]


_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^#;\s\[][^=:]*?)\s*[=:]")


def _key_lines(text: str) -> dict:
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault(section, no)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None:
            lines[f"{section}.{m.group(1).strip().lower()}"] = no
    return lines


def load_config(path=None, overrides: Sequence[str] = (), seed: Optional[int] = None) -> RunConfig:
    """Resolve defaults, then the file at ``path``, then ``overrides``, then ``seed``."""
    raw: dict[str, tuple[str, Optional[str], Optional[int]]] = {}
    lines: dict = {}
    src = str(path) if path is not None else None
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror or exc}", src) from None
        lines = _key_lines(text)
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        try:
            parser.read_string(text, source=src)
        except configparser.Error as exc:
            line = getattr(exc, "lineno", None)
            if line is None and getattr(exc, "errors", None):
                line = exc.errors[0][0]
            msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
            raise ConfigError(msg, src, line) from None
        for sec in parser.sections():
            for name, value in parser.items(sec):
                key = f"{sec}.{name}"
                if key not in SCHEMA:
                    raise ConfigError(f"unknown setting {key!r}", src, lines.get(key))
                raw[key] = (value, src, lines.get(key))
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not key=value", "--set")
        key, value = ov.split("=", 1)
        key = key.strip().lower()
        if key not in SCHEMA:
            raise ConfigError(f"unknown setting {key!r}", "--set")
        raw[key] = (value.strip(), "--set", None)
    if seed is not None:
        raw["experiment.seed"] = (str(seed), "--seed", None)

    values = {}
    for key, (conv, default) in SCHEMA.items():
        if key not in raw:
            values[key] = default
            continue
        text, where, line = raw[key]
        try:
            values[key] = conv(text)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{key}: cannot parse {text!r} ({exc})", where, line) from None
    try:
        experiment = build_experiment(values)
    except FliotError as exc:
        where, line = src, None
        for key, (_, w, ln) in raw.items():
            if key.split(".")[0] in SECTION_OF_FIELD_ERRORS and key.split(".")[-1] in str(exc):
                where, line = w, ln
                break
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), where, line) from None
    sweep = SweepGrid(values["sweep.noise_sigma"], values["sweep.n_devices"],
                      values["sweep.aggregation_mode"], values["sweep.compression"])
    ingest = IngestSpec(values["ingest.feature_columns"], values["ingest.label_column"],
                        values["ingest.benign_labels"], values["ingest.seq_len"],
                        values["ingest.stride"] or values["ingest.seq_len"], values["ingest.train_fraction"])
    return RunConfig(experiment, sweep, ingest, values, src)


def build_experiment(v: dict) -> ExperimentConfig:
    data = DataConfig(
        seq_len=v["data.seq_len"], n_features=v["data.n_features"],
        windows_per_device=v["data.windows_per_device"],
        attack_min_frac=v["data.attack_min_frac"], attack_max_frac=v["data.attack_max_frac"],
        intensity={
            "ddos": v["data.intensity_ddos"], "port_scan": v["data.intensity_port_scan"],
            "malware_propagation": v["data.intensity_malware_propagation"],
        },
    )
    training = TrainingConfig(v["training.eta0"], v["training.local_epochs"], v["training.batch_size"],
                              v["training.loss_kind"], v["training.clip_norm"])
    dp = DpConfig(v["privacy.sigma"], v["privacy.clip_norm"]) if v["privacy.enabled"] else None
    comp = CompressionConfig(v["compression.enabled"], v["compression.prune_fraction"], v["compression.quant_bits"])
    cost = CostModel(
        v["cost.latency_per_byte"], v["cost.latency_per_message"], v["cost.latency_per_flop"],
        v["cost.latency_per_bigint_mult"], v["cost.server_speedup"],
        EnergyModel(v["cost.energy_alpha"], v["cost.energy_beta"], v["cost.energy_gamma"]),
    )
    return ExperimentConfig(
        n_devices=v["experiment.n_devices"], rounds=v["experiment.rounds"],
        participation_fraction=v["experiment.participation_fraction"],
        aggregation_mode=v["experiment.aggregation_mode"], seed=v["experiment.seed"],
        dp=dp, compression=comp, training=training, data=data,
        hidden_size=v["model.hidden_size"], activation=v["model.activation"],
        key_bits=v["crypto.key_bits"], scale_bits=v["crypto.scale_bits"], range_bound=v["crypto.range_bound"],
        n_aggregators=v["crypto.n_aggregators"], smpc_prime=v["crypto.smpc_prime"],
        threshold_percentile=v["detection.threshold_percentile"], cost=cost,
        centralized_baseline=v["experiment.centralized_baseline"],
    )


def with_values(rc: RunConfig, **changes) -> RunConfig:
    """Copy of ``rc`` with some ``section.key`` values replaced (keys use ``__`` for ``.``)."""
    values = dict(rc.values)
    for k, v in changes.items():
        key = k.replace("__", ".")
        if key not in SCHEMA:
            raise ConfigError(f"unknown setting {key!r}")
        values[key] = v
    return RunConfig(build_experiment(values), rc.sweep, rc.ingest, values, rc.source)
