"""Synthetic IoT flow traffic, attack injection and CSV flow-record ingestion.

Benign traffic per device is a low-rank process: one latent activity signal
(a sinusoid plus AR(1) noise) drives every feature through a profile-specific
loading vector, with small independent per-feature noise on top. Attacks push
features off that manifold, which is what a bottlenecked autoencoder can see.

Feature order (F = 6): packets/s, bytes/s, mean packet size, distinct
destination proxy, distinct port proxy, error-rate proxy. For other F the
per-feature parameters are cycled.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import RandomStream
from .errors import CsvParseError, ParameterError, SchemaError

FEATURE_NAMES = (
    "packets_per_s", "bytes_per_s", "mean_pkt_size",
    "distinct_dst", "distinct_port", "error_rate",
)
ATTACK_KINDS = ("ddos", "port_scan", "malware_propagation")
VOLUME_FEATURES = (0, 1)


@dataclass
class LabeledSequence:
    """A length-T window of F features with per-step attack labels."""

    x: np.ndarray
    labels: np.ndarray
    attack_kind: Optional[str] = None
    device_id: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.x.ndim != 2 or self.x.shape[0] < 1:
            raise ParameterError(f"x must be a non-empty T x F matrix, got {self.x.shape}")
        if self.labels.shape != (self.x.shape[0],):
            raise ParameterError("labels length must equal T")
        if not np.all(np.isfinite(self.x)):
            raise ParameterError("features must be finite")

    @property
    def T(self) -> int:
        return self.x.shape[0]

    @property
    def F(self) -> int:
        return self.x.shape[1]

    def copy(self) -> "LabeledSequence":
        return LabeledSequence(self.x.copy(), self.labels.copy(), self.attack_kind, self.device_id)


@dataclass(frozen=True)
class TrafficProfile:
    name: str
    means: tuple
    loadings: tuple
    period: float
    amplitude: float
    ar_coef: float
    ar_sigma: float
    noise_sigma: float = 0.03
    latency_factor: float = 1.0

    def _cycle(self, values, F):
        return np.array([values[f % len(values)] for f in range(F)], dtype=np.float64)

    def feature_means(self, F: int) -> np.ndarray:
        return self._cycle(self.means, F)

    def feature_loadings(self, F: int) -> np.ndarray:
        return self._cycle(self.loadings, F)

    @property
    def ar_stationary_sigma(self) -> float:
        return self.ar_sigma / math.sqrt(1.0 - self.ar_coef ** 2)


PROFILES = {
    "thermostat": TrafficProfile(
        "thermostat", means=(0.6, 0.5, 0.8, 0.3, 0.2, 0.1),
        loadings=(0.30, 0.28, 0.06, 0.12, 0.08, 0.02),
        period=32.0, amplitude=1.0, ar_coef=0.8, ar_sigma=0.15, latency_factor=1.6,
    ),
    "camera": TrafficProfile(
        "camera", means=(1.2, 1.4, 1.1, 0.3, 0.2, 0.1),
        loadings=(0.40, 0.45, 0.08, 0.10, 0.06, 0.02),
        period=16.0, amplitude=1.0, ar_coef=0.7, ar_sigma=0.2, latency_factor=0.8,
    ),
    "sensor": TrafficProfile(
        "sensor", means=(0.4, 0.3, 0.5, 0.2, 0.2, 0.1),
        loadings=(0.20, 0.18, 0.05, 0.08, 0.06, 0.02),
        period=24.0, amplitude=1.0, ar_coef=0.85, ar_sigma=0.1, latency_factor=2.0,
    ),
}
PROFILE_ORDER = ("thermostat", "camera", "sensor")


def profile_for_device(device_id: int) -> TrafficProfile:
    return PROFILES[PROFILE_ORDER[(device_id - 1) % len(PROFILE_ORDER)]]


def _profile(profile) -> TrafficProfile:
    if isinstance(profile, TrafficProfile):
        return profile
    try:
        return PROFILES[profile]
    except KeyError:
        raise ParameterError(f"unknown traffic profile {profile!r}") from None


def generate_trace(profile, T: int, F: int, stream: RandomStream, device_id: int = 0) -> LabeledSequence:
    """Benign trace: ``means + loadings * activity + noise``, all labels 0."""
    if T < 1 or F < 1:
        raise ParameterError("T and F must be >= 1")
    prof = _profile(profile)
    phase = stream.uniform(0.0, 2 * math.pi)
    t = np.arange(T, dtype=np.float64)
    activity = prof.amplitude * np.sin(2 * math.pi * t / prof.period + phase)

    eps = stream.normal(0.0, prof.ar_sigma, size=T)
    ar = np.empty(T)
    ar[0] = stream.normal(0.0, prof.ar_stationary_sigma)
    for k in range(1, T):
        ar[k] = prof.ar_coef * ar[k - 1] + eps[k]
    activity = activity + ar

    noise = stream.normal(0.0, prof.noise_sigma, size=(T, F))
    x = prof.feature_means(F) + np.outer(activity, prof.feature_loadings(F)) + noise
    return LabeledSequence(x, np.zeros(T, dtype=np.uint8), None, device_id)


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    start: int
    end: int
    intensity: float

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ParameterError(f"unknown attack kind {self.kind!r}")
        if not self.intensity > 0:
            raise ParameterError("attack intensity must be positive")


DEFAULT_INTENSITY = {"ddos": 4.0, "port_scan": 1.0, "malware_propagation": 1.0}
PORT_SCAN_SPIKE_LEN = 2


def inject_attack(trace: LabeledSequence, spec: AttackSpec, stream: RandomStream) -> LabeledSequence:
    """Return a copy of ``trace`` with ``spec`` injected on ``[start, end)``."""
    if not (0 <= spec.start <= spec.end <= trace.T):
        raise ParameterError(f"attack window [{spec.start}, {spec.end}) outside [0, {trace.T})")
    out = trace.copy()
    L = spec.end - spec.start
    if L == 0:
        return out
    x = out.x
    F = out.F
    win = slice(spec.start, spec.end)

    if spec.kind == "ddos":
        cols = [f for f in VOLUME_FEATURES if f < F]
        x[win, cols] *= spec.intensity
    elif spec.kind == "port_scan":
        for k in range(L):
            x[spec.start + k, (k // PORT_SCAN_SPIKE_LEN) % F] += spec.intensity
    else:
        order = stream.permutation(F)
        weights = stream.uniform(0.6, 1.0, size=F)
        common = 1.0 + 0.1 * stream.normal(size=L)
        for k in range(L):
            frac = (k + 1) / L
            n_aff = max(1, math.ceil(frac * F))
            cols = order[:n_aff]
            x[spec.start + k, cols] += spec.intensity * (0.4 + 0.6 * frac) * common[k] * weights[cols]

    out.labels[win] = 1
    out.attack_kind = spec.kind
    return out


def windowize(x: np.ndarray, labels: np.ndarray, T: int, stride: int, device_id: int = 0) -> list[LabeledSequence]:
    """Sliding windows of length ``T``; a trailing partial window is dropped."""
    if T < 1 or stride < 1:
        raise ParameterError("T and stride must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.uint8)
    out = []
    for s in range(0, x.shape[0] - T + 1, stride):
        out.append(LabeledSequence(x[s:s + T].copy(), labels[s:s + T].copy(), None, device_id))
    return out


def read_flow_csv(path, feature_columns: Sequence[str], label_column: str,
                  benign_labels: Sequence[str] = ("benign",)):
    """Parse a flow CSV into a raw ``(rows, F)`` matrix and 0/1 label vector."""
    path = Path(path)
    benign = {b.strip().lower() for b in benign_labels}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row expected") from None
        missing = [c for c in (*feature_columns, label_column) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        fidx = [header.index(c) for c in feature_columns]
        lidx = header.index(label_column)
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(f"expected {len(header)} cells, got {len(row)}", line)
            vals = []
            for j in fidx:
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(f"column {header[j]!r}: non-numeric value {cell!r}", line) from None
                if not math.isfinite(v):
                    raise CsvParseError(f"column {header[j]!r}: non-finite value {cell!r}", line)
                vals.append(v)
            rows.append(vals)
            labels.append(0 if row[lidx].strip().lower() in benign else 1)
    x = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_columns))
    return x, np.array(labels, dtype=np.uint8)


@dataclass(frozen=True)
class Normalization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def fit_normalization(x: np.ndarray) -> Normalization:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Normalization(mean, std)


def load_flow_csv(path, feature_columns: Sequence[str], label_column: str, T: int,
                  stride: Optional[int] = None, normalization: Optional[Normalization] = None,
                  train_fraction: float = 0.6, benign_labels: Sequence[str] = ("benign",),
                  device_id: int = 0) -> list[LabeledSequence]:
    """Read, z-score and window a flow CSV.

    Normalization statistics come from ``normalization`` when given, else from
    the leading ``train_fraction`` of rows (at least one row).
    """
    x, y = read_flow_csv(path, feature_columns, label_column, benign_labels)
    if x.shape[0] == 0:
        return []
    if normalization is None:
        n_train = max(1, int(train_fraction * x.shape[0]))
        normalization = fit_normalization(x[:n_train])
    return windowize(normalization.apply(x), y, T, stride or T, device_id)


@dataclass
class DataConfig:
    seq_len: int = 64
    n_features: int = 6
    windows_per_device: int = 20
    attack_min_frac: float = 0.25
    attack_max_frac: float = 0.5
    intensity: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITY))


@dataclass
class DeviceData:
    """Per-device 60/20/20 split. ``test_attacks`` maps kind -> attacked test windows."""

    train: list
    val: list
    test_benign: list
    test_attacks: dict

    def test_set(self, kind: Optional[str] = None) -> list:
        if kind is None:
            return self.test_benign + [s for k in ATTACK_KINDS for s in self.test_attacks[k]]
        return self.test_benign + self.test_attacks[kind]


def split_counts(n: int) -> tuple[int, int, int]:
    n_train = int(round(0.6 * n))
    n_val = int(round(0.2 * n))
    return n_train, n_val, n - n_train - n_val


def make_device_data(device_id: int, profile, cfg: DataConfig, stream: RandomStream) -> DeviceData:
    T, F = cfg.seq_len, cfg.n_features
    trace = generate_trace(profile, T * cfg.windows_per_device, F, stream.child("trace"), device_id)
    windows = windowize(trace.x, trace.labels, T, T, device_id)
    n_train, n_val, _ = split_counts(len(windows))
    train = windows[:n_train]
    val = windows[n_train:n_train + n_val]
    test = windows[n_train + n_val:]
    attacks = {}
    for kind in ATTACK_KINDS:
        s = stream.child("attack", ATTACK_KINDS.index(kind))
        attacked = []
        for w in test:
            lo = max(1, int(cfg.attack_min_frac * T))
            hi = max(lo, int(cfg.attack_max_frac * T))
            length = int(s.integers(lo, hi + 1))
            start = int(s.integers(0, T - length + 1))
            spec = AttackSpec(kind, start, start + length, cfg.intensity[kind])
            attacked.append(inject_attack(w, spec, s))
        attacks[kind] = attacked
    return DeviceData(train, val, test, attacks)
