"""Federated round protocol, device fleet and cost accounting.

A round: sample participants, each participant trains locally from the
current global model and protects its update (plaintext, Paillier or
additive shares, optionally compressed), the aggregation layer averages the
updates, and the new global model is broadcast. Bytes, simulated latency and
the energy proxy are derived analytically from the wire formats and a
declared :class:`CostModel`, never from wall-clock time, so reports are
bit-reproducible.

Updates travel as deltas from the broadcast global model. Device work is
independent per device (own data, own streams derived from the master seed),
so running devices on a thread pool gives identical results to running them
sequentially.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import compression as comp
from . import paillier, sharing
from .compression import CompressedUpdate, CompressionConfig
from .core import FixedPointCodec, RandomStream, derive_stream_id
from .errors import AggregationError, FliotError, ParameterError
from .metrics import ConfusionCounts, EnergyModel, auc_score, confusion_metrics, energy_estimate, pr_curve, roc_auc
from .privacy import DpConfig
from .rnn import (
    AnomalyThreshold, RnnParams, TrainingConfig, calibrate_threshold, init_params, local_train, loss,
    loss_and_gradients, step_errors, train_flops,
)
from .traffic import ATTACK_KINDS, DataConfig, DeviceData, TrafficProfile, make_device_data, profile_for_device

logger = logging.getLogger(__name__)

AGGREGATION_MODES = ("plaintext", "homomorphic", "secret_shared")


@dataclass(frozen=True)
class CostModel:
    """Per-unit latency (seconds) and energy constants.

    Device-side compute latency is scaled by the device profile's
    ``latency_factor``; server-side compute runs ``server_speedup`` times
    faster than a reference device.
    """

    latency_per_byte: float = 8e-6
    latency_per_message: float = 0.02
    latency_per_flop: float = 1e-9
    latency_per_bigint_mult: float = 2e-6
    server_speedup: float = 20.0
    energy: EnergyModel = field(default_factory=EnergyModel)


@dataclass
class ExperimentConfig:
    n_devices: int = 50
    rounds: int = 20
    participation_fraction: float = 1.0
    aggregation_mode: str = "plaintext"
    seed: int = 2024
    dp: Optional[DpConfig] = None
    compression: CompressionConfig = field(default_factory=CompressionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    hidden_size: int = 4
    activation: str = "tanh"
    key_bits: int = 512
    scale_bits: int = 16
    range_bound: float = 8.0
    n_aggregators: int = 2
    smpc_prime: int = sharing.DEFAULT_PRIME
    threshold_percentile: float = 99.0
    cost: CostModel = field(default_factory=CostModel)
    centralized_baseline: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_devices < 1:
            raise ParameterError("n_devices must be >= 1")
        if self.rounds < 1:
            raise ParameterError("rounds must be >= 1")
        if not 0 < self.participation_fraction <= 1:
            raise ParameterError("participation_fraction must lie in (0, 1]")
        if self.aggregation_mode not in AGGREGATION_MODES:
            raise ParameterError(f"aggregation_mode must be one of {AGGREGATION_MODES}")
        if self.hidden_size < 1:
            raise ParameterError("hidden_size must be >= 1")
        if self.n_aggregators < 2:
            raise ParameterError("n_aggregators must be >= 2")
        if not 0 < self.threshold_percentile <= 100:
            raise ParameterError("threshold_percentile must lie in (0, 100]")
        if self.key_bits < paillier.MIN_KEY_BITS:
            raise ParameterError(f"key_bits must be >= {paillier.MIN_KEY_BITS}")
        codec = self.codec
        # overflow safety is checked against the smallest possible modulus
        codec.check_capacity(1 << (self.key_bits - 1), self.n_devices)
        codec.check_capacity(self.smpc_prime, self.n_devices)

    @property
    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.scale_bits, self.range_bound)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


@dataclass
class ModelUpdate:
    """Flat real-valued update (delta from the global model) leaving one device."""

    values: np.ndarray
    device_id: int


Payload = Union[ModelUpdate, CompressedUpdate, paillier.EncryptedUpdate, sharing.ShareSet]


@dataclass
class DeviceState:
    device_id: int
    data: DeviceData
    profile: TrafficProfile
    seed: int
    params: Optional[RnnParams] = None

    def stream(self, role: str, round_index: int) -> RandomStream:
        return RandomStream(self.seed, derive_stream_id(role, self.device_id, round_index))

    def train(self, global_params: RnnParams, cfg: ExperimentConfig, round_index: int):
        res = local_train(global_params, self.data.train, cfg.training, cfg.dp, self.stream("train", round_index))
        self.params = res.params
        return res

    def train_loss(self, params: RnnParams, cfg: ExperimentConfig) -> float:
        return loss(params, self.data.train, cfg.training)

    def scores(self, params: RnnParams) -> dict:
        """Reconstruction errors on local validation/test windows (scores only)."""
        val = step_errors(params, self.data.val)
        test = {"benign": step_errors(params, self.data.test_benign)}
        for kind in ATTACK_KINDS:
            test[kind] = step_errors(params, self.data.test_attacks[kind])
        labels = {"benign": [s.labels for s in self.data.test_benign]}
        for kind in ATTACK_KINDS:
            labels[kind] = [s.labels for s in self.data.test_attacks[kind]]
        return {"val": val, "test": test, "labels": labels}

    def raw_upload_bytes(self) -> int:
        """Bytes to ship this device's training and validation windows raw."""
        return sum(raw_window_bytes(s.T, s.F) for s in self.data.train + self.data.val)


def raw_window_bytes(T: int, F: int) -> int:
    return comp.RAW_HEADER_BYTES + 8 * T * F


def build_fleet(cfg: ExperimentConfig) -> list[DeviceState]:
    devices = []
    for i in range(1, cfg.n_devices + 1):
        prof = profile_for_device(i)
        data = make_device_data(i, prof, cfg.data, RandomStream(cfg.seed, derive_stream_id("data", i)))
        devices.append(DeviceState(i, data, prof, cfg.seed))
    return devices


def initial_params(cfg: ExperimentConfig) -> RnnParams:
    out_dim = 1 if cfg.training.loss_kind == "supervised_cross_entropy" else cfg.data.n_features
    return init_params(cfg.data.n_features, cfg.hidden_size, RandomStream(cfg.seed, derive_stream_id("init", 0)),
                       out_dim=out_dim, activation=cfg.activation)


def gradient_rms(devices: list[DeviceState], params: RnnParams, cfg: ExperimentConfig) -> float:
    """RMS coordinate of one full-data gradient per device at ``params``.

    A reference scale for DP noise: sigma is quoted as a multiple of it.
    """
    grads = [loss_and_gradients(params, d.data.train, cfg.training)[1].flatten() for d in devices]
    return float(np.sqrt(np.mean(np.square(np.concatenate(grads)))))


def select_participants(N: int, fraction: float, round_index: int, seed: int) -> list[int]:
    """``ceil(fraction * N)`` distinct device ids from ``1..N``, sorted."""
    if not 0 < fraction <= 1:
        raise ParameterError("fraction must lie in (0, 1]")
    k = math.ceil(fraction * N)
    if k >= N:
        return list(range(1, N + 1))
    s = RandomStream(seed, derive_stream_id("select", round_index))
    return sorted(int(i) + 1 for i in s.choice(N, k))


# --- aggregation layer ------------------------------------------------------
# Aggregators only ever receive payloads: ModelUpdate, CompressedUpdate,
# EncryptedUpdate or ShareSet. They return the average update.

class PlaintextAggregator:
    mode = "plaintext"

    def aggregate(self, payloads: list) -> np.ndarray:
        vecs = []
        for p in payloads:
            if isinstance(p, CompressedUpdate):
                vecs.append(comp.dequantize(p))
            elif isinstance(p, ModelUpdate):
                vecs.append(p.values)
            else:
                raise AggregationError(f"plaintext aggregator cannot accept {type(p).__name__}")
        if len({v.shape for v in vecs}) != 1:
            raise AggregationError("update dimensions differ")
        return np.sum(vecs, axis=0) / len(vecs)

    def server_mults(self, k: int, d: int) -> int:
        return 0


class HomomorphicAggregator:
    mode = "homomorphic"

    def __init__(self, authority: paillier.KeyAuthority):
        self.authority = authority

    def aggregate(self, payloads: list) -> np.ndarray:
        if not all(isinstance(p, paillier.EncryptedUpdate) for p in payloads):
            raise AggregationError("homomorphic aggregator accepts only EncryptedUpdate")
        total = paillier.sum_encrypted(payloads)
        return self.authority.decrypt_average(total, len(payloads))

    def server_mults(self, k: int, d: int) -> int:
        key_bits = self.authority.public_key.key_bits
        return (k - 1) * d + d * paillier.decrypt_mults(key_bits)


class SecretShareAggregator:
    mode = "secret_shared"

    def __init__(self, p: int, codec: FixedPointCodec):
        self.p = p
        self.codec = codec

    def aggregate(self, payloads: list) -> np.ndarray:
        if not all(isinstance(s, sharing.ShareSet) for s in payloads):
            raise AggregationError("share aggregator accepts only ShareSet")
        subtotals = sharing.aggregate_shares(sharing.distribute(payloads), self.p)
        return sharing.reconstruct(subtotals, self.p, self.codec, len(payloads))

    def server_mults(self, k: int, d: int) -> int:
        return 0


@dataclass
class SimEnv:
    """Per-experiment state shared across rounds (keys, aggregator)."""

    cfg: ExperimentConfig
    aggregator: object
    authority: Optional[paillier.KeyAuthority] = None

    @classmethod
    def create(cls, cfg: ExperimentConfig) -> "SimEnv":
        authority = None
        if cfg.aggregation_mode == "homomorphic":
            authority = paillier.KeyAuthority(cfg.key_bits, RandomStream(cfg.seed, derive_stream_id("keygen", 0)))
            cfg.codec.check_capacity(authority.public_key.n, cfg.n_devices)
            agg = HomomorphicAggregator(authority)
        elif cfg.aggregation_mode == "secret_shared":
            agg = SecretShareAggregator(cfg.smpc_prime, cfg.codec)
        else:
            agg = PlaintextAggregator()
        return cls(cfg, agg, authority)


@dataclass
class DeviceOutcome:
    device_id: int
    payload: object
    uplink_bytes: int
    messages: int
    flops: int
    bigint_mults: int
    latency: float
    local_losses: list


def protect(delta: np.ndarray, device: DeviceState, env: SimEnv, round_index: int):
    """Compress and protect an update. Returns (payload, uplink bytes, messages, big-int mults)."""
    cfg = env.cfg
    d = delta.size
    if cfg.compression.enabled:
        packed = comp.compress(delta, cfg.compression)
        if cfg.aggregation_mode == "plaintext":
            return packed, comp.compressed_wire_size(packed), 1, 0
        # pruned coordinates still travel as encoded zeros under encryption/sharing
        delta = comp.dequantize(packed)
    if cfg.aggregation_mode == "plaintext":
        return ModelUpdate(delta, device.device_id), comp.raw_wire_size(d), 1, 0
    if cfg.aggregation_mode == "homomorphic":
        pk = env.authority.public_key
        enc = paillier.encrypt_update(pk, delta, cfg.codec, device.stream("encrypt", round_index))
        mults = d * paillier.encrypt_mults(pk.key_bits)
        return enc, paillier.wire_size(d, pk.key_bits), 1, mults
    shares = sharing.make_shares(delta, cfg.n_aggregators, cfg.smpc_prime, cfg.codec,
                                 device.stream("share", round_index), owner=device.device_id)
    return shares, cfg.n_aggregators * sharing.share_wire_size(d), cfg.n_aggregators, 0


def device_round(device: DeviceState, global_params: RnnParams, env: SimEnv, round_index: int) -> DeviceOutcome:
    cfg = env.cfg
    res = device.train(global_params, cfg, round_index)
    delta = res.params.flatten() - global_params.flatten()
    payload, nbytes, msgs, mults = protect(delta, device, env, round_index)
    p = global_params
    flops = train_flops(p.n_features, p.hidden_size, p.out_dim, res.sample_steps)
    c = cfg.cost
    latency = (
        device.profile.latency_factor * (flops * c.latency_per_flop + mults * c.latency_per_bigint_mult)
        + msgs * c.latency_per_message + nbytes * c.latency_per_byte
    )
    return DeviceOutcome(device.device_id, payload, nbytes, msgs, flops, mults, latency, res.losses)


def account_communication(update_sizes: list[int], mode: str, n_participants: int, model_dim: int,
                          centralized_raw_bytes: Optional[int] = None) -> tuple[int, int]:
    """(uplink, downlink) bytes for one round.

    Uplink is the sum of the protected update sizes; the decrypted global model
    goes back to every participant as a raw float64 vector. For the centralized
    baseline pass ``centralized_raw_bytes`` instead: the raw data upload,
    with nothing sent back.
    """
    if mode not in AGGREGATION_MODES + ("centralized",):
        raise ParameterError(f"unknown mode {mode!r}")
    if mode == "centralized":
        return int(centralized_raw_bytes or 0), 0
    if n_participants == 0:
        return 0, 0
    return int(sum(update_sizes)), n_participants * comp.raw_wire_size(model_dim)


@dataclass
class DetectionSummary:
    threshold: AnomalyThreshold
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float


@dataclass
class RoundReport:
    round: int
    global_loss: float
    detection: DetectionSummary
    uplink_bytes: int
    downlink_bytes: int
    latency: float
    energy: float
    flops: int
    bigint_mults: int
    participants: tuple

    def as_row(self) -> dict:
        d = self.detection
        return {
            "round": self.round, "global_loss": self.global_loss,
            "accuracy": d.accuracy, "precision": d.precision, "recall": d.recall, "f1": d.f1, "auc": d.auc,
            "uplink_bytes": self.uplink_bytes, "downlink_bytes": self.downlink_bytes,
            "latency_s": self.latency, "energy_proxy": self.energy, "flops": self.flops,
            "bigint_mults": self.bigint_mults, "n_participants": len(self.participants),
            "participants": list(self.participants),
        }


def _pool_scores(device_scores: list[dict]):
    val = [e for s in device_scores for e in s["val"]]
    test = {k: [e for s in device_scores for e in s["test"][k]] for k in ("benign",) + ATTACK_KINDS}
    labels = {k: [y for s in device_scores for y in s["labels"][k]] for k in ("benign",) + ATTACK_KINDS}
    return val, test, labels


def _window_threshold(val_errors: list, percentile: float) -> AnomalyThreshold:
    # sequence-level decisions take the max step error, so calibrate on window maxima
    return calibrate_threshold([float(e.max()) for e in val_errors], percentile)


def _detect(errors: list, labels: list, threshold: AnomalyThreshold, unit: str):
    if unit == "sequence":
        scores = np.array([e.max() for e in errors])
        y = np.array([int(l.any()) for l in labels])
    else:
        scores = np.concatenate(errors)
        y = np.concatenate(labels).astype(int)
    c = ConfusionCounts.from_predictions(y, scores > threshold.epsilon)
    m = confusion_metrics(c)
    try:
        auc = auc_score(scores, y)
    except FliotError:
        auc = float("nan")
    return c, m, auc, scores, y


def summarize_detection(device_scores: list[dict], percentile: float) -> DetectionSummary:
    val, test, labels = _pool_scores(device_scores)
    thr = _window_threshold(val, percentile)
    errs = [e for k in ("benign",) + ATTACK_KINDS for e in test[k]]
    labs = [y for k in ("benign",) + ATTACK_KINDS for y in labels[k]]
    _, m, _, _, _ = _detect(errs, labs, thr, "sequence")
    _, _, auc_step, _, _ = _detect(errs, labs, thr, "step")
    return DetectionSummary(thr, m["accuracy"], m["precision"], m["recall"], m["f1"], auc_step)


def per_attack_results(device_scores: list[dict], percentile: float):
    """Per-attack metric rows (sequence and step units) plus step-level ROC/PR curves."""
    val, test, labels = _pool_scores(device_scores)
    thr = _window_threshold(val, percentile)
    rows, roc, pr = [], {}, {}
    for kind in ATTACK_KINDS:
        errs = test["benign"] + test[kind]
        labs = labels["benign"] + labels[kind]
        for unit in ("sequence", "step"):
            c, m, auc, scores, y = _detect(errs, labs, thr, unit)
            rows.append({
                "attack_kind": kind, "unit": unit, "n_units": c.total,
                "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn,
                "accuracy": m["accuracy"], "precision": m["precision"], "recall": m["recall"],
                "f1": m["f1"], "auc": auc,
            })
            if unit == "step":
                roc[kind] = roc_auc(scores, y)[0]
                pr[kind] = pr_curve(scores, y)
    return thr, rows, roc, pr


def _run_devices(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def run_round(devices: list[DeviceState], global_params: RnnParams, cfg: ExperimentConfig, round_index: int,
              env: Optional[SimEnv] = None, workers: int = 1) -> tuple[RnnParams, RoundReport]:
    """One federated round. ``round_index`` starts at 1."""
    env = env or SimEnv.create(cfg)
    ids = select_participants(len(devices), cfg.participation_fraction, round_index, cfg.seed)
    by_id = {d.device_id: d for d in devices}
    participants = [by_id[i] for i in ids]
    outcomes = _run_devices(lambda dev: device_round(dev, global_params, env, round_index), participants, workers)

    d = global_params.size
    try:
        avg_delta = env.aggregator.aggregate([o.payload for o in outcomes])
    except FliotError as exc:
        raise AggregationError(str(exc), round_index) from exc
    new_params = global_params.like(global_params.flatten() + avg_delta)

    up, down = account_communication([o.uplink_bytes for o in outcomes], cfg.aggregation_mode, len(outcomes), d)
    c = cfg.cost
    server_mults = env.aggregator.server_mults(len(outcomes), d)
    latency = (
        max(o.latency for o in outcomes)
        + server_mults * c.latency_per_bigint_mult / c.server_speedup
        + c.latency_per_message + comp.raw_wire_size(d) * c.latency_per_byte
    )
    flops = sum(o.flops for o in outcomes)
    mults = sum(o.bigint_mults for o in outcomes) + server_mults
    energy = energy_estimate(flops, mults, up + down, c.energy)

    global_loss = float(np.mean(_run_devices(lambda dev: dev.train_loss(new_params, cfg), devices, workers)))
    scores = _run_devices(lambda dev: dev.scores(new_params), devices, workers)
    detection = summarize_detection(scores, cfg.threshold_percentile)
    report = RoundReport(round_index, global_loss, detection, up, down, latency, energy, flops, mults, tuple(ids))
    return new_params, report


@dataclass
class BaselineResult:
    """Centralized training on pooled raw data (the comparison row)."""

    params: RnnParams
    threshold: AnomalyThreshold
    losses: list
    detection: DetectionSummary
    uplink_bytes: int
    flops: int
    energy: float
    latency: float


def run_centralized(cfg: ExperimentConfig, devices: list[DeviceState], init: RnnParams) -> BaselineResult:
    """Pool every device's training windows on the server and train one model.

    Training runs ``rounds * local_epochs`` epochs, with the learning-rate
    clock reset every ``local_epochs`` epochs as in the federated setting.
    """
    pooled = [s for d in devices for s in d.data.train]
    params = init
    losses, sample_steps = [], 0
    for r in range(1, cfg.rounds + 1):
        res = local_train(params, pooled, cfg.training, None, RandomStream(cfg.seed, derive_stream_id("central", r)))
        params = res.params
        sample_steps += res.sample_steps
        losses.append(float(np.mean([dev.train_loss(params, cfg) for dev in devices])))
    up, _ = account_communication([], "centralized", 0, params.size,
                                  centralized_raw_bytes=sum(d.raw_upload_bytes() for d in devices))
    flops = train_flops(params.n_features, params.hidden_size, params.out_dim, sample_steps)
    c = cfg.cost
    energy = energy_estimate(flops, 0, up, c.energy)
    per_device_upload = max(c.latency_per_message + d.raw_upload_bytes() * c.latency_per_byte for d in devices)
    latency = per_device_upload + flops * c.latency_per_flop / c.server_speedup
    scores = [dev.scores(params) for dev in devices]
    detection = summarize_detection(scores, cfg.threshold_percentile)
    return BaselineResult(params, detection.threshold, losses, detection, up, flops, energy, latency)


@dataclass
class ExperimentResult:
    cfg: ExperimentConfig
    reports: list
    params: RnnParams
    threshold: AnomalyThreshold
    per_attack: list
    roc: dict
    pr: dict
    baseline: Optional[BaselineResult] = None

    @property
    def total_uplink(self) -> int:
        return sum(r.uplink_bytes for r in self.reports)

    @property
    def total_downlink(self) -> int:
        return sum(r.downlink_bytes for r in self.reports)

    @property
    def total_bytes(self) -> int:
        return self.total_uplink + self.total_downlink

    @property
    def total_energy(self) -> float:
        return float(sum(r.energy for r in self.reports))

    @property
    def total_latency(self) -> float:
        return float(sum(r.latency for r in self.reports))

    @property
    def final(self) -> RoundReport:
        return self.reports[-1]

    def attack_metric(self, kind: str, unit: str, name: str) -> float:
        for row in self.per_attack:
            if row["attack_kind"] == kind and row["unit"] == unit:
                return row[name]
        raise KeyError((kind, unit))


def run_experiment(cfg: ExperimentConfig, workers: int = 1, devices: Optional[list] = None) -> ExperimentResult:
    cfg.validate()
    devices = devices or build_fleet(cfg)
    env = SimEnv.create(cfg)
    init = initial_params(cfg)
    params = init
    reports = []
    for r in range(1, cfg.rounds + 1):
        params, rep = run_round(devices, params, cfg, r, env, workers)
        logger.info("round %d: loss=%.5f f1=%.4f up=%d", r, rep.global_loss, rep.detection.f1, rep.uplink_bytes)
        reports.append(rep)
    scores = _run_devices(lambda dev: dev.scores(params), devices, workers)
    thr, rows, roc, pr = per_attack_results(scores, cfg.threshold_percentile)
    baseline = run_centralized(cfg, devices, init) if cfg.centralized_baseline else None
    return ExperimentResult(cfg, reports, params, thr, rows, roc, pr, baseline)


def comparison_row(label: str, result: ExperimentResult) -> dict:
    cfg = result.cfg
    fin = result.final
    return {
        "label": label, "aggregation_mode": cfg.aggregation_mode,
        "dp_sigma": cfg.dp.sigma if cfg.dp else 0.0,
        "compression": cfg.compression.enabled,
        "prune_fraction": cfg.compression.prune_fraction if cfg.compression.enabled else 0.0,
        "quant_bits": cfg.compression.quant_bits if cfg.compression.enabled else 64,
        "accuracy": fin.detection.accuracy, "precision": fin.detection.precision,
        "recall": fin.detection.recall, "f1": fin.detection.f1, "auc": fin.detection.auc,
        "final_loss": fin.global_loss,
        "uplink_bytes": result.total_uplink, "downlink_bytes": result.total_downlink,
        "total_bytes": result.total_bytes, "uplink_bytes_per_round": result.total_uplink / len(result.reports),
        "energy_proxy": result.total_energy, "latency_s": result.total_latency,
        "latency_per_round_s": result.total_latency / len(result.reports),
    }


def baseline_row(result: ExperimentResult) -> dict:
    b = result.baseline
    return {
        "label": "centralized", "aggregation_mode": "centralized", "dp_sigma": 0.0,
        "compression": False, "prune_fraction": 0.0, "quant_bits": 64,
        "accuracy": b.detection.accuracy, "precision": b.detection.precision, "recall": b.detection.recall,
        "f1": b.detection.f1, "auc": b.detection.auc, "final_loss": b.losses[-1],
        "uplink_bytes": b.uplink_bytes, "downlink_bytes": 0, "total_bytes": b.uplink_bytes,
        "uplink_bytes_per_round": b.uplink_bytes, "energy_proxy": b.energy,
        "latency_s": b.latency, "latency_per_round_s": b.latency,
    }
