"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records PASS/FAIL with a short detail line; the terminal summary
(see conftest.py) prints one line per criterion.
"""

import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from fliot import paillier as he
from fliot import sharing as ss
from fliot.cli import main as cli_main
from fliot.compression import (
    CompressionConfig, compressed_wire_size, dequantize, prune, quantize, raw_wire_size, serialize_compressed,
    serialize_raw,
)
from fliot.core import FixedPointCodec, RandomStream
from fliot.metrics import read_table
from fliot.privacy import DpConfig
from fliot.rnn import RnnParams, TrainingConfig, adaptive_lr, bptt_gradients, init_params, loss
from fliot.sim import ExperimentConfig, build_fleet, gradient_rms, initial_params, run_experiment
from fliot.traffic import ATTACK_KINDS, LabeledSequence

ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CFG = ROOT / "configs" / "default.cfg"
RESULTS: dict = {}


@contextmanager
def criterion(number: int, title: str):
    start = time.perf_counter()
    entry = {"title": title, "detail": "", "passed": False}
    RESULTS[number] = entry
    try:
        yield entry
        entry["passed"] = True
    finally:
        entry["seconds"] = time.perf_counter() - start


# --- shared runs -------------------------------------------------------------

@pytest.fixture(scope="module")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="module")
def fleet(default_cfg):
    return build_fleet(default_cfg)


@pytest.fixture(scope="module")
def default_run(default_cfg, fleet):
    t = time.perf_counter()
    res = run_experiment(default_cfg, devices=fleet)
    res.wall_seconds = time.perf_counter() - t
    return res


# --- 1 -----------------------------------------------------------------------

def trial_sizes(n_trials, seed):
    """Log-uniform model dimensions in [1, 2000] and device counts in [1, 50].

    Latin-hypercube stratified: each axis hits every 1/n_trials quantile once.
    """
    r = np.random.default_rng(seed)

    def strata():
        return (r.permutation(n_trials) + r.random(n_trials)) / n_trials

    dims = np.exp(strata() * math.log(2000)).round().astype(int).clip(1, 2000)
    ns = np.exp(strata() * math.log(50)).round().astype(int).clip(1, 50)
    # pin the bounds of both ranges once each
    dims[:2], ns[:2] = (2000, 1), (2, 50)
    return list(zip(dims.tolist(), ns.tolist()))


def test_c1_aggregation_oracle_equivalence():
    with criterion(1, "HE and SMPC aggregation == plaintext FedAvg within 2*2^-16") as c:
        codec = FixedPointCodec(16, 8.0)
        tol = 2 * 2.0**-16
        t0 = time.perf_counter()
        keys = he.keygen(512, RandomStream(1, 1))
        stream = RandomStream(1, 2)
        data_rng = np.random.default_rng(3)
        worst_he = worst_ss = 0.0
        sizes = trial_sizes(100, seed=4)
        for dim, n in sizes:
            raw = data_rng.uniform(-codec.bound, codec.bound, size=(n, dim))
            plain = raw.mean(axis=0)
            enc = [he.encrypt_update(keys.public_key, u, codec, stream) for u in raw]
            got_he = he.secure_aggregate(enc, keys.secret_key, codec, n)
            shares = [ss.make_shares(u, 2, ss.DEFAULT_PRIME, codec, stream) for u in raw]
            subtotals = ss.aggregate_shares(ss.distribute(shares), ss.DEFAULT_PRIME)
            got_ss = ss.reconstruct(subtotals, ss.DEFAULT_PRIME, codec, n)
            worst_he = max(worst_he, float(np.max(np.abs(got_he - plain))))
            worst_ss = max(worst_ss, float(np.max(np.abs(got_ss - plain))))
        elapsed = time.perf_counter() - t0
        c["detail"] = (f"100 trials, {sum(d * n for d, n in sizes)} encryptions; max err HE {worst_he:.2e} "
                       f"SMPC {worst_ss:.2e} (tol {tol:.2e}); {elapsed:.1f}s (limit 120s)")
        assert worst_he <= tol and worst_ss <= tol
        assert elapsed < 120


# --- 2 -----------------------------------------------------------------------

def test_c2_crypto_correctness():
    with criterion(2, "Paillier round-trips, homomorphic sums and share reconstruction exact") as c:
        t0 = time.perf_counter()
        keys = he.keygen(512, RandomStream(2, 1))
        pk, sk = keys.public_key, keys.secret_key
        s = RandomStream(2, 2)
        ms = [s.randbelow(pk.n) for _ in range(1000)]
        cts = [he.encrypt(pk, m, s) for m in ms]
        assert all(he.decrypt(sk, ct) == m for ct, m in zip(cts, ms))
        acc = cts[0]
        for ct in cts[1:]:
            acc = he.hom_add(acc, ct)
        assert he.decrypt(sk, acc) == sum(ms) % pk.n
        p = ss.DEFAULT_PRIME
        codec = FixedPointCodec(16, 8.0)
        for trial in range(200):
            u = np.random.default_rng(trial).uniform(-8, 8, size=20)
            sh = ss.make_shares(u, 2 + trial % 4, p, codec, s)
            assert [sum(col) % p for col in zip(*sh.shares)] == codec.encode_offset(u)
        elapsed = time.perf_counter() - t0
        c["detail"] = f"1000 round-trips, 1000-term sum, 200 sharings exact; {elapsed:.1f}s (limit 60s)"
        assert elapsed < 60


# --- 3 -----------------------------------------------------------------------

def test_c3_gradient_check():
    with criterion(3, "BPTT vs central finite differences, rel err < 1e-4") as c:
        worst, n_nets = 0.0, 0
        for seed in range(24):
            r = np.random.default_rng(1000 + seed)
            F, H = int(r.integers(1, 6)), int(r.integers(1, 7))
            act = ("tanh", "relu")[seed % 2]
            supervised = seed % 5 == 0
            O = 1 if supervised else F
            p = init_params(F, H, RandomStream(seed), O, act, scale=0.6)
            if p.size > 200:
                continue
            cfg = TrainingConfig(loss_kind="supervised_cross_entropy" if supervised else "reconstruction_mse")
            data = [LabeledSequence(r.normal(size=(T, F)), r.integers(0, 2, size=T))
                    for T in r.integers(2, 8, size=3)]
            g = bptt_gradients(p, data, cfg).flatten()
            flat, h = p.flatten(), 1e-5
            fd = np.empty_like(flat)
            for k in range(flat.size):
                up, dn = flat.copy(), flat.copy()
                up[k] += h
                dn[k] -= h
                fd[k] = (loss(p.like(up), data, cfg) - loss(p.like(dn), data, cfg)) / (2 * h)
            rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-6)
            worst = max(worst, float(rel.max()))
            n_nets += 1
        c["detail"] = f"{n_nets} nets (<= 200 params), max relative error {worst:.2e}"
        assert n_nets >= 20 and worst < 1e-4


# --- 4 -----------------------------------------------------------------------

def test_c4_convergence(default_run):
    with criterion(4, "default config: loss halves by round 20, 5-round moving average non-increasing") as c:
        losses = np.array([r.global_loss for r in default_run.reports])
        ma = np.convolve(losses, np.ones(5) / 5, mode="valid")
        c["detail"] = (f"round1 {losses[0]:.5f} -> round20 {losses[-1]:.5f} (ratio {losses[-1] / losses[0]:.3f}); "
                       f"max MA increase {float(np.max(np.diff(ma))):.2e}; {default_run.wall_seconds:.0f}s")
        assert len(losses) == 20
        assert losses[-1] < 0.5 * losses[0]
        assert np.all(np.diff(ma) <= 0)
        assert default_run.wall_seconds < 600


# --- 5 -----------------------------------------------------------------------

def test_c5_detection(default_run):
    with criterion(5, "per-attack sequence F1 >= 0.90 and step AUC >= 0.95") as c:
        f1 = {k: default_run.attack_metric(k, "sequence", "f1") for k in ATTACK_KINDS}
        auc = {k: default_run.attack_metric(k, "step", "auc") for k in ATTACK_KINDS}
        c["detail"] = "; ".join(f"{k}: F1 {f1[k]:.3f} AUC {auc[k]:.4f}" for k in ATTACK_KINDS)
        assert all(v >= 0.90 for v in f1.values())
        assert all(v >= 0.95 for v in auc.values())


# --- 6 -----------------------------------------------------------------------

def test_c6_dp_degradation(default_cfg, fleet, default_run):
    with criterion(6, "DP: F1(small sigma) within 3 pts of F1(0); F1 non-increasing over sigma grid +-1 pt") as c:
        scale = gradient_rms(fleet, initial_params(default_cfg), default_cfg)
        grid = [0.0, 0.01 * scale, 5.0 * scale]
        f1 = [default_run.final.detection.f1]
        for sigma in grid[1:]:
            res = run_experiment(default_cfg.with_(dp=DpConfig(sigma), centralized_baseline=False), devices=fleet)
            f1.append(res.final.detection.f1)
        c["detail"] = (f"gradient RMS {scale:.4f}; " +
                       ", ".join(f"sigma {s:.2e}: F1 {v:.4f}" for s, v in zip(grid, f1)))
        assert abs(f1[1] - f1[0]) <= 0.03
        assert all(b <= a + 0.01 for a, b in zip(f1, f1[1:]))


# --- 7 -----------------------------------------------------------------------

def test_c7_communication(default_cfg, default_run):
    with criterion(7, "per-round FL uplink < 0.65 x centralized raw upload; exact wire sizes") as c:
        d = default_run.params.size
        per_round = [r.uplink_bytes for r in default_run.reports]
        raw = default_run.baseline.uplink_bytes
        T, F = default_cfg.data.seq_len, default_cfg.data.n_features
        n_windows = sum(len(dev.data.train) + len(dev.data.val) for dev in build_fleet(default_cfg))
        c["detail"] = (f"uplink/round {per_round[0]} B vs centralized {raw} B "
                       f"(ratio {max(per_round) / raw:.4f})")
        assert max(per_round) < 0.65 * raw
        assert all(u == default_cfg.n_devices * (4 + 8 * d) for u in per_round)
        assert raw == n_windows * (4 + 8 * T * F)
        # wire formulas agree with actual serialisation
        u = np.random.default_rng(0).normal(size=d)
        assert len(serialize_raw(u)) == raw_wire_size(d)
        packed = quantize(prune(u, 0.5), 8)
        assert len(serialize_compressed(packed)) == compressed_wire_size(packed)
        kp = he.keygen(512, RandomStream(7))
        enc = he.encrypt_update(kp.public_key, u, FixedPointCodec(), RandomStream(8))
        assert len(he.serialize_update(enc)) == he.wire_size(d, 512)
        sh = ss.make_shares(u, 2, ss.DEFAULT_PRIME, FixedPointCodec(), RandomStream(9))
        assert len(ss.serialize_share(sh.shares[0])) == ss.share_wire_size(d)


# --- 8 and 10 ----------------------------------------------------------------

COMPRESSED = ["--set", "compression.enabled=true", "--set", "compression.prune_fraction=0.5",
              "--set", "compression.quant_bits=8"]


@pytest.fixture(scope="module")
def compressed_cli_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("accept") / "compressed"
    import contextlib
    import io
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli_main(["simulate", "--config", str(DEFAULT_CFG), "--out", str(out), *COMPRESSED])
    return code, out, buf.getvalue()


def test_c8_energy(compressed_cli_run):
    with criterion(8, "FL-with-compression energy proxy <= 0.80 x centralized; constants printed") as c:
        code, out, text = compressed_cli_run
        assert code == 0
        rows = {r["label"]: r for r in read_table(out / "mode_comparison.csv")}
        fl, central = float(rows["federated"]["energy_proxy"]), float(rows["centralized"]["energy_proxy"])
        c["detail"] = f"federated {fl:.4f} vs centralized {central:.4f} (ratio {fl / central:.3f})"
        assert fl <= 0.80 * central
        assert "alpha=" in text and "beta=" in text and "gamma=" in text
        assert f"federated={fl:.6g}" in text and f"centralized={central:.6g}" in text


def test_c10_determinism(compressed_cli_run, tmp_path):
    with criterion(10, "same seed -> byte-identical CSVs") as c:
        code, first, _ = compressed_cli_run
        import contextlib
        import io
        with contextlib.redirect_stdout(io.StringIO()):
            assert cli_main(["simulate", "--config", str(DEFAULT_CFG), "--out", str(tmp_path), *COMPRESSED]) == 0
        names = sorted(p.name for p in first.glob("*.csv"))
        same = [(first / n).read_bytes() == (tmp_path / n).read_bytes() for n in names]
        c["detail"] = f"{sum(same)}/{len(names)} CSVs identical"
        assert len(names) == 5 and all(same)


# --- 9 -----------------------------------------------------------------------

def test_c9_encryption_overhead(default_cfg, fleet, default_run):
    with criterion(9, "homomorphic per-round latency exceeds plaintext (ratio reported)") as c:
        cfg = default_cfg.with_(aggregation_mode="homomorphic", rounds=2, centralized_baseline=False)
        res = run_experiment(cfg, devices=fleet)
        he_lat = np.mean([r.latency for r in res.reports])
        plain_lat = np.mean([r.latency for r in default_run.reports[:2]])
        c["detail"] = f"plaintext {plain_lat:.3f}s/round, homomorphic {he_lat:.3f}s/round, ratio {he_lat / plain_lat:.2f}"
        assert he_lat > plain_lat


# --- 11 ----------------------------------------------------------------------

def test_c11_lr_and_compression_exactness():
    with criterion(11, "adaptive LR exact; prune/quantize match sort/round oracles on 1000 vectors") as c:
        worst = 0.0
        for t in list(range(1000)) + [10**6]:
            for eta0 in (0.1, 0.5, 1.0, 3.7):
                v = adaptive_lr(eta0, t)
                assert v == eta0 / math.sqrt(t + 1)
                worst = max(worst, abs(v * math.sqrt(t + 1) - eta0) / eta0)
        assert worst <= 2 * np.finfo(float).eps
        r = np.random.default_rng(11)
        for _ in range(1000):
            d = int(r.integers(1, 300))
            w = r.normal(size=d) * r.choice([1e-3, 1.0, 1e3])
            w[r.random(d) < 0.1] = w[0]  # ties
            f = float(r.uniform(0, 0.99))
            bits = int(r.integers(2, 17))
            k = math.floor(f * d)
            drop = sorted(range(d), key=lambda i: (abs(w[i]), i))[:k]
            ref = w.copy()
            ref[drop] = 0.0
            pruned = prune(w, f)
            assert np.array_equal(pruned, ref)
            q = quantize(pruned, bits)
            peak = np.max(np.abs(pruned))
            scale = peak / (2 ** (bits - 1) - 1)
            nz = pruned != 0
            assert q.scale == scale
            assert np.array_equal(q.codes, np.rint(pruned[nz] / scale).astype(np.int64))
            assert np.all(np.abs(dequantize(q) - pruned) <= scale / 2 * (1 + 1e-12))
        c["detail"] = f"max relative LR error {worst:.1e}; 1000 prune/quantize vectors match"
