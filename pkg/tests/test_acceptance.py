"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts appear in the
"acceptance criteria" section of the terminal summary.
"""
import os
import time

import numpy as np

from fedsim import metrics, verify
from fedsim.cli import execute_run, run_cli
from fedsim.config import FedConfig, parse_config
from fedsim.engine import Simulation

SEEDS = (0, 1, 2)


def _timed(fn):
    tic = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - tic


def test_1_algebraic_suite(acceptance):
    (ok, detail), secs = _timed(lambda: verify.check_algebra(n_draws=1000))
    acceptance(1, "algebraic suite", ok and secs < 1.0, detail, secs)


def test_2_closed_form_reference(acceptance):
    (ok, detail), secs = _timed(lambda: verify.check_closed_form(rounds=100, dim=10, alphas=(0.01, 0.25, 0.75)))
    acceptance(2, "closed form vs recursion", ok and secs < 1.0, detail, secs)


def test_3_drag_c0_reduces_to_fedavg(acceptance):
    (ok, detail), secs = _timed(lambda: verify.check_fedavg_reduction(rounds=50))
    acceptance(3, "DRAG c=0 equals FedAvg", ok and secs < 5.0, detail, secs)


def test_4_weiszfeld_grid_oracle(acceptance):
    (ok, detail), secs = _timed(lambda: verify.check_weiszfeld(n_sets=5, n_points=7))
    acceptance(4, "Weiszfeld vs grid oracle", ok and secs < 5.0, detail, secs)


def test_5_gradient_checks(acceptance):
    (ok, detail), secs = _timed(lambda: verify.check_gradients(n_points=20))
    acceptance(5, "finite-difference gradients", ok and secs < 10.0, detail, secs)


def _drift_cfg(aggregator, seed):
    return FedConfig(aggregator=aggregator, objective="logistic", workers=40, selected=10, local_steps=5,
                     batch_size=10, stepsize=0.01, beta=0.1, rounds=300, alpha=0.25, c=0.25,
                     eval_every=300).with_seed(seed)


def _final(cfg):
    with Simulation(cfg) as sim:
        initial = sim.evaluate()
        recs = sim.run()
    return initial, recs[-1]


def test_6_drift_mitigation(acceptance):
    def run():
        out = {}
        for agg in ("drag", "fedavg"):
            finals = [_final(_drift_cfg(agg, s))[1] for s in SEEDS]
            out[agg] = (np.mean([r.test_accuracy for r in finals]), np.mean([r.train_loss for r in finals]))
        return out

    res, secs = _timed(run)
    (acc_d, loss_d), (acc_f, loss_f) = res["drag"], res["fedavg"]
    ok = acc_d >= acc_f and loss_d <= loss_f and secs < 120
    detail = (f"mean test acc DRAG {acc_d:.4f} vs FedAvg {acc_f:.4f}; "
              f"mean train loss DRAG {loss_d:.4f} vs FedAvg {loss_f:.4f}")
    acceptance(6, "drift mitigation", ok, detail, secs)


def _byz_cfg(aggregator, seed):
    return _drift_cfg(aggregator, seed).replace(attack="sign_flip", ratio=0.6, c_t=0.5)


def test_7_byzantine_resilience(acceptance):
    def run():
        out = {}
        for agg in ("br_drag", "fedavg", "rfa", "raga"):
            out[agg] = [_final(_byz_cfg(agg, s)) for s in SEEDS]
        return out

    res, secs = _timed(run)
    br = [(i["benign_train_loss"], f.benign_train_loss) for i, f in res["br_drag"]]
    fedavg = [f.benign_train_loss for _, f in res["fedavg"]]
    below_init = all(final < init for init, final in br)
    below_fedavg = all(b[1] < f for b, f in zip(br, fedavg))
    br_mean = np.mean([b[1] for b in br])
    geo = {k: np.mean([f.benign_train_loss for _, f in res[k]]) for k in ("rfa", "raga")}
    directional = all(v > br_mean for v in geo.values())
    ok = below_init and below_fedavg and directional and secs < 180
    detail = (f"BR-DRAG benign loss {[round(b[1], 4) for b in br]} from {[round(b[0], 4) for b in br]}; "
              f"FedAvg {[round(v, 4) for v in fedavg]}; RFA {geo['rfa']:.4f} RAGA {geo['raga']:.4f} (means)")
    acceptance(7, "Byzantine resilience at 60% sign flip", ok, detail, secs)


def test_8_determinism_serial_vs_parallel(acceptance, tmp_path, monkeypatch):
    monkeypatch.delenv("FEDSIM_THREADS", raising=False)
    max_threads = max(2, os.cpu_count() or 2)

    def run():
        same = []
        for name, changes in (("paper_defaults", {}),
                              ("brdrag_noise30", {}),
                              ("paper_defaults", {"aggregator": "rfa", "attack": "sign_flip", "ratio": 0.3})):
            cfg = parse_config(name).replace(rounds=100, **changes)
            first = execute_run(cfg.replace(threads=1), tmp_path / f"{name}_{len(same)}_serial")
            manifest = first / metrics.MANIFEST_NAME
            second = tmp_path / f"{name}_{len(same)}_parallel"
            rc = run_cli(["run", "--config", str(manifest), "--threads", str(max_threads), "--out", str(second)])
            same.append(rc == 0 and (first / metrics.METRICS_NAME).read_bytes()
                        == (second / metrics.METRICS_NAME).read_bytes())
        return same

    same, secs = _timed(run)
    acceptance(8, "serial vs parallel byte-identical", all(same) and secs < 120,
               f"{sum(same)}/{len(same)} manifests identical at 1 vs {max_threads} threads", secs)


def test_9_attack_stream_isolation(acceptance, tmp_path):
    def run():
        same = []
        for attack in ("noise", "sign_flip", "label_flip"):
            base = parse_config("paper_defaults").replace(attack=attack, ratio=0.0, rounds=100)
            blobs = []
            for seed in (0, 12345):
                out = execute_run(base.replace(seed_attack=seed), tmp_path / f"{attack}_{seed}")
                blobs.append((out / metrics.METRICS_NAME).read_bytes())
            same.append(blobs[0] == blobs[1])
        return same

    same, secs = _timed(run)
    acceptance(9, "attack seed isolation at ratio 0", all(same) and secs < 60,
               f"{sum(same)}/{len(same)} attack kinds byte-identical under attack-seed toggle", secs)
