"""End-to-end acceptance criteria, one PASS/FAIL line each.

Criteria that train on synthetic corpora share one module-scoped run, which
is repeated from scratch for the determinism check. Seeds are fixed here and
were not tuned.
"""

import json
import time

import numpy as np
import pytest

from cadnet.audio import AudioSignal, mel_filterbank, power_spectrum
from cadnet.dataset import featurize_record, load_manifest
from cadnet.evaluation import SplitSpec, auc_oracle, evaluate, make_split, roc_auc
from cadnet.model import mean_loss, recording_inputs
from cadnet.nn import finite_diff_check
from cadnet.synth import ScenarioConfig, generate_corpus
from cadnet.training import TrainConfig, dumps_checkpoint, fit, init_model
from cadnet.vad import detect_segments

from conftest import ACCEPTANCE_LINES, place
from test_audio import naive_power
from test_model import VARIANTS, loss_and_grad, tiny_instance, tiny_model, with_flat
from test_synth import _tree_digest

CORPUS_SEED = 0
SPLIT_SEED = 0
TRAIN_SEED = 0


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- 1: gradients ------------------------------------------------------------------

def test_criterion_1_gradients():
    t0 = time.perf_counter()
    worst = {}
    for variant in VARIANTS:
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            m = tiny_model(variant, seed)
            enroll, segs = tiny_instance(rng)

            def f(w):
                mm = with_flat(m, w)
                loss = mean_loss(enroll, segs, mm)
                if w.dtype != np.float64:
                    return loss, None
                _, g = loss_and_grad(enroll, segs, mm)
                return float(loss), mm.params.flatten_grads(g)

            err = finite_diff_check(f, m.params.flat(), step=1e-6)
            worst[variant] = max(worst.get(variant, 0.0), err)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-6 and elapsed < 120
    detail = ", ".join(f"{v} {e:.1e}" for v, e in worst.items())
    assert record(1, ok, f"max rel err {detail}; {elapsed:.0f} s")


# -- 2: AUC ------------------------------------------------------------------------

def test_criterion_2_auc():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst, tie_trials, mono_ok, worst_comp = 0.0, 0, True, 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 80))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        tied = trial % 5 < 2
        s = rng.integers(0, 5, n).astype(float) if tied else rng.normal(size=n)
        tie_trials += len(np.unique(s)) < n
        a = roc_auc(s, y)
        worst = max(worst, abs(a - auc_oracle(s, y)))
        mono_ok &= roc_auc(3 * s - 2, y) == a and roc_auc(np.exp(s), y) == a
        worst_comp = max(worst_comp, abs(roc_auc(-s, y) - (1 - a)))
    elapsed = time.perf_counter() - t0
    ok = (worst <= 1e-12 and tie_trials >= 300 and mono_ok and worst_comp <= 1e-12
          and elapsed < 60)
    assert record(2, ok, f"oracle diff {worst:.1e}, {tie_trials} tied instances, "
                         f"monotone {'exact' if mono_ok else 'broken'}, "
                         f"complement {worst_comp:.1e}; {elapsed:.1f} s")


# -- 3: DSP ------------------------------------------------------------------------

def test_criterion_3_dsp():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    dft_err = parseval_err = 0.0
    for _ in range(50):
        frame = rng.uniform(-1, 1, 400)
        half = power_spectrum(frame)
        dft_err = max(dft_err, np.max(np.abs(half - naive_power(frame, 512))))
        full = np.concatenate([half, half[1:-1][::-1]])
        parseval_err = max(parseval_err, abs(np.sum(frame**2) - full.sum() / 512))
    fb = mel_filterbank()
    w = fb.weights
    unimodal = all(np.all(np.diff(r[:np.argmax(r) + 1]) >= 0)
                   and np.all(np.diff(r[np.argmax(r):]) <= 0) and r.max() > 0 for r in w)
    fb_ok = (w.shape[0] == 40 and np.all(w >= 0) and unimodal
             and np.all(np.diff(fb.center_freqs_hz) > 0))
    elapsed = time.perf_counter() - t0
    ok = dft_err < 1e-9 and parseval_err < 1e-9 and fb_ok and elapsed < 60
    assert record(3, ok, f"DFT {dft_err:.1e}, Parseval {parseval_err:.1e}, "
                         f"filterbank {'ok' if fb_ok else 'broken'}; {elapsed:.1f} s")


# -- 4 to 8: training runs --------------------------------------------------------------

def _corpus(root, preset, **kw):
    cfg = ScenarioConfig.preset(preset, **{"n_recordings": 50, "duration_sec": 60.0,
                                           "enrollment_sec": 8.0, "teacher_reuse": 0.25,
                                           "seed": CORPUS_SEED, **kw})
    out = root / preset
    records = load_manifest(generate_corpus(cfg, out))
    return out, records, {r.recording_id: featurize_record(r) for r in records}


def _train_eval(records, feats, variant, mode="main", epochs=30):
    spec = SplitSpec(mode, seed=SPLIT_SEED, test_fraction=0.2)
    train, test = make_split(records, spec)
    train_f = [feats[r.recording_id] for r in train]
    config = TrainConfig(variant=variant, epochs=epochs, seed=TRAIN_SEED)
    model = init_model(config, train_f)
    ckpt = fit(model, train_f, config)
    report = evaluate(model, [feats[r.recording_id] for r in test], mode)
    return ckpt, report, len(train), len(test)


def _pooled_bce(model, feats):
    total = n = 0
    for f in feats:
        enroll, segs = recording_inputs(f, model)
        pairs = [(x, s.labels) for x, s in zip(segs, f.segments) if s.n_windows]
        k = sum(x.shape[0] for x, _ in pairs)
        total += mean_loss(enroll, pairs, model) * k
        n += k
    return total / n


def run_all(root):
    """Every training criterion; returns (metrics, artifacts)."""
    metrics, artifacts = {}, {}

    def keep(name, ckpt, report):
        artifacts[name + ".ckpt"] = dumps_checkpoint(ckpt)
        artifacts[name + ".report"] = json.dumps(report.to_json(), indent=1, sort_keys=True)

    t0 = time.perf_counter()
    out, _, feats = _corpus(root, "online", n_recordings=2, duration_sec=30.0,
                            enrollment_sec=6.0)
    artifacts["probe.corpus"] = _tree_digest(out)
    two = list(feats.values())
    config = TrainConfig(variant="gru", epochs=200, seed=TRAIN_SEED)
    model = init_model(config, two)
    ckpt = fit(model, two, config)
    artifacts["probe.ckpt"] = dumps_checkpoint(ckpt)
    metrics[4] = {"bce": _pooled_bce(model, two), "time": time.perf_counter() - t0}

    t0 = time.perf_counter()
    out, records, feats = _corpus(root, "online")
    artifacts["online.corpus"] = _tree_digest(out)
    aucs = {}
    for variant in VARIANTS:
        ckpt, report, n_train, n_test = _train_eval(records, feats, variant)
        keep(f"online.{variant}", ckpt, report)
        aucs[variant] = report.auc
    metrics[5] = {"auc": aucs, "split": (n_train, n_test), "time": time.perf_counter() - t0}

    t0 = time.perf_counter()
    out, records, feats = _corpus(root, "offline")
    artifacts["offline.corpus"] = _tree_digest(out)
    ckpt, report, _, _ = _train_eval(records, feats, "gru")
    keep("offline.gru", ckpt, report)
    metrics[6] = {"online": aucs["gru"], "offline": report.auc,
                  "time": time.perf_counter() - t0 + metrics[5]["time"] / len(VARIANTS)}

    t0 = time.perf_counter()
    out, records, feats = _corpus(root, "hard")
    artifacts["hard.corpus"] = _tree_digest(out)
    res = {}
    for mode in ("main", "generalization"):
        ckpt, report, n_train, n_test = _train_eval(records, feats, "gru", mode)
        keep(f"hard.{mode}", ckpt, report)
        res[mode] = (report.auc, n_train, n_test)
    metrics[7] = {**res, "time": time.perf_counter() - t0}
    return metrics, artifacts


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    first = run_all(tmp_path_factory.mktemp("accept_a"))
    t0 = time.perf_counter()
    second = run_all(tmp_path_factory.mktemp("accept_b"))
    return first, second, time.perf_counter() - t0


def test_criterion_4_overfit(runs):
    m = runs[0][0][4]
    ok = m["bce"] < 0.05 and m["time"] < 180
    assert record(4, ok, f"gru on 2 recordings, BCE {m['bce']:.4f} after 200 epochs; "
                         f"{m['time']:.0f} s")


def test_criterion_5_average_worst(runs):
    m = runs[0][0][5]
    auc = m["auc"]
    margins_ok = all(auc[v] >= auc["average"] + 0.02 for v in VARIANTS if v != "average")
    ok = margins_ok and auc["gru"] >= 0.95 and m["time"] < 600
    detail = ", ".join(f"{v} {a:.4f}" for v, a in auc.items())
    assert record(5, ok, f"{m['split'][0]}/{m['split'][1]} split, {detail}; "
                         f"{m['time']:.0f} s")


def test_criterion_6_online_beats_offline(runs):
    m = runs[0][0][6]
    ok = m["online"] > m["offline"] and m["offline"] >= 0.80 and m["time"] < 600
    assert record(6, ok, f"gru online {m['online']:.4f} vs offline {m['offline']:.4f}; "
                         f"{m['time']:.0f} s")


def test_criterion_7_unseen_teachers(runs):
    m = runs[0][0][7]
    (main_auc, *_), (gen_auc, n_train, n_test) = m["main"], m["generalization"]
    ok = abs(gen_auc - main_auc) <= 0.05 and m["time"] < 600
    assert record(7, ok, f"hard preset, main {main_auc:.4f} vs teacher-disjoint "
                         f"{gen_auc:.4f} ({n_train}/{n_test}); {m['time']:.0f} s")


def test_criterion_8_determinism(runs):
    (_, a), (_, b), elapsed = runs
    differing = sorted(k for k in a if a[k] != b[k])
    ok = set(a) == set(b) and not differing
    assert record(8, ok, f"{len(a)} artifacts rerun in {elapsed:.0f} s, "
                         f"{len(differing)} differ {differing}")


# -- 9: VAD ------------------------------------------------------------------------

def test_criterion_9_vad():
    t0 = time.perf_counter()
    checks = {}
    checks["silence"] = detect_segments(AudioSignal(np.zeros(48000))) == []
    errs = []
    for bursts in ([(0.5, 1.0)], [(0.3, 0.8), (1.4, 2.0)], [(0.25, 0.75), (1.6, 2.9)]):
        segs = detect_segments(place(3.5, bursts))
        if len(segs) != len(bursts):
            errs.append(np.inf)
            continue
        for s, (lo, hi) in zip(segs, bursts):
            errs += [abs(s.start_sec - lo), abs(s.end_sec - hi)]
    checks["boundaries"] = max(errs) <= 0.030
    checks["merge"] = len(detect_segments(place(2.0, [(0.4, 0.9), (1.0, 1.5)]))) == 1
    checks["gap kept"] = len(detect_segments(place(2.5, [(0.3, 0.8), (1.4, 2.0)]))) == 2
    checks["short dropped"] = detect_segments(place(1.5, [(0.6, 0.7)])) == []
    checks["merge then min"] = len(detect_segments(place(1.5, [(0.5, 0.6), (0.68, 0.78)]))) == 1
    elapsed = time.perf_counter() - t0
    ok = all(checks.values()) and elapsed < 60
    failed = [k for k, v in checks.items() if not v]
    assert record(9, ok, f"max boundary error {max(errs) * 1000:.1f} ms, "
                         f"failed {failed or 'none'}; {elapsed:.1f} s")
