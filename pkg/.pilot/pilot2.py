import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from ecgrestore.checkpoint import save_checkpoint
from ecgrestore.cyclegan import CycleGanModel, TrainConfig, fit, restore_segment
from ecgrestore.ecg_data import (
    ArtifactSpec, CutInterval, denormalize, inject_artifacts, normalize,
    pool_matrix, segment_record, synth_ecg,
)
from ecgrestore.peak_eval import detect_pan_tompkins, match_peaks

RATE = float(sys.argv[1]) if len(sys.argv) > 1 else 26.0
ITERS = int(sys.argv[2]) if len(sys.argv) > 2 else 400
TAG = sys.argv[3] if len(sys.argv) > 3 else "half26"

SPEC = dict(snr_db=0.0, noise_kind="impulse", impulse_rate_hz=RATE,
            wander_amplitude_mv=0.1, wander_frequency_hz=0.333)
GEN = (13, 26, 39, 52, 65)
DISC = (17, 34, 51, 68, 85)


def spec_for(rng):
    return ArtifactSpec(cuts=(CutInterval(int(rng.integers(400, 3200)), 400, 0.0),), **SPEC)


def seg_for(i, tag):
    rng = np.random.default_rng([tag, i])
    bpm = float(rng.uniform(60, 120))
    return segment_record(synth_ecg(bpm, 10, patient_id=f"{tag}_{i}"))[0], rng


clean_train = [seg_for(i, 1)[0] for i in range(64)]
corr_train = []
for i in range(64):
    seg, rng = seg_for(i, 2)
    corr_train.append(inject_artifacts(seg, spec_for(rng), seed=2000 + i))
holdout = []
for i in range(16):
    seg, rng = seg_for(i, 3)
    holdout.append((seg, inject_artifacts(seg, spec_for(rng), seed=3000 + i)))


@dataclass
class Pools:
    clean: np.ndarray
    corrupted: np.ndarray


pools = Pools(pool_matrix(clean_train), pool_matrix(corr_train))


def probe(model):
    gains, amps, res_sp, res_ok = [], [], [], []
    tp_o = fp_o = fn_o = tp_r = fp_r = fn_r = 0
    for clean, cor in holdout:
        nrm = normalize(cor)
        y = restore_segment(model, nrm.samples, 1)
        rest = denormalize(replace(nrm, samples=y)).samples
        amps.append(np.max(np.abs(rest)) / np.max(np.abs(clean.samples)))
        p_c = np.mean(clean.samples ** 2)
        snr_b = 10 * np.log10(p_c / np.mean((cor.samples - clean.samples) ** 2))
        snr_a = 10 * np.log10(p_c / np.mean((rest - clean.samples) ** 2))
        gains.append(snr_a - snr_b)
        spikes = cor.samples != clean.samples
        # exclude the cut and wander: spike sites are where difference is large
        spikes = np.abs(cor.samples - clean.samples) > 0.3
        err = np.abs(rest - clean.samples)
        res_sp.append(err[spikes].mean())
        res_ok.append(err[~spikes].mean())
        truth = [a.sample_index for a in clean.annotations]
        m = match_peaks(detect_pan_tompkins(cor.samples, 400), truth)
        tp_o += m.tp; fp_o += m.fp; fn_o += m.fn
        m = match_peaks(detect_pan_tompkins(rest, 400), truth)
        tp_r += m.tp; fp_r += m.fp; fn_r += m.fn
    f1_o = 2 * tp_o / (2 * tp_o + fp_o + fn_o)
    f1_r = 2 * tp_r / (2 * tp_r + fp_r + fn_r)
    return (float(np.median(gains)), f1_o, f1_r, float(np.median(amps)),
            float(np.mean(res_sp)), float(np.mean(res_ok)))


cfg = TrainConfig(seed=0, max_iterations=0, generator_channels=GEN,
                  discriminator_channels=DISC)
model = CycleGanModel.build(cfg)
g, fo, fr, amp, rs, ro = probe(model)
print(f"iter   0: SNR {g:+.2f} dB  F1 {fo:.3f}->{fr:.3f}  amp x{amp:.2f}  spike-res {rs:.3f} ok-res {ro:.3f}", flush=True)
for stop in range(50, ITERS + 1, 50):
    cfg = replace(cfg, max_iterations=stop)
    t0 = time.time()
    hist = fit(model, pools, cfg)
    g, fo, fr, amp, rs, ro = probe(model)
    b = hist[-1]
    print(
        f"iter {stop:3d}: SNR {g:+.2f} dB  F1 {fo:.3f}->{fr:.3f}  amp x{amp:.2f}  "
        f"spike-res {rs:.3f} ok-res {ro:.3f}  adv {b.adv1:.3f}/{b.adv2:.3f} "
        f"cyc {b.cyc:.4f} ide {b.ide:.4f}  ({time.time()-t0:.0f}s)",
        flush=True,
    )
    save_checkpoint(f".pilot/{TAG}.ckpt", model)
