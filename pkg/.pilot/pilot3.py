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

RATE = float(sys.argv[1]) if len(sys.argv) > 1 else 36.0
ITERS = int(sys.argv[2]) if len(sys.argv) > 2 else 400
TAG = sys.argv[3] if len(sys.argv) > 3 else "v3"
SCALE = float(sys.argv[4]) if len(sys.argv) > 4 else 0.5  # width multiplier

SPEC = dict(snr_db=0.0, noise_kind="impulse", impulse_rate_hz=RATE,
            wander_amplitude_mv=0.1, wander_frequency_hz=0.333)
GEN = tuple(max(2, round(SCALE * c)) for c in (25, 50, 75, 100, 125))
DISC = tuple(max(2, round(SCALE * c)) for c in (33, 66, 99, 132, 165))


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


def probe(model, cfg):
    gains, amps, res_sp, res_ok, fmax = [], [], [], [], []
    tp_o = fp_o = fn_o = tp_r = fp_r = fn_r = 0
    for clean, cor in holdout:
        nrm = normalize(cor)
        y = restore_segment(model, nrm.samples, 1)
        fmax.append(np.abs(y).max())
        rest = denormalize(replace(nrm, samples=y)).samples
        amps.append(np.max(np.abs(rest)) / np.max(np.abs(clean.samples)))
        p_c = np.mean(clean.samples ** 2)
        snr_b = 10 * np.log10(p_c / np.mean((cor.samples - clean.samples) ** 2))
        snr_a = 10 * np.log10(p_c / np.mean((rest - clean.samples) ** 2))
        gains.append(snr_a - snr_b)
        spikes = np.abs(cor.samples - clean.samples) > 0.25
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

    # force alignment at spike sites on 2 holdout segments
    segs = holdout[:2]
    x = np.stack([normalize(c).samples for _, c in segs])[:, None, :]
    mask = np.stack([np.abs(c.samples - s.samples) > 0.25 for s, c in segs])[:, None, :]
    fake, g_cache = model.gx2c.forward_train(x)
    score, d_cache = model.dc.forward_train(fake)
    g_score = -2.0 * (1.0 - score) / score.size
    g_adv, _ = model.dc.backward(d_cache, g_score, need_weight_grads=False)
    rec, b_cache = model.gc2x.forward_train(fake)
    resid = rec - x
    g_rec = np.sign(resid) / resid.size
    g_cyc_raw, _ = model.gc2x.backward(b_cache, g_rec, need_weight_grads=False)
    net = g_adv + cfg.lambda_cyc * g_cyc_raw
    sp_sign = np.sign(fake[mask])
    adv_al = float(np.mean(g_adv[mask] * sp_sign > 0))
    net_al = float(np.mean(net[mask] * sp_sign > 0))

    return dict(g=float(np.median(gains)), fo=f1_o, fr=f1_r,
                amp=float(np.median(amps)), rs=float(np.mean(res_sp)),
                ro=float(np.mean(res_ok)), fmax=float(np.mean(fmax)),
                adv_al=adv_al, net_al=net_al)


cfg = TrainConfig(seed=0, max_iterations=0, generator_channels=GEN,
                  discriminator_channels=DISC)
model = CycleGanModel.build(cfg)
d = probe(model, cfg)
print(f"iter   0: SNR {d['g']:+.2f}  F1 {d['fo']:.3f}->{d['fr']:.3f}  amp x{d['amp']:.2f}  "
      f"sp {d['rs']:.3f}/{d['ro']:.3f}  fmax {d['fmax']:.3f}  al {d['adv_al']:.2f}/{d['net_al']:.2f}", flush=True)
for stop in range(50, ITERS + 1, 50):
    cfg = replace(cfg, max_iterations=stop)
    t0 = time.time()
    hist = fit(model, pools, cfg)
    d = probe(model, cfg)
    b = hist[-1]
    print(
        f"iter {stop:3d}: SNR {d['g']:+.2f}  F1 {d['fo']:.3f}->{d['fr']:.3f}  amp x{d['amp']:.2f}  "
        f"sp {d['rs']:.3f}/{d['ro']:.3f}  fmax {d['fmax']:.3f}  al {d['adv_al']:.2f}/{d['net_al']:.2f}  "
        f"adv {b.adv1:.3f}/{b.adv2:.3f} cyc {b.cyc:.4f} ide {b.ide:.4f} "
        f"d {b.d_clean:.3f}/{b.d_corrupted:.3f}  ({time.time()-t0:.0f}s)",
        flush=True,
    )
    save_checkpoint(f".pilot/{TAG}.ckpt", model)
