"""Scratch grid over dataset/model knobs, scoring the acceptance phenomena."""
import sys
import time

import numpy as np

import shapeadv.data as D
from shapeadv import attacks, classifier as C, evaluation as E, sensitivity as S

ORIG_PARAMS = D.shape_params
ORIG_GENERATE = D.generate


def tg_params(cls, rng):
    if cls == "cube":
        return {"hy": rng.uniform(0.7, 1.3), "hz": rng.uniform(0.4, 1.3)}
    if cls == "cylinder":
        return {"aspect": rng.uniform(0.5, 2.2)}
    if cls == "cone":
        return {"aspect": rng.uniform(1.0, 2.2)}
    if cls == "torus":
        return {"ratio": rng.uniform(0.3, 0.6)}
    if cls == "plane":
        return {"aspect": rng.uniform(0.5, 2.0)}
    if cls == "pyramid":
        return {"aspect": rng.uniform(0.9, 1.7)}
    if cls == "capsule":
        return {"aspect": rng.uniform(0.4, 1.8)}
    return ORIG_PARAMS(cls, rng)


def make_tilt_generate(max_tilt_deg):
    def generate(cls, params, n_points, seed):
        rng = np.random.default_rng(seed)
        raw = D.sample_shape(cls, params, n_points, rng)
        raw = raw + rng.normal(scale=D.SURFACE_JITTER_SIGMA, size=raw.shape)
        ang = np.deg2rad(rng.uniform(0.0, max_tilt_deg))
        axis_ang = rng.uniform(0, 2 * np.pi)
        ax = np.array([np.cos(axis_ang), np.sin(axis_ang), 0.0])
        K = np.array([[0, -ax[2], ax[1]], [ax[2], 0, -ax[0]], [-ax[1], ax[0], 0]])
        R = np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)
        raw = raw @ R.T
        return D.PointCloud(points=D.normalize_unit_cube(raw), label=D.CLASS_NAMES.index(cls))
    return generate


def run_config(name, n_train, stop, data_mode):
    D.shape_params = tg_params if data_mode == "TG" else ORIG_PARAMS
    D.generate = make_tilt_generate(25.0) if data_mode == "TILT" else ORIG_GENERATE
    train, test = D.make_dataset(seed=7, n_train=n_train, n_test=240, n_points=256)
    tgt = None if stop == "full" else float(stop)
    t0 = time.perf_counter()
    pa = C.train("A", train, test, C.TrainConfig(epochs=30, seed=0, target_accuracy=tgt, min_accuracy=0.0))
    pb = C.train("B", train, test, C.TrainConfig(epochs=30, seed=1, target_accuracy=tgt, min_accuracy=0.0))
    t_train = time.perf_counter() - t0
    acc_a, acc_b = pa.train_meta["test_accuracy"], pb.train_meta["test_accuracy"]

    sub = test.samples[:60]
    cfg = attacks.WhiteBoxConfig()
    wb, wrep = attacks.batch_attack("white", pa, sub, cfg)
    ig, irep = attacks.batch_attack("ifgm", pa, sub, cfg)
    def sor_asr(outs):
        return np.mean([C.predict(pa, E.sor_defense(o.adversarial)) != s.label
                        for s, o in zip(sub, outs)])
    sor_w, sor_i = sor_asr(wb), sor_asr(ig)

    sub_b = test.samples[:40]
    stats = {}
    for ordering in ("sensitivity", "simba_random_axes", "simba_plus"):
        bcfg = attacks.BlackBoxConfig(ordering=ordering, seed=3)
        outs, rep = attacks.batch_attack("black", pb, sub_b, bcfg, surrogate=pa)
        stats[ordering] = (rep.asr, float(np.median([o.queries for o in outs])))

    sw = {}
    for ordering in ("descending", "random", "ascending"):
        curve = dict(S.perturb_sweep(pa, test.samples[:100], ordering, step=0.03,
                                     fraction_grid=(0.0, 0.3), seed=11))
        sw[ordering] = curve[0.3]

    print(f"[{name}] acc A {acc_a:.3f} B {acc_b:.3f} (train {t_train:.0f}s)")
    print(f"  wb asr {wrep.asr:.3f} cd {wrep.mean_chamfer:.2f} | ifgm asr {irep.asr:.3f} "
          f"cd {irep.mean_chamfer:.2f} | cd_dir {'OK' if wrep.mean_chamfer < irep.mean_chamfer else 'BAD'}")
    print(f"  SOR: wb {sor_w:.3f} ifgm {sor_i:.3f} gap {(sor_w - sor_i)*100:+.0f}pp")
    s_a, s_q = stats["sensitivity"]; r_a, r_q = stats["simba_random_axes"]; p_a, p_q = stats["simba_plus"]
    print(f"  bb: sens {s_a:.2f}/{s_q:.0f}q simba {r_a:.2f}/{r_q:.0f}q simba+ {p_a:.2f}/{p_q:.0f}q")
    print(f"  sweep@0.3: desc {sw['descending']:.3f} rand {sw['random']:.3f} asc {sw['ascending']:.3f} "
          f"gap {(sw['random'] - sw['descending'])*100:+.0f}pp")
    sys.stdout.flush()


if __name__ == "__main__":
    which = sys.argv[1:] or ["MID-full", "TILT-full", "TG640-full"]
    for spec in which:
        data_mode, stop = spec.rsplit("-", 1)
        n_train = 640 if "640" in data_mode else 480
        data_mode = data_mode.replace("640", "")
        run_config(spec, n_train, stop, data_mode)
