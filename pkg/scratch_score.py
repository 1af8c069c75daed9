"""Scratch: single-config scorer printing pass/fail margins per criterion."""
import json
import sys
import time

import numpy as np

import shapeadv.data as D
from shapeadv import attacks, classifier as C, evaluation as E, sensitivity as S

ORIG_PARAMS = D.shape_params


def run(cfg):
    t_all = time.perf_counter()
    D.SCATTER_FRACTION = (cfg["scat_lo"], cfg["scat_hi"])

    def params_fn(cls, rng):
        if cls == "plane":
            return {"aspect": rng.uniform(0.5, 2.0),
                    "warp_x": rng.uniform(cfg["warp_lo"], cfg["warp_hi"]) * rng.choice((-1.0, 1.0)),
                    "warp_y": rng.uniform(cfg["warp_lo"], cfg["warp_hi"]) * rng.choice((-1.0, 1.0))}
        if cls == "capsule":
            return {"aspect": rng.uniform(cfg["capsule_lo"], 2.2)}
        if cls == "cylinder":
            return {"aspect": rng.uniform(cfg.get("cyl_lo", 1.0), 2.5)}
        return ORIG_PARAMS(cls, rng)
    D.shape_params = params_fn

    train, test = D.make_dataset(seed=7, n_train=cfg["n_train"], n_test=240, n_points=cfg["np"])
    t0 = time.perf_counter()
    pa = C.train("A", train, test, C.TrainConfig(epochs=30, seed=cfg["seed_a"], min_accuracy=0.0,
                                                 target_accuracy=cfg.get("tgt")))
    ta = time.perf_counter() - t0
    t0 = time.perf_counter()
    pb = C.train("B", train, test, C.TrainConfig(epochs=30, seed=cfg["seed_b"], min_accuracy=0.0,
                                                 target_accuracy=cfg.get("tgt")))
    tb = time.perf_counter() - t0
    acc_a, acc_b = pa.train_meta["test_accuracy"], pb.train_meta["test_accuracy"]
    print(f"C11 acc A {acc_a:.3f} ({ta:.0f}s) B {acc_b:.3f} ({tb:.0f}s) "
          f"{'PASS' if min(acc_a, acc_b) >= 0.90 and max(ta, tb) < 60 else 'FAIL'}")

    sub = test.samples[:cfg["n_eval"]]
    wcfg = attacks.WhiteBoxConfig()
    wb, wrep = attacks.batch_attack("white", pa, sub, wcfg)
    ig, irep = attacks.batch_attack("ifgm", pa, sub, wcfg)
    ok8 = (wrep.asr >= 0.95 and irep.asr >= 0.95 and wrep.mean_chamfer < irep.mean_chamfer
           and wrep.mean_hausdorff < irep.mean_hausdorff)
    print(f"C8 wb asr {wrep.asr:.3f} cd {wrep.mean_chamfer:.2f} hd {wrep.mean_hausdorff:.2f} | "
          f"ifgm asr {irep.asr:.3f} cd {irep.mean_chamfer:.2f} hd {irep.mean_hausdorff:.2f} "
          f"{'PASS' if ok8 else 'FAIL'}")

    sor_clean = np.mean([C.predict(pa, E.sor_defense(s.points)) != s.label for s in sub])
    sor_w = np.mean([C.predict(pa, E.sor_defense(o.adversarial)) != s.label for s, o in zip(sub, wb)])
    sor_i = np.mean([C.predict(pa, E.sor_defense(o.adversarial)) != s.label for s, o in zip(sub, ig)])
    print(f"C9 SOR wb {sor_w:.3f} ifgm {sor_i:.3f} gap {(sor_w - sor_i)*100:+.0f}pp "
          f"(clean-miscls-после-SOR {sor_clean:.2f}) {'PASS' if sor_w >= sor_i + 0.20 else 'FAIL'}")

    med = {}
    asrs = {}
    for ordering in ("sensitivity", "simba_random_axes", "simba_plus"):
        bcfg = attacks.BlackBoxConfig(ordering=ordering, seed=3)
        outs, rep = attacks.batch_attack("black", pb, sub, bcfg, surrogate=pa)
        med[ordering] = float(np.median([o.queries for o in outs]))
        asrs[ordering] = rep.asr
    ok7 = (min(asrs.values()) >= 0.95 and med["sensitivity"] < med["simba_random_axes"]
           and med["sensitivity"] <= med["simba_plus"])
    print(f"C7 sens {asrs['sensitivity']:.3f}/{med['sensitivity']:.0f}q "
          f"simba {asrs['simba_random_axes']:.2f}/{med['simba_random_axes']:.0f}q "
          f"simba+ {asrs['simba_plus']:.2f}/{med['simba_plus']:.0f}q {'PASS' if ok7 else 'FAIL'}")

    sw = {}
    for ordering in ("descending", "random", "ascending"):
        acc_sum = 0.0
        for seed in (11, 12, 13):
            curve = dict(S.perturb_sweep(pa, test.samples[:cfg["n_sweep"]], ordering, step=0.03,
                                         fraction_grid=(0.0, 0.3), seed=seed))
            acc_sum += curve[0.3]
        sw[ordering] = acc_sum / 3
    ok6 = sw["descending"] <= sw["random"] - 0.10 and sw["random"] <= sw["ascending"]
    print(f"C6 sweep@0.3 desc {sw['descending']:.3f} rand {sw['random']:.3f} "
          f"asc {sw['ascending']:.3f} {'PASS' if ok6 else 'FAIL'}")

    ovl = [S.topk_overlap(S.compute_sensitivity_map(pa, s.points, s.label),
                          S.compute_sensitivity_map(pb, s.points, s.label), 0.3)
           for s in test.samples[:100]]
    print(f"C10 overlap {np.mean(ovl):.3f} {'PASS' if np.mean(ovl) > 0.40 else 'FAIL'}")
    print(f"total {time.perf_counter() - t_all:.0f}s")


if __name__ == "__main__":
    cfg = dict(scat_lo=0.03, scat_hi=0.08, warp_lo=0.1, warp_hi=0.35, capsule_lo=1.2,
               n_train=720, np=256, seed_a=0, seed_b=3, n_eval=80, n_sweep=100)
    cfg.update(json.loads(sys.argv[1]) if len(sys.argv) > 1 else {})
    print("config:", {k: v for k, v in cfg.items()})
    run(cfg)
