"""Scratch calibration harness (not part of the deliverable)."""
import sys
import time

import numpy as np

from shapeadv import attacks, classifier as C, data as D, evaluation as E, sensitivity as S

t_all = time.perf_counter()

N_POINTS = 512
train, test = D.make_dataset(seed=7, n_train=480, n_test=240, n_points=N_POINTS)

t0 = time.perf_counter()
pa = C.train("A", train, test, C.TrainConfig(epochs=30, seed=0, target_accuracy=0.92))
ta = time.perf_counter() - t0
t0 = time.perf_counter()
pb = C.train("B", train, test, C.TrainConfig(epochs=30, seed=1, target_accuracy=0.92))
tb = time.perf_counter() - t0
print(f"train A {ta:.1f}s acc {pa.train_meta['test_accuracy']:.3f} | "
      f"B {tb:.1f}s acc {pb.train_meta['test_accuracy']:.3f}")

n_sweep = int(sys.argv[1]) if len(sys.argv) > 1 else 100
n_wb = int(sys.argv[2]) if len(sys.argv) > 2 else 60
n_bb = int(sys.argv[3]) if len(sys.argv) > 3 else 40

# --- sweep phenomenon (criterion 6)
t0 = time.perf_counter()
sub = test.samples[:n_sweep]
for ordering in ("descending", "random", "ascending"):
    curve = S.perturb_sweep(pa, sub, ordering, step=0.03,
                            fraction_grid=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), seed=11)
    print(f"sweep {ordering:>10}: " + " ".join(f"{f:.1f}:{a:.3f}" for f, a in curve))
print(f"sweep time {time.perf_counter()-t0:.1f}s")

# --- whitebox vs ifgm (criteria 8, 9)
t0 = time.perf_counter()
sub = test.samples[:n_wb]
cfg = attacks.WhiteBoxConfig()
wb, wb_rep = attacks.batch_attack("white", pa, sub, cfg)
ig, ig_rep = attacks.batch_attack("ifgm", pa, sub, cfg)
print(f"whitebox: asr {wb_rep.asr:.3f} cd {wb_rep.mean_chamfer:.3f} hd {wb_rep.mean_hausdorff:.3f}")
print(f"ifgm    : asr {ig_rep.asr:.3f} cd {ig_rep.mean_chamfer:.3f} hd {ig_rep.mean_hausdorff:.3f}")

def sor_asr(outs):
    hits = 0
    for s, o in zip(sub, outs):
        filtered = E.sor_defense(o.adversarial)
        hits += C.predict(pa, filtered) != s.label
    return hits / len(outs)

print(f"after SOR: whitebox asr {sor_asr(wb):.3f} ifgm asr {sor_asr(ig):.3f}")
print(f"wb/ifgm time {time.perf_counter()-t0:.1f}s")

# --- blackbox orderings (criterion 7) A -> B target
t0 = time.perf_counter()
sub = test.samples[:n_bb]
for ordering in ("sensitivity", "simba_random_axes", "simba_plus"):
    cfg = attacks.BlackBoxConfig(ordering=ordering, seed=3)
    outs, rep = attacks.batch_attack("black", pb, sub, cfg, surrogate=pa)
    med = np.median([o.queries for o in outs])
    print(f"black {ordering:>18}: asr {rep.asr:.3f} medq {med:.1f} avgq {rep.avg_queries:.1f} "
          f"cd {rep.mean_chamfer:.3f}")
print(f"blackbox time {time.perf_counter()-t0:.1f}s")

# --- overlap (criterion 10)
t0 = time.perf_counter()
overlaps = []
for s in test.samples[:100]:
    ma = S.compute_sensitivity_map(pa, s.points, s.label)
    mb = S.compute_sensitivity_map(pb, s.points, s.label)
    overlaps.append(S.topk_overlap(ma, mb, 0.3))
print(f"overlap mean {np.mean(overlaps):.3f} (null ~{0.3:.2f}) time {time.perf_counter()-t0:.1f}s")

print(f"TOTAL {time.perf_counter()-t_all:.1f}s")
