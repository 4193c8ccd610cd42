"""
Scoring panoptic and 4D predictions
===================================

Panoptic quality on a hand-sized scene, then LSTQ on a two-frame track.
"""

import numpy as np

from dsnet import ClassConfig, PanopticLabeling, lstq, panoptic_quality

cfg = ClassConfig(((0, "unlabeled", "ignore"), (1, "car", "things"), (2, "person", "things"), (9, "road", "stuff")))

# Eight points: a five-point car and a three-point person. The predicted car
# covers three of the five car points (IoU 0.6), and a second predicted car
# segment sits on the person.
gt = PanopticLabeling(np.array([1, 1, 1, 1, 1, 2, 2, 2]), np.array([1, 1, 1, 1, 1, 2, 2, 2]))
pred = PanopticLabeling(np.array([1, 1, 1, 2, 2, 1, 1, 1]), np.array([1, 1, 1, 0, 0, 2, 2, 2]))

report = panoptic_quality([pred], [gt], cfg)
print(report.to_table())
car = report.per_class[1]
print(f"\ncar: TP={car.tp} FP={car.fp} FN={car.fn}  SQ={car.sq:.3f} RQ={car.rq:.3f} PQ={car.pq:.3f}")

# Tracks span frames. Here the same car keeps id 7 in both frames, so
# association is perfect; renaming it halfway splits the track.
g = [PanopticLabeling([1, 1, 9], [4, 4, 0]), PanopticLabeling([1, 1, 9], [4, 4, 0])]
same = [PanopticLabeling([1, 1, 9], [7, 7, 0]), PanopticLabeling([1, 1, 9], [7, 7, 0])]
split = [PanopticLabeling([1, 1, 9], [7, 7, 0]), PanopticLabeling([1, 1, 9], [8, 8, 0])]
for name, p in (("consistent ids", same), ("id switch", split)):
    rep = lstq(p, g, cfg)
    print(f"{name:<15} LSTQ {rep.lstq:.3f}  S_assoc {rep.s_assoc:.3f}  S_cls {rep.s_cls:.3f}")
