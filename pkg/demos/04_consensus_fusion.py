"""
Consensus fusion of semantics and instances
===========================================

Clustering is class-agnostic, so one predicted instance can carry mixed
semantic labels. Majority voting gives every instance a single class.
"""

import numpy as np

from dsnet import FusionPolicy, default_class_config, majority_vote_fuse

cfg = default_class_config()
car, truck, road = 2, 3, 9

# Instance 1 is mostly car with two points predicted as truck; instance 2 is
# mostly road, which is stuff, so the instance is dissolved.
semantic = np.array([car, car, car, truck, truck, road, road, road, car])
instance = np.array([1, 1, 1, 1, 1, 2, 2, 2, 2])

fused = majority_vote_fuse(semantic, instance, cfg, FusionPolicy(min_instance_points=1))
for s, i, fs, fi in zip(semantic, instance, fused.semantic, fused.instance):
    print(f"{cfg.name(s):>8} #{i}  ->  {cfg.name(fs):>8} #{fi}")

# Instances smaller than the minimum size lose their id but keep semantics.
small = majority_vote_fuse(semantic, instance, cfg, FusionPolicy(min_instance_points=6))
print("\nwith min_instance_points=6:", small.instance.tolist())
