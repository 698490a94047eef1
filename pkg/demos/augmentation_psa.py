"""
How close do augmented samples stay to the original?
====================================================

For each augmentation we draw (image, augmented image) pairs and look at the
empirical CDF of their distance. Mixing-style augmentations keep a share of
their samples near the original image. Pure shifts never do.

    python3 demos/augmentation_psa.py
"""

from augflat import augment
from augflat.augment import AugmentationConfig
from augflat.data import SyntheticSpec, make_synthetic

train_set, _ = make_synthetic(SyntheticSpec("mini_images", n=500, k=4, size=8))
thresholds = [0.01, 0.05, 0.1, 0.5, 1.0]

augs = [
    AugmentationConfig("gaussian_noise", {"sigma": 0.05}),
    AugmentationConfig("chain_mix"),
    AugmentationConfig("pattern_mix"),
    AugmentationConfig("translate"),
    AugmentationConfig("shift"),
]

print(f"{'augmentation':<40}" + "".join(f"{t:>8}" for t in thresholds) + f"{'gamma_hat':>11}")
for cfg in augs:
    rep = augment.psa_score(cfg, train_set, thresholds, n=2000, seed=0)
    row = "".join(f"{rep.ecdf_at[t]:8.3f}" for t in thresholds)
    print(f"{cfg.aug_id:<40}{row}{rep.gamma_A_hat:11.4f}")

# a composite: noise on top of a random translation
combo = AugmentationConfig("sequence", {"ops": [AugmentationConfig("translate"),
                                                AugmentationConfig("gaussian_noise", {"sigma": 0.02})]})
rep = augment.psa_score(combo, train_set, thresholds, n=2000, seed=0)
print(f"{combo.aug_id:<40}" + "".join(f"{rep.ecdf_at[t]:8.3f}" for t in thresholds))
