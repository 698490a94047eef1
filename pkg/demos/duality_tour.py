"""
Trading input perturbations for parameter perturbations
=======================================================

A small tanh network is trained on 8x8 synthetic images. Every weight
perturbation can then be matched, to first order, by an input perturbation
that moves the logits the same way (and vice versa). This script walks
through the radii, the translations and how the residual shrinks.

    python3 demos/duality_tour.py
"""

import numpy as np

from augflat import duality, harness
from augflat.data import SyntheticSpec, make_synthetic
from augflat.nnet import Model

train_set, test_set = make_synthetic(SyntheticSpec("mini_images", n=400, k=4, size=8))
model = Model.mlp(64, [32], 4, "tanh")
params, trace = harness.train(model, train_set, harness.TrainConfig(epochs=30, seed=0))
print(f"trained {model.param_count} weights, final loss {trace[-1]:.4f}")

# radii over a handful of test points
points = test_set.subset(np.arange(10))
gamma = 0.05
r_in = duality.compensatory_input_radius(model, params, points, gamma)
r_par = duality.compensatory_param_radius(model, params, points, gamma)
print(f"weight ball {gamma} is covered by input ball {r_in.radius:.4f}")
print(f"input ball {gamma} is covered by weight ball {r_par.radius:.4f}")

# one concrete translation
rng = np.random.default_rng(0)
x = points.x[0]
Delta = rng.normal(size=model.param_count)
Delta *= 1e-2 / np.linalg.norm(Delta)
delta = duality.translate_param_to_input(model, params, x, Delta)
check = duality.duality_residual(model, params, x, Delta, delta)
print(f"|Delta|={np.linalg.norm(Delta):.3g} -> |delta|={np.linalg.norm(delta):.3g}, "
      f"residual {check.residual:.3e}")

# halving the perturbation should quarter the (second order) residual
for scale in (1.0, 0.5, 0.25):
    d = duality.translate_param_to_input(model, params, x, scale * Delta)
    print(f"  scale {scale:<5} residual {duality.duality_residual(model, params, x, scale * Delta, d).residual:.3e}")

# sampled perturbations never escape the radius
cov = duality.sample_bound_coverage(model, params, points, gamma, 5000, seed=1)
print(f"{cov.n_samples} samples, max translated norm {cov.max_norm:.4f} <= {cov.radius.radius:.4f}, "
      f"violations {cov.violations}")

rep = duality.covering_report(model, params, points, gamma_A=0.1)
print(f"gamma_Theta={rep.gamma_Theta:.4g}, log10 M={rep.log10_M:.1f} over p={rep.p}")
