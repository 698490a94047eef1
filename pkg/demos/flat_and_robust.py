"""
Does noise augmentation give flatter, more robust minima?
=========================================================

Runs the desk-scale experiment: ERM against Gaussian-noise augmentation on
8x8 synthetic images, a 64-64 MLP, three seeds. Each run is scored by
flatness (mu, LPF, epsilon-sharpness, b-flat radius), adversarial error and
mean corruption error. Takes about a minute.

    python3 demos/flat_and_robust.py [out_dir]
"""

import sys

from augflat import harness

cfg = harness.desk_scale_experiment()
out_dir = sys.argv[1] if len(sys.argv) > 1 else None
result = harness.run_experiment(cfg, out_dir)

for rec in result.records:
    f, r = rec.flatness, rec.robustness
    print(f"{rec.arm:<15} seed {rec.seed}  test err {rec.test_error:5.2f}%  "
          f"mu {f['mu_pac_bayes']:7.3f}  b_hat {f['b_hat']:.4f}  mCE {r['mce']:6.3f}")

print()
print(harness.summary_csv(result.summary))
if out_dir:
    print(f"runs.csv, summary.csv and records.json written to {out_dir}")
