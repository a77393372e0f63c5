"""
Bootstrap thresholds
====================

Calibrate one threshold per window size so that, under no break, the chance
that any window's maximum exceeds its threshold is at most alpha.
"""

import numpy as np

import covbreak as cb

rng = np.random.default_rng(1)
X = rng.normal(size=(250, 6))

windows = cb.WindowSet([10, 20, 40])
cal = cb.calibrate(X, windows, alpha=0.05, M=1000, seed=7)

# the per-window level is lowered until the familywise rate fits alpha
print(f"alpha={cal.alpha}  corrected level alpha*={cal.alpha_star}")
for n in cal.windows:
    print(f"  n={n:3d}  threshold {cal.thresholds[n]:.3f}")

rate = cb.familywise_exceedance(cal.matrix.replicates, cal.threshold_vector())
print("familywise exceedance over the replicates:", rate)

# thresholds are a deterministic function of data, windows and seed,
# whatever the number of threads
again = cb.calibrate(X, windows, alpha=0.05, M=1000, seed=7, threads=4)
print("reproducible:", again.to_json() == cal.to_json())

# the JSON document can be stored and reloaded
restored = cb.CalibrationResult.from_json(cal.to_json())
print("round trip:", restored.thresholds == cal.thresholds)
