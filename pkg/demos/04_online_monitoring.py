"""
Streaming monitoring
====================

Warm up on s observations, calibrate against the number of observations to
be watched, then push new rows one at a time.
"""

import numpy as np

import covbreak as cb

rng = np.random.default_rng(3)
p, warmup, horizon, tau = 5, 200, 400, 250

stream = rng.normal(size=(horizon, p))
stream[tau:] *= 1.8

# bootstrap streams have the length of the monitored horizon
cal = cb.calibrate(stream[:warmup], [10, 25], alpha=0.05, M=1000, seed=5, horizon=horizon)
detector = cb.OnlineDetector(cal)

for x in stream:
    alarm = detector.push(x)
    if alarm is not None:
        print(f"alarm after {alarm.index} observations: central point {alarm.t}, window {alarm.n}")
        print("  delay past the true break:", alarm.index - tau)
        print("  json:", alarm.to_json())
        break
else:
    print("no alarm")

# with stop_on_first=False every exceedance is logged, and the log equals
# the offline exceedance set on the same data
full = cb.OnlineDetector(cal, stop_on_first=False)
full.run(stream)
offline = cb.exceedances(cb.detect_offline(stream, None, cal), cal)
print("online == offline:", sorted((a.t, a.n, a.statistic) for a in full.alarm_log) == offline)
