"""How a missing submission is filled in, step by step.

A participant's history stores each accepted submission; the mean of its
successive differences extrapolates the next one, and a geometric factor
gamma0 * lambda^misses shrinks the estimate's weight the longer the
participant stays silent.
"""

import numpy as np

from bhfl.hieavg import (DecayParams, SubmissionHistory, decay_factor, estimate_delayed,
                         hieavg_edge, mean_weight_difference)

decay = DecayParams(gamma0=0.9, lam=0.9)


def main():
    hist = SubmissionHistory()
    for rnd, w in enumerate(([0.0, 8.0], [0.5, 9.0], [1.0, 10.0]), start=1):
        hist.record(rnd, np.array(w))
        print(f"round {rnd}: real submission {w}")

    delta = mean_weight_difference(hist)
    print(f"\nmean successive difference: {delta}")

    print("\nthe participant now goes silent; each missed round extrapolates "
          "one more step\nand shrinks the coefficient:")
    last_real = hist.last_real_weights.copy()
    for miss in range(1, 6):
        gamma = decay_factor(decay, hist.missed_rounds + 1)
        est = estimate_delayed(hist)
        print(f"  miss {miss}: estimate {est} "
              f"(= last real + {miss} * delta), coefficient {gamma:.4f}")
    assert np.array_equal(est, last_real + 5 * delta)

    print("\nback inside an aggregation: two timely devices plus the silent one")
    silent = SubmissionHistory()
    silent.record(1, np.array([1.0]))
    silent.record(2, np.array([3.0]))
    report = hieavg_edge({0: np.array([2.0]), 1: np.array([4.0])}, {2: silent},
                         decay, j_total=3, rnd=3)
    print(f"  aggregate {report.aggregate}, statuses {report.statuses}")
    print(f"  coefficient mass {report.coefficient_mass:.4f} "
          f"(= (2 + 0.81) / 3; below 1 whenever someone is estimated)")

    print("\na real submission resets the decay:")
    silent.record(silent.last_round + 1, np.array([9.0]))
    print(f"  missed-round counter is now {silent.missed_rounds}")


if __name__ == "__main__":
    main()
