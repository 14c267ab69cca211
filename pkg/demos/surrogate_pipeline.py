"""Label a grid of operating points, fit the surrogate, query it.

The analytic bound inversion takes seconds per operating point; the fitted
network answers in microseconds, which is what the onboard controller needs.
"""

import time
import warnings

from hybridv2v.surrogate import (DelayQuery, ExtrapolationWarning,
                                 generate_dataset, grid_queries,
                                 predict_delay, train_mlp)

PS = (0.004, 0.007, 0.01, 0.02, 0.04, 0.07)
ZS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 5.1, 5.2, 5.3)


def main():
    queries = grid_queries(PS, (0.1,), (6,), ZS, (0.5,))
    print(f"labeling {len(queries)} operating points with the analytic "
          "bound (takes a minute)...")
    t0 = time.time()
    rows = generate_dataset(queries)
    print(f"  {len(rows)} feasible rows in {time.time() - t0:.0f} s")

    model = train_mlp(rows, seed=0, epochs=4000)
    print(f"held-out relative error: {model.holdout_rel_err:.1%}")

    print("\nsurrogate answers (slots):")
    t0 = time.time()
    for z in (0.5, 3.0, 5.1):
        q = DelayQuery(timeout_prob=0.01, arrival_rate=0.1, n_vehicles=6,
                       noise_level=z, split=0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ExtrapolationWarning)
            d = predict_delay(model, q)
        print(f"  noise level {z}: {d:8.0f}  ({d * 50e-6 * 1e3:.1f} ms)")
    per = (time.time() - t0) / 3.0
    print(f"about {per * 1e6:.0f} us per query once trained")


if __name__ == "__main__":
    main()
