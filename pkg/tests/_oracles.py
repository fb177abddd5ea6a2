"""Independent straight-line reference implementations used as test oracles.

These are deliberately written without reference to the package
internals: plain loops, full matrices, no shared helpers. They follow
the same documented deterministic contracts (seed, init rule, repair
rule) so results are comparable bit for bit where the tests say so.
"""

import numpy as np

from lace.histograms import measurement_model


def lloyd_oracle(points, k, seed, max_iters=100):
    """Reference Lloyd's algorithm under the documented seed/init/repair rules."""
    points = np.asarray(points, dtype=np.float64)
    distinct = np.unique(points, axis=0)
    k = min(k, len(distinct))
    rng = np.random.default_rng(seed)
    centroids = distinct[rng.choice(len(distinct), size=k, replace=False)].copy()

    def assign():
        d2 = (points[:, 0:1] - centroids[None, :, 0]) ** 2 + (points[:, 1:2] - centroids[None, :, 1]) ** 2
        return np.argmin(d2, axis=1)

    def repair(labels):
        counts = np.bincount(labels, minlength=k)
        own = np.sum((points - centroids[labels]) ** 2, axis=1)
        for e in np.flatnonzero(counts == 0):
            j = int(np.argmax(own))
            centroids[e] = points[j]
            labels[j] = e
            own[j] = 0.0
        return labels

    prev = None
    converged = False
    for _ in range(max_iters):
        labels = repair(assign())
        if prev is not None and np.array_equal(labels, prev):
            converged = True
            break
        prev = labels
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        sx = np.bincount(labels, weights=points[:, 0], minlength=k)
        sy = np.bincount(labels, weights=points[:, 1], minlength=k)
        centroids = np.stack([sx / counts, sy / counts], axis=1)
    if not converged:
        labels = repair(assign())
    sse = float(np.sum(np.sum((points - centroids[labels]) ** 2, axis=1)))
    return centroids, labels, sse


def laminar_oracle(observations, geometry, sigma_omega, sigma_nu):
    """Literal transcription of the laminar-extraction Bayes filter.

    Keeps the full source-by-destination transition matrix: every
    observation adds its measurement densities to every source row, the
    predicted belief sums row-normalized transitions weighted by the
    previous belief, the posterior multiplies in the densities and
    normalizes, and posteriors accumulate into the result.
    """
    n = geometry.n_bins
    centers = [geometry.bin_center(j) for j in range(n)]
    transition = [[0.0] * n for _ in range(n)]  # [source][destination]
    belief = [1.0 / n] * n
    laminar = [0.0] * n
    for om, nu in observations:
        dens = [measurement_model(om, nu, c[0], c[1], sigma_omega, sigma_nu) for c in centers]
        for src in range(n):
            for dst in range(n):
                transition[src][dst] += dens[dst]
        row_sums = [sum(transition[src]) for src in range(n)]
        predicted = [0.0] * n
        for dst in range(n):
            total = 0.0
            for src in range(n):
                if row_sums[src] == 0.0:
                    row_value = 1.0 / n
                else:
                    row_value = transition[src][dst] / row_sums[src]
                total += belief[src] * row_value
            predicted[dst] = total
        posterior = [predicted[j] * dens[j] for j in range(n)]
        z = sum(posterior)
        belief = [v / z for v in posterior]
        laminar = [laminar[j] + belief[j] for j in range(n)]
    total = sum(laminar)
    return np.array([v / total for v in laminar])
