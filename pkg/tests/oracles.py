"""Independent reference implementations used as test oracles.

These are written as plain per-element loops in pure Python so they share no
code paths with the vectorized package implementation.
"""

import math

TAU = 2.0 * math.pi


def mix_oracle(width, height, positions, sigma_rel, clip_factor, eps, hues, values, zero_lowest=True):
    """Straight-line per-pixel mixer: returns (hue_hist, value_hist, degenerate)."""
    sigma = sigma_rel * math.sqrt(width * width + height * height)
    hue_counts = [0] * 360
    val_counts = [0] * 100
    for v in range(1, height + 1):
        for u in range(1, width + 1):
            weights = []
            for (x, y) in positions:
                d2 = (u - x) ** 2 + (v - y) ** 2
                weights.append(math.exp(-d2 / (2 * sigma * sigma)))
            raw = 0.0
            for i in range(len(positions)):
                raw += values[i] * weights[i]
            val = 1.0 - math.exp(-clip_factor * raw) if clip_factor is not None else min(raw, 1.0)
            s = c = 0.0
            for i in range(len(positions)):
                wt = values[i] * weights[i] / (raw + eps)
                s += wt * math.sin(hues[i])
                c += wt * math.cos(hues[i])
            hue = math.atan2(s, c) % TAU if raw >= eps else 0.0
            hue_counts[int(math.floor(hue / (TAU / 360))) % 360] += 1
            val_counts[min(int(math.floor(100 * val)), 99)] += 1
    n = width * height
    hue_hist = [k / n for k in hue_counts]
    if zero_lowest:
        val_counts[0] = 0
    total = sum(val_counts)
    if total == 0:
        return hue_hist, [0.01] * 100, True
    return hue_hist, [k / total for k in val_counts], False


def circle_positions(width, height, n, radius_rel):
    r = radius_rel * min(width, height)
    return [(width / 2 + r * math.cos(TAU * i / n), height / 2 + r * math.sin(TAU * i / n)) for i in range(n)]


def smoothed(p, eps=1e-8):
    q = [x + eps for x in p]
    s = sum(q)
    return [x / s for x in q]


def kl_oracle(p, q):
    p, q = smoothed(p), smoothed(q)
    return sum(a * math.log(a / b) for a, b in zip(p, q))


def js_oracle(p, q):
    p, q = smoothed(p), smoothed(q)
    m = [(a + b) / 2 for a, b in zip(p, q)]
    return 0.5 * sum(a * math.log(a / c) for a, c in zip(p, m)) + 0.5 * sum(b * math.log(b / c) for b, c in zip(q, m))


def wasserstein_oracle(p, q):
    """Sum of absolute CDF differences times the bin width 1/len(p)."""
    cp = cq = 0.0
    total = 0.0
    for a, b in zip(p, q):
        cp += a
        cq += b
        total += abs(cp - cq)
    return total / len(p)


def von_mises_density(x, mu, kappa, terms=200):
    term, i0 = 1.0, 1.0
    for k in range(1, terms):
        term *= (kappa / 2) ** 2 / (k * k)
        i0 += term
    return math.exp(kappa * math.cos(x - mu)) / (TAU * i0)


def trapezoid(f, a, b, n):
    h = (b - a) / n
    total = 0.5 * (f(a) + f(b))
    for k in range(1, n):
        total += f(a + k * h)
    return total * h


def midpoint(f, a, b, n):
    h = (b - a) / n
    return h * sum(f(a + (k + 0.5) * h) for k in range(n))
