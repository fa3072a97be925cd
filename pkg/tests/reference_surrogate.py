"""Grid-search oracle for the surrogate cost, written from its documented formula."""

from __future__ import annotations

import numpy as np

GRID = np.round(np.linspace(0.0, 1.0, 101), 2)


def composite_terms(w=(0.4, 0.3, 0.3)):
    """Independent transcription of the documented surrogate, split into its
    additive per-dimension terms: font, theme, spacing, alignment."""
    js_max = 40 + 200 * 0.6**2 + 80 * 0.8**2 + 6
    err_max = 0.02 + 0.5 * 0.55**2 + 0.8 * 0.7**2 + 0.05
    mem_max = 60 + 100 * 0.55**2 + 30 * 0.75**2 + 12
    a, b, c = w[0] / js_max, w[1] / err_max, w[2] / mem_max
    font = lambda f: a * 200 * (f - 0.40) ** 2 + b * 0.5 * (f - 0.55) ** 2 + c * 100 * (f - 0.45) ** 2
    spacing = lambda s: a * 80 * (s - 0.20) ** 2 + b * 0.8 * (s - 0.30) ** 2 + c * 30 * (s - 0.25) ** 2

    def theme(t):
        return np.where(t >= 0.5, c * 8, b * 0.03)

    def align(u):
        k = np.minimum(np.floor(u * 4), 3)
        return np.where(k == 3, a * 6 + c * 4, np.where((k == 1) | (k == 2), b * 0.02, 0.0))

    const = a * 40 + b * 0.02 + c * 60
    return font, theme, spacing, align, const


def grid_minimum(w=(0.4, 0.3, 0.3)) -> float:
    """Exact minimum over the full 0.01 grid: the composite is a sum of
    one-dimensional terms, so the 4-D grid minimum is the sum of 1-D minima."""
    font, theme, spacing, align, const = composite_terms(w)
    return float(const + font(GRID).min() + theme(GRID).min() + spacing(GRID).min() + align(GRID).min())
