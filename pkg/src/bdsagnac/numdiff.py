"""Richardson-extrapolated central differences."""

import math


def richardson_derivative(f, x, h, levels=5):
    """First derivative of a smooth scalar function by Richardson extrapolation.

    Builds a Neville table of central differences with steps h, h/2, h/4, ...
    and returns the most extrapolated entry.
    """
    table = []
    for i in range(levels):
        step = h / 2**i
        row = [(f(x + step) - f(x - step)) / (2 * step)]
        for j in range(1, i + 1):
            factor = 4**j
            row.append((factor * row[j - 1] - table[i - 1][j - 1]) / (factor - 1))
        table.append(row)
    return table[-1][-1]


def halving_central_difference(f, x, h, rtol, max_halvings=30):
    """Central difference with step halving until successive estimates agree.

    Returns the last estimate; the loop stops early once two consecutive
    estimates differ by less than ``rtol`` relative.
    """
    previous = (f(x + h) - f(x - h)) / (2 * h)
    for _ in range(max_halvings):
        h /= 2
        current = (f(x + h) - f(x - h)) / (2 * h)
        scale = max(abs(current), abs(previous), math.ulp(1.0))
        if abs(current - previous) <= rtol * scale:
            return current
        previous = current
    return previous
