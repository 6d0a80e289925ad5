"""
The walk as a skew product
==========================

Follow the particle: the kernel cuts [0, 1) into cells, the cell holding
``s`` picks the jump, and ``s`` is blown up onto [0, 1) again.
"""

import itertools

import numpy as np

from rwre_lab.dynamics import (
    SkewState,
    build_partition,
    cocycle,
    cylinder_interval,
    cylinder_measure,
    fiber_map,
    info_rates,
    orbit,
)
from rwre_lab.environment import EnvironmentSpec, EnvironmentView

view = EnvironmentView(EnvironmentSpec("iid-appendix", dims=1, seed=3))
part = build_partition(view.kernel())
print("cells:", part.endpoints)
print("phi(0.3) =", fiber_map(0.3, view))

for rec in orbit(SkewState(0.3, view), 6):
    print(rec.to_dict())

# the displacement cocycle is the walk itself
print(cocycle(SkewState(0.3, view), 10)[:, 0])

# cylinders of length 3 tile [0, 1); each length is a path probability
total = 0.0
for idx in itertools.product(range(1, 4), repeat=3):
    lo, hi = cylinder_interval(view, idx)
    total += hi - lo
    assert abs((hi - lo) - cylinder_measure(view, idx)) < 1e-12
print("total measure of 27 cylinders:", total)

# cylinder measures decay exponentially along typical orbits
rates = info_rates(view, np.linspace(0.05, 0.95, 10), 5000)
print("info rates:", np.round(rates, 3))
