"""
Bistochastic environments
=========================

Sample local matrices, read kernels at lattice sites, and check the
environment hypotheses.
"""

import numpy as np

from rwre_lab.environment import (
    EnvironmentSpec,
    EnvironmentView,
    sample_local_matrix,
    sinkhorn_normalize,
    validate_environment,
)

# Sinkhorn scaling of a positive matrix: rows and columns end up at 1
m = sinkhorn_normalize([[1.0, 2.0], [3.0, 4.0]])
print(m.entries, m.row_deviation(), m.column_deviation())

# an iid environment in the plane, built from 3x3 local matrices
spec = EnvironmentSpec("iid-appendix", dims=2, seed=11)
print("jump set:", spec.jumps.displacements)
print("omega at (0, 0):\n", sample_local_matrix(spec, (0, 0)).entries)

view = EnvironmentView(spec)
for x in [(0, 0), (5, -3), (10**9, 7)]:
    print(x, np.round(view.kernel(x), 4))

# shifting the view is exact: tau_z just moves the origin
z = (4, 4)
assert np.array_equal(view.shift(z).kernel((1, 0)), view.kernel((5, 4)))

# rows and drift are exact; the balanced kernel's column sums are not
sites = np.random.default_rng(0).integers(-1000, 1000, (200, 2))
print(validate_environment(view, sites).summary())

# periodic tables are checked the same way
periodic = EnvironmentSpec("explicit-periodic", 1, table={
    "period": [2], "lambda": [[-1], [0], [1]],
    "kernels": [[0.3, 0.4, 0.3], [0.3, 0.4, 0.3]]})
print(validate_environment(EnvironmentView(periodic), [[0], [1]]).passed)
