"""
Recurrence in one and two dimensions
====================================

Return fractions grow towards 1 for d <= 2 and level off for d = 3; the
small-ball mass of ``X_n / n^(1/d)`` stays bounded below.
"""

from rwre_lab.environment import EnvironmentSpec
from rwre_lab.stats import dyadic_steps, recurrence_stats, schmidt_criterion
from rwre_lab.walker import annealed_sample

for dims in (1, 2, 3):
    spec = EnvironmentSpec("simple-symmetric", dims)
    rep = recurrence_stats(annealed_sample(spec, 2000, 2000, record_steps=[]))
    print(dims, [round(rep.fraction_by(n), 3) for n in (10, 100, 1000, 2000)])

iid = EnvironmentSpec("iid-appendix", dims=2, seed=5)
ens = annealed_sample(iid, 1000, 1024, record_steps=dyadic_steps(1024))
print(recurrence_stats(ens).to_dict()["final_return_fraction"])

table = schmidt_criterion(ens, [256, 512, 1024], [0.2, 0.4, 0.8])
print(table.to_csv())
print("min ratio:", table.min_ratio())
