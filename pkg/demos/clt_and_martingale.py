"""
Annealed CLT
============

Compare the empirical covariance of ``X_n / sqrt(n)`` with the environment
average of the local second moment, then test normality coordinate-wise.
"""

from rwre_lab.environment import EnvironmentSpec
from rwre_lab.stats import (
    clt_distribution_test,
    covariance_agreement,
    empirical_covariance,
    martingale_audit,
    theoretical_covariance,
)
from rwre_lab.walker import annealed_sample

spec = EnvironmentSpec("iid-appendix", dims=2, seed=11)
ens = annealed_sample(spec, 1000, 500)

theo = theoretical_covariance(spec, 10_000)
emp = empirical_covariance(ens)
print("theoretical\n", theo.matrix)
print("empirical\n", emp.matrix)
print("z-scores\n", covariance_agreement(theo, emp))

print(clt_distribution_test(ens, theo).to_dict())

# every visited site has zero local drift, so X_n is a martingale
print(martingale_audit(ens).to_dict())
