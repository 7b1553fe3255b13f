"""Selection frequencies on the PBC cohort, at a small number of repetitions.

The full experiment uses 200 repetitions (see `coxknock pbc`); ten are
enough to see which features dominate.
"""
from coxknock.pbc import PbcConfig, pbc_frequency_experiment

table = pbc_frequency_experiment(PbcConfig(runs=10, k=3, master_seed=0))
for name, freq in table.ordered()[:8]:
    print(f"{name:<16s} {freq:.2f}")
