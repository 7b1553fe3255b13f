"""Derandomized selection on one simulated survival dataset.

Draws a design from the smallest simulation setting with the strongest
signal, then compares one knockoff run with the aggregate of 30.
"""
from coxknock.data import Dataset
from coxknock.derandomize import DerandomConfig, derandomized_select
from coxknock.kfwer import FilterConfig, base_knockoff_selection
from coxknock.seeding import child_seed
from coxknock.simulation import SETTINGS, build_beta, gen_design, gen_outcome, paired_effects

SEED = 1
spec, eff = SETTINGS[1], paired_effects()[-1]
x, kinds = gen_design(spec, SEED)
beta, truth = build_beta(spec, eff, SEED)
time, event = gen_outcome(x @ beta, eff, child_seed(SEED, 4))
d = Dataset(x, kinds, time, event, tuple(f"X{j + 1}" for j in range(spec.p)))
print(f"n={d.n} p={d.p} events={int(event.sum())} true features={sorted(truth)}")

single = base_knockoff_selection(d, seed=SEED, cfg=FilterConfig(k=2, alpha=0.1))
print(f"single run (v={single.v_used}): {sorted(single.selected)}")

res = derandomized_select(d, DerandomConfig(M=30, eta=0.8, k=2, alpha=0.1, master_seed=SEED))
print(f"derandomized (v={res.v_used}): {sorted(res.selected)}")
for j in sorted(range(d.p), key=lambda j: -res.pi_hat[j])[:8]:
    print(f"  {d.names[j]:>4s} pi_hat={res.pi_hat[j]:.2f}{'  (true)' if j in truth else ''}")
false = sorted(res.selected - truth)
print(f"false selections: {false} (k=2 bounds P(two or more false selections) by alpha=0.1)")
