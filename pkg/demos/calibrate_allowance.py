"""How many negative signs a knockoff run may tolerate.

Prints the single-run allowance and the aggregated allowance used by the
derandomized procedure for a few k, together with the exact tail
probabilities that justify them.
"""
from coxknock.kfwer import aggregate_tail_exact, compute_v_derandomized, compute_v_single, nb_tail

ALPHA, ETA, M = 0.1, 0.8, 30

for k in (1, 2, 3, 5):
    v1 = compute_v_single(k, ALPHA)
    vd = compute_v_derandomized(k, ALPHA, ETA, M)
    print(f"k={k}: single-run v={v1} (tail {nb_tail(v1, k):.4g}), "
          f"aggregated v={vd} (tail {float(aggregate_tail_exact(vd, k, ETA, M)):.4g})")
