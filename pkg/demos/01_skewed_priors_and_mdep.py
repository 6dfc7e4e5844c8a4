"""Why direct embedding is visible.

Embedding stego bits straight into the prepared BB84 states skews the
state priors. This script shows the skew, how it lowers Eve's minimum
discrimination error, and how it shows up as coherence of the average state.
"""
import numpy as np

from qkdstego.qstate import (
    EmbeddingParams, bb84_ensemble, classical_bit_distribution, coherence_measures,
    ensemble_average, mdep_bruteforce, mdep_solve,
)

print("E     priors(0,1,+,-)                 bits(0,1)      MDEP      grid LP   l1 coherence")
for e in np.linspace(0, 1, 6):
    params = EmbeddingParams(float(e), 1.0)
    ens = bb84_ensemble(params)
    res = mdep_solve(ens)
    l1, _ = coherence_measures(ensemble_average(ens))
    priors = " ".join(f"{p:.4f}" for p in ens.priors)
    bits = " ".join(f"{p:.3f}" for p in classical_bit_distribution(params))
    print(f"{e:.1f}   {priors}   {bits}   {res.error_probability:.6f}  "
          f"{mdep_bruteforce(ens, 32):.6f}  {l1:.3f}")

# A biased message (b < 1) weakens the skew: at b = 1/2 the priors are uniform again.
print("\nE=0.8, b=0.5 priors:", bb84_ensemble(EmbeddingParams(0.8, 0.5)).priors)
