"""Continuous-variable runs: O4, E4, CV-BB84 over PASCS and CV-B92.

Every run reports how many signals survive basis sifting (the efficiency),
how many survive post-selection, and how often the two keys agree. The last
part hides a bit in the order of the conclusive-result announcement.
"""
from qkdstego.cv import (
    CV_B92, CV_BB84_PASCS, E4, O4, cv_reverse_run, make_spec, reverse_extract_cv, run_protocol,
)
from qkdstego.cvstate import pascs_fock
from qkdstego.seeding import trial_rng

for name, alpha, x0 in ((O4, 0.8, 0.4), (E4, 0.8, 0.4), (CV_BB84_PASCS, 1.2, 0.6), (CV_B92, 1.2, 0.6)):
    tr = run_protocol(make_spec(name, alpha, x0, 100_000), trial_rng(4, name, 0))
    print(f"{name:>12}: usable {tr.usable_fraction():.4f}  conclusive {tr.conclusive_fraction():.4f}  "
          f"agreement {tr.agreement():.5f}")

state, norm = pascs_fock(1.5)
print(f"\nPASCS alpha=1.5: norm {norm:.6f}, mean photon number {state.photon_number_mean():.4f}")

spec = make_spec(E4, 2.0, 1.0, 500)
tr = cv_reverse_run(spec, message_bit=1, d=12, rng=trial_rng(4, "rev", 0))
print("E4 reverse stego bit recovered:", reverse_extract_cv(tr.announced_conclusive, 12, tr.sender_bits))
