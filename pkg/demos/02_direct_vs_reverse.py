"""One stego bit per QKD run, hidden two ways.

Direct mode (MQS): the state sender picks check bits so the last one points
at the stego bit. Reverse mode: the measuring party hides the bit in the
order of its sifting announcement, so the prepared states stay uniform.
An eavesdropper measuring in random BB84 bases then runs a chi-squared test
on her outcomes.
"""
import numpy as np

from qkdstego.adversary import EveStrategy, steganalyze
from qkdstego.dv import DvConfig, bb84_reverse_run, mqs_run, reverse_extract_dv, transmit
from qkdstego.qstate import EmbeddingParams
from qkdstego.seeding import trial_rng

cfg = DvConfig(m=64)
res = mqs_run(cfg, message_bit=1, d=5, rng=trial_rng(1, "demo", 0))
print(f"MQS direct: sent 1, recovered {res.recovered_bit}, check-bit QBER {res.qber:.3f}")

tr, ann = bb84_reverse_run(cfg, message_bit=0, d=7, rng=trial_rng(1, "demo", 1))
print(f"reverse (variant B): sent 0, recovered {reverse_extract_dv(tr, ann, 7)}")

# Multi-bit direct embedding at rate E skews the preparation; reverse never does.
eve = EveStrategy(intercept_fraction=1.0)
big = DvConfig(m=2260)  # about 1e4 qubits per run
direct, reverse = [], []
for i in range(200):
    t = transmit(big.n_qubits, big.m, trial_rng(2, "direct", i), EmbeddingParams(0.5, 1.0), eve=eve)
    direct.append(steganalyze(t.eve).verdict)
    t, _ = bb84_reverse_run(big, i % 2, 1 + i, trial_rng(2, "reverse", i), eve=eve)
    reverse.append(steganalyze(t.eve).verdict)
print(f"direct, E=0.5: flagged in {np.mean(direct):.1%} of 200 runs at significance 0.01")
print(f"reverse:       flagged in {np.mean(reverse):.1%} of 200 runs at significance 0.01")

rep = steganalyze(transmit(10_000, 0, trial_rng(3, "one", 0), EmbeddingParams(0.5, 1.0), eve=eve).eve)
print("one detection report:", {k: rep.to_dict()[k] for k in ("state_counts", "p_value", "estimated_rate")})
