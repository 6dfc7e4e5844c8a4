"""Driving experiments through the harness, as the CLI does.

Writes JSON reports and CSV figure data under ./demo_out.
"""
from qkdstego.harness import ExperimentConfig, emit_figure_data, run_experiment

out = "demo_out"
curve = run_experiment(ExperimentConfig(experiment="mdep_curve", seed=1, out_dir=out))
print(emit_figure_data(curve, "mdep_vs_E"))

sweep = ExperimentConfig(experiment="steganalysis_sweep", seed=1, trials=100, samples=2000,
                         rates=[0.0, 0.05, 0.1, 0.2], workers=4, out_dir=out)
print(emit_figure_data(run_experiment(sweep), "power_vs_E"))
print("same config on the command line: qkdstego steganalyze --rates 0 0.05 0.1 0.2 "
      "--samples 2000 --trials 100 --seed 1 --out", out)
