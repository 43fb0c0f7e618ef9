"""Run the bundled case studies and summarise what they show.

Uses shortened simulation runs so the whole script takes about a minute;
the bundled specs (``spnperf sweep case01`` etc.) use longer ones.

Run: python notebooks/03_case_studies.py
"""
import json

from spnperf.experiments import bundled_spec_path, interaction_profile, load_experiment, run_sweeps

SHORT = {"sim": {"warmup_time_ms": 2e4, "batch_count": 10, "batch_length_ms": 2e4}}


def load(name):
    return load_experiment(json.loads(bundled_spec_path(name).read_text()), SHORT)


# arrival-rate sweep for three commit capacities
exp = load("case01")
rows = run_sweeps(exp.sweeps, seed=exp.seed)
print("arrival    cp  commit-util  throughput")
for r in rows[::4]:
    print(f"{r.params.arrival_rate:7.4f}  {r.params.cp:3d}  {r.metrics['utilization_commit']:11.3f}  "
          f"{r.metrics['throughput_per_ms']:10.4f}")

# block size and timeout at a fixed load
exp = load("case02")
print("\nlabel    block  timeout       mrt   discard")
for r in run_sweeps(exp.sweeps, seed=exp.seed):
    print(f"{r.label:8s} {r.params.block_size:5d}  {r.params.timeout_ms:7g}  {r.metrics['mrt_ms']:8.0f}  "
          f"{r.metrics['discard_probability']:.3f}")

# which path cuts blocks as the timeout grows
exp = load("case03")
prof = interaction_profile(exp.profile_base, exp.timeouts, exp.options, seed=exp.seed)
print("\ntimeout  block-rate  timeout-rate")
for t, b, q in zip(prof.timeouts, prof.block_call_rate, prof.timeout_call_rate):
    print(f"{t:7g}  {b:10.3g}  {q:12.3g}")
print("complete blocks take over at timeout", prof.crossing, "ms")
