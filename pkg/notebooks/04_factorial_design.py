"""2^k factorial design: effect allocation on the Fabric model.

Run: python notebooks/04_factorial_design.py
"""
from spnperf import HlfParams
from spnperf.experiments import DoeSpec, EvalOptions, doe_2k, effects_from_responses

# sign-table arithmetic on a hand example
t = effects_from_responses(["A", "B"], [4, 8, 6, 18])
print("toy: q0", t.q0, t.effects)

factors = (("timeout_ms", 10, 10000), ("block_size", 1, 10), ("arrival_delay_ms", 10, 400), ("cp", 2, 6))
opts = EvalOptions(sim={"warmup_time_ms": 1e5, "batch_count": 10, "batch_length_ms": 2e4})
for response in ("mrt_ms", "throughput_per_ms"):
    table = doe_2k(DoeSpec(factors, response=response, replications=2, base=HlfParams(), options=opts), seed=4)
    print(f"\n{response}: q0 = {table.q0:.5g}")
    for name, effect, pct in table.ranked()[:6]:
        print(f"  {name:42s} {effect:12.5g} {pct:6.2f}%")
