"""Evaluate the Fabric transaction pipeline at its default configuration.

Prints the metric suite from a simulation run, then cross-checks the two
backends on a small-capacity instance the solver can enumerate.

Run: python notebooks/02_fabric_model.py
"""
from spnperf import HlfParams, SimConfig, build_hlf_net, erlang_expand, evaluate_exact, simulate
from spnperf.hlf import CONDITIONS, compute_metrics, conservation_residuals, evaluate

p = HlfParams()
net = build_hlf_net(p)
print(f"net: {len(net.places)} places, {len(net.transitions)} transitions, {len(net.arcs)} arcs")

r, m = evaluate(p, sim_config=SimConfig(seed=1, warmup_time_ms=1e5, batch_count=20, batch_length_ms=5e4))
for k, v in m.to_dict().items():
    print(f"  {k:28s} {v:.6g}")
print("  max conservation residual", max(abs(v) for v in conservation_residuals(r, p).values()))

# the block size changes the picture a lot: small blocks starve the commit stage
for b in (1, 4, 8):
    _, mb = evaluate(p.with_(block_size=b), sim_config=SimConfig(seed=2, batch_count=10, batch_length_ms=2e4))
    print(f"block {b}: mrt {mb.mrt_ms:8.1f} ms  throughput {mb.throughput_per_ms:.4f}  discard {mb.discard_probability:.3f}")

# small instance: both backends on the same exponential net
small = HlfParams(eq=3, oq=3, cq=3, ep=1, op=1, cp=1, block_size=1, arrival_delay_ms=20, timeout_ms=50)
expo = erlang_expand(build_hlf_net(small), 1)
exact = evaluate_exact(expo, conditions=CONDITIONS)
sim = simulate(expo, SimConfig(seed=3, batch_count=30, batch_length_ms=2e4, conditions=CONDITIONS))
print(f"\nreduced instance, {exact.n_states} tangible states")
me, ms = compute_metrics(exact, small), compute_metrics(sim, small)
for k in me.to_dict():
    print(f"  {k:28s} exact {getattr(me, k):10.5g}   sim {getattr(ms, k):10.5g}")
