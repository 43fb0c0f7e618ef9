"""Check both engines against closed-form queueing results.

Run: python notebooks/01_queueing_oracles.py
"""
import numpy as np

from spnperf import Arc, PetriNet, Place, SimConfig, Transition, erlang_expand, evaluate_exact, simulate
from spnperf.net import DETERMINISTIC, EXPONENTIAL, OUTPUT


def queue(arrival_ms, service_ms, capacity=None, service_kind=EXPONENTIAL):
    places = [Place("N")]
    arcs = [Arc("arr", "N", 1, OUTPUT), Arc("N", "srv")]
    if capacity is not None:
        places.append(Place("free", capacity))
        arcs += [Arc("free", "arr"), Arc("srv", "free", 1, OUTPUT)]
    trans = [Transition("arr", EXPONENTIAL, delay=arrival_ms), Transition("srv", service_kind, delay=service_ms)]
    return PetriNet(places, trans, arcs)


cfg = SimConfig(seed=7, warmup_time_ms=2e4, batch_count=30, batch_length_ms=1e5)

# M/M/1 at rho = 0.5
r = simulate(queue(10.0, 5.0), cfg)
print(f"M/M/1   E(N) = {r.mean('N'):.4f} +/- {r.place_half_widths['N']:.4f}   (exact 1.0)")

# M/M/1/5: exact birth-death distribution
pi = 0.5 ** np.arange(6)
pi /= pi.sum()
r = evaluate_exact(queue(10.0, 5.0, capacity=5))
print(f"M/M/1/5 max |pi - pi_exact| = {np.abs(r.histograms['N'][:6] - pi).max():.2e}")

# M/D/1: the simulator handles the fixed delay directly ...
pk = 0.5 + 0.5**2 / (2 * 0.5)
r = simulate(queue(20.0, 10.0, service_kind=DETERMINISTIC), cfg)
print(f"M/D/1   sim E(N) = {r.mean('N'):.4f}   (P-K {pk})")

# ... the solver replaces it by k exponential phases, converging as k grows
for k in (1, 2, 5, 10, 20):
    net = erlang_expand(queue(20.0, 10.0, capacity=60, service_kind=DETERMINISTIC), k)
    r = evaluate_exact(net)
    print(f"  Erlang-{k:<2d} E(N) = {r.mean('N'):.4f}   states {r.n_states}")
