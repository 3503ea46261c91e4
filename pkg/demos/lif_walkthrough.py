"""A single leaky integrate-and-fire neuron, step by step.

Drives one neuron with a constant current, prints its membrane trace and
spike train, then shows passive decay and the surrogate slope that stands in
for the spike derivative during training.

    python demos/lif_walkthrough.py
"""

import numpy as np

from bcsnn.neuron import LifParams, LifState, beta_from_tau, fast_sigmoid, lif_step, surrogate_grad

params = LifParams(beta=0.9, theta=1.0, slope_k=25.0)

# Constant drive of 0.3 per step. The membrane settles towards
# 0.3 / (1 - 0.9) = 3 but is knocked back by theta every time it fires.
# lif_step decides the spike on the membrane it was handed, so the mark
# appears on the step after the crossing, together with the reset.
state = LifState.rest(1)
print("step  membrane  spike")
for t in range(15):
    state, s = lif_step(state, np.array([0.3]), params)
    print(f"{t:4d}  {state.u_mem[0]:8.4f}  {'|' if s[0] else '.'}")

# With no input the membrane decays geometrically by beta per step.
state = LifState(np.array([0.8]))
trace = []
for _ in range(10):
    state, _ = lif_step(state, np.zeros(1), params)
    trace.append(state.u_mem[0])
print("\npassive decay :", np.round(trace, 4))
print("0.8 * 0.9**n  :", np.round(0.8 * 0.9 ** np.arange(1, 11), 4))

# beta from a membrane time constant
for tau in (2.0, 10.0, 50.0):
    print(f"tau = {tau:5.1f} steps -> beta = {beta_from_tau(tau):.4f}")

# The Heaviside spike has zero derivative almost everywhere. Training uses the
# slope of a fast sigmoid instead, peaked at the threshold.
u = np.linspace(0.0, 2.0, 9)
print("\n     u  fast_sigmoid  surrogate slope")
for ui, f, g in zip(u, fast_sigmoid(u, params), surrogate_grad(u, params)):
    print(f"{ui:6.2f}  {f:12.4f}  {g:15.4f}")
