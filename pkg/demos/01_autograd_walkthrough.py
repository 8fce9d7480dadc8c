"""
Reverse-mode autodiff on plain numpy arrays
===========================================

Build a tiny computation graph, check its gradients against finite
differences, then fit a two-layer network on a toy regression problem
with RMSProp and early stopping.
"""

import numpy as np

import claimcheck.autograd as ag

# --- a graph is just a registry of named parameter tensors

graph = ag.Graph(dtype=np.float64)
rng = np.random.default_rng(0)
W1 = graph.parameter("W1", rng.normal(scale=0.5, size=(8, 3)))
b1 = graph.parameter("b1", np.zeros(8))
W2 = graph.parameter("W2", rng.normal(scale=0.5, size=(1, 8)))

x = np.linspace(-2.0, 2.0, 64).reshape(-1, 1)
y = np.sin(2.0 * x) + 0.1 * rng.normal(size=x.shape)
features = np.hstack([x, x ** 2, np.ones_like(x)])


def loss_fn():
    hidden = ag.relu(ag.Tensor(features) @ ag.transpose(W1) + b1)
    diff = hidden @ ag.transpose(W2) - ag.Tensor(y)
    return ag.mean(diff * diff)


# --- gradients come from one backward() call; verify them numerically

loss = loss_fn()
graph.zero_grad()
loss.backward()
err = ag.finite_difference_check(loss_fn, graph.params, samples_per_param=8,
                                 rng=np.random.default_rng(1))
print(f"initial loss          {float(loss.data):.4f}")
print(f"finite-difference err {err:.2e} (float64 should land well under 1e-6)")

# --- RMSProp with patience-based early stopping, the same loop the
#     veracity trainer uses

opt = ag.RMSProp(graph.params, lr=0.01)
best, bad, history = np.inf, 0, []
for epoch in range(500):
    graph.zero_grad()
    loss = loss_fn()
    loss.backward()
    opt.step()
    history.append(float(loss.data))
    if history[-1] < best - 1e-5:
        best, bad = history[-1], 0
    else:
        bad += 1
    if bad > 20:
        print(f"early stop at epoch {epoch}")
        break

print(f"final loss            {history[-1]:.4f} after {len(history)} epochs")
