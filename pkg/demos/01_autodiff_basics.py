"""A walk through the tape-based gradient machinery.

Builds a small computation, backpropagates through it, and checks the
result against central finite differences.
"""

import numpy as np

from relmatch import tensor as T
from relmatch.tensor import Tape, Tensor

rng = np.random.default_rng(0)

# a tiny two-layer network on random data
W1 = Tensor(rng.normal(0.0, 0.5, size=(4, 8)), name="W1")
W2 = Tensor(rng.normal(0.0, 0.5, size=(8, 3)), name="W2")
x = Tensor(rng.normal(size=(5, 4)), name="x")
gold = np.array([0, 2, 1, 0, 2])


def loss_value():
    hidden = T.relu(T.matmul(x, W1))
    logits = T.matmul(hidden, W2)
    return T.cross_entropy(logits, gold)


with Tape() as tape:
    loss = loss_value()
    tape.backward(loss)
print(f"loss = {loss.item():.6f}")

# compare a few analytic gradient entries against finite differences
h = 1e-6
for i, j in [(0, 0), (2, 5), (3, 7)]:
    analytic = W1.grad[i, j]
    keep = W1.data[i, j]
    W1.data[i, j] = keep + h
    up = loss_value().item()
    W1.data[i, j] = keep - h
    down = loss_value().item()
    W1.data[i, j] = keep
    numeric = (up - down) / (2 * h)
    print(f"dL/dW1[{i},{j}]  analytic {analytic:+.8f}  numeric {numeric:+.8f}")

# outside a tape nothing is recorded: inference is just numpy
no_tape = loss_value()
print(f"forward-only loss = {no_tape.item():.6f} (no graph kept)")
