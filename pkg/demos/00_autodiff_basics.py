"""The small reverse-mode engine every network in the package is built on.

    python3 demos/00_autodiff_basics.py

We fit a two-layer perceptron to a noisy sine, check its gradients against
central differences, and count multiply-accumulates of one forward pass.
"""

import numpy as np

from mxlab import autodiff as ad

rng = np.random.default_rng(0)
x = np.linspace(-3, 3, 64)[:, None]
y = np.sin(x) + 0.05 * rng.standard_normal(x.shape)

store = ad.ParamStore()
w1 = store.add("w1", 0.5 * rng.standard_normal((1, 32)))
b1 = store.add("b1", np.zeros(32))
w2 = store.add("w2", 0.2 * rng.standard_normal((32, 1)))


def predict(inp):
    return ad.matmul(ad.relu(ad.add(ad.matmul(inp, w1), b1)), w2)


def loss(_=None):
    return ad.mean(ad.square(ad.sub(predict(x), y)))


# Gradients first: a wrong backward rule would make everything below meaningless.
err = ad.grad_check(loss, [w1, b1, w2], n_samples=None)
print(f"max relative error, analytic vs finite-difference gradient: {err:.1e}")

steps = 600
for step in range(steps):
    total = loss()
    total.backward()
    ad.adam_step(store, ad.cosine_lr(0.03, step, steps))
    if step % 150 == 0 or step == steps - 1:
        print(f"step {step:>3}: mse {total.item():.4f}")

with ad.count_macs() as box:
    predict(x)
print(f"one forward pass over {len(x)} points costs {box[0]} multiply-accumulates "
      f"(= 64*1*32 + 64*32*1 = {64 * 32 * 2}).")
print("Parameters live in a named store, so checkpoints are a dict of arrays:",
      list(store.state_dict()))
