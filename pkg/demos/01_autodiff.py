"""
Reverse-mode autodiff on numpy arrays
=====================================

Build a tiny expression, backpropagate, and compare against finite differences.
"""

import numpy as np

from kfmrc import autodiff as ad
from kfmrc.autodiff import ParameterSet, Tensor

# A parameter set is a named bag of tensors that want gradients.
rng = np.random.default_rng(0)
ps = ParameterSet()
W = ps.add("W", rng.normal(size=(3, 4)))
b = ps.add("b", np.zeros(3))
x = Tensor(rng.normal(size=(5, 4)))

# Masked softmax: the last two columns are forbidden.
mask = np.array([True, True, False])


def loss():
    scores = ad.matmul(x, W.T) + b
    return -ad.log_softmax(scores, axis=-1, mask=mask)[:, 0].mean()


L = loss()
ad.backward(L)
print("loss", float(L.data))
print("dL/db", b.grad)  # masked column gets exactly zero

# Central differences over every entry, relative error per entry.
print("max relative error", ad.grad_check(ps, loss))
