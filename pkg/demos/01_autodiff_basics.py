"""A tour of the minimal reverse-mode tensor engine.

Builds a small expression graph by hand, runs backward, and checks one
gradient against a central finite difference.
"""

import numpy as np

from mmsep import tensor as T
from mmsep.tensor import Tensor

rng = np.random.default_rng(0)

# Leaf tensors: requires_grad marks them as trainable.
x = Tensor(rng.standard_normal((3, 4)), requires_grad=True, name="x")
w = Tensor(rng.standard_normal((4, 2)), requires_grad=True, name="w")

# y = mean(|tanh(x @ w)|) -- every op records its backward closure.
y = T.mean(T.abs_(T.tanh(T.matmul(x, w))))
print("loss:", y.data)

T.backward(y)
print("dL/dw[0, 0] from autodiff:", w.grad[0, 0])

# Compare against a central finite difference on the same coordinate.
h = 1e-6
w.data[0, 0] += h
up = T.mean(T.abs_(T.tanh(T.matmul(x, w)))).data
w.data[0, 0] -= 2 * h
down = T.mean(T.abs_(T.tanh(T.matmul(x, w)))).data
w.data[0, 0] += h
print("dL/dw[0, 0] from finite diff:", (up - down) / (2 * h))

# The convolution pair used by the U-Net is an exact adjoint pair:
# <conv(x), y> == <x, conv_transpose(y)>, sharing the same weight array
# (the (C_out, C_in, K) conv weight is viewed as (C_in, C_out, K)).
cx = rng.standard_normal((2, 16))
cw = rng.standard_normal((3, 2, 4))
cy = rng.standard_normal((3, 8))
lhs = (T.conv1d(Tensor(cx), Tensor(cw), stride=2, padding=1).data * cy).sum()
rhs = (T.conv_transpose1d(Tensor(cy), Tensor(cw), stride=2, padding=1).data
       * cx).sum()
print("adjoint identity |<Ax,y> - <x,A*y>|:", abs(lhs - rhs))
