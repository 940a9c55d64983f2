# %% [markdown]
# # The tape autograd, one op at a time
#
# Everything in jcdnet is built on a small reverse-mode tape over numpy
# arrays.  This script pokes at it the way you would in a notebook: build a
# few expressions, look at the gradients, then let the finite-difference
# checker audit every op the model uses.

# %%
import numpy as np

from jcdnet import autograd as ag
from jcdnet.cli import cmd_gradcheck
from jcdnet.gradcheck import grad_check

# %% [markdown]
# Scalars first.  `backward` fills `.grad` on every leaf that asked for it.

# %%
w = ag.Tensor(3.0, requires_grad=True)
loss = w * w
ag.backward(loss)
print("d(w^2)/dw at 3:", w.grad)

# %% [markdown]
# Top-k mean is the pooling behind every MIL loss.  With a tie the gradient
# goes to the earliest index, which keeps runs reproducible.

# %%
x = ag.Tensor([2.0, 2.0, 1.0], requires_grad=True)
ag.backward(ag.topk_mean(x, 1))
print("topk_mean([2,2,1], k=1) gradient:", x.grad)

# %% [markdown]
# Temporal convolution with zero padding: a box filter over [1, 2, 3].

# %%
seq = ag.Tensor(np.array([[1.0], [2.0], [3.0]]))
kernel = ag.Tensor(np.ones((3, 1, 1)))
print("box filter:", ag.conv1d(seq, kernel, ag.Tensor(np.zeros(1))).data.ravel())

# %% [markdown]
# The checker compares backprop with central differences in float64.  It
# skips coordinates whose perturbation flips a relu sign or a top-k choice,
# and reports how many it skipped.

# %%
with ag.precision(np.float64):
    a = ag.Tensor(np.random.default_rng(0).normal(size=(4, 3)), requires_grad=True)
    res = grad_check(lambda a: ag.topk_mean(ag.softmax(a, axis=1)[:, 0], 2), [a])
print(f"softmax -> top-k: max rel err {res.max_rel_error:.2e}, {res.checked} checked, {res.excluded} at kinks")

# %% [markdown]
# The full audit: every primitive, both model branches and every loss.

# %%
exit_code = cmd_gradcheck()
print("exit code:", exit_code)
