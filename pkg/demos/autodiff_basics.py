"""
Reverse-mode gradients on the numpy tape
========================================

Build a small graph, pull gradients back through it, then compare against
central finite differences at 64-bit.
"""

import numpy as np

from hsifuse.tensor import Tensor, backward, check_tensors, gelu, grad_check, matmul, mean, precision, softmax

rng = np.random.default_rng(0)

# a tiny two-layer map: softmax(gelu(x W1) W2), reduced to a scalar
with precision(np.float64):
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    W1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    W2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)

    def loss():
        return mean(softmax(matmul(gelu(matmul(x, W1)), W2), axis=-1)[:, 0])

    out = loss()
    backward(out)
    print("loss", float(out.data))
    print("dloss/dW1\n", W1.grad.round(4))

    # the tape is gone after backward; the checker rebuilds the graph per probe
    rep = check_tensors(loss, {"x": x, "W1": W1, "W2": W2})
    print(f"all inputs: max relative error {rep.max_rel_error:.2e}  ok={rep.ok}")

    # single-input form: f receives the probed tensor
    rep = grad_check(lambda t: mean(gelu(t)), rng.normal(size=(3, 3)))
    print(f"gelu alone: max relative error {rep.max_rel_error:.2e}")

# precision defaults back to 32-bit outside the context
print(Tensor(np.ones(2)).dtype)
