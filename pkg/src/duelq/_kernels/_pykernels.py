"""Pure NumPy kernels for the dense layer-chain hot path.

Reference backend: always importable, used when the compiled extension is
missing. Signatures are shared with the Cython backend; both operate on
float64 C-contiguous arrays.
"""

import numpy as np

NAME = "python"


def chain_forward(ws, bs, acts, x):
    """Run a batch through an affine chain, returning per-layer activations.

    Args:
        ws: weight matrices, each (out, in).
        bs: bias vectors, each (out,).
        acts: per-layer activation flags (1 rectifier, 0 identity).
        x: input batch (n, in0).

    Returns:
        List of post-activation arrays, one per layer, each (n, out_k).
    """
    outs = []
    a = x
    for w, b, act in zip(ws, bs, acts):
        z = a @ w.T
        z += b
        if act:
            np.maximum(z, 0.0, out=z)
        outs.append(z)
        a = z
    return outs


def chain_backward(ws, acts, x, outs, gout, dws, dbs):
    """Backpropagate through an affine chain, accumulating parameter grads.

    ``dws``/``dbs`` are zero-initialized buffers that receive the summed
    (over the batch) gradients. Returns the gradient with respect to ``x``.
    """
    g = gout
    for k in range(len(ws) - 1, -1, -1):
        if acts[k]:
            g = np.where(outs[k] > 0.0, g, 0.0)
        a_prev = outs[k - 1] if k > 0 else x
        dws[k] += g.T @ a_prev
        dbs[k] += g.sum(axis=0)
        g = g @ ws[k]
    return g
