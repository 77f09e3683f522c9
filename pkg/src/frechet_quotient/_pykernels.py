"""Pure numpy versions of the registration kernels in ``_ckernels.pyx``."""
import numpy as np

# Elements per temporary (rows x group x dim) block.
_BLOCK = 1 << 22


def finite_sup_inner(X, m, perm, rtol):
    n, N = X.shape
    G = perm.shape[0]
    idx = np.empty(n, dtype=np.intp)
    sup = np.empty(n, dtype=np.float64)
    mnorm = np.sqrt(np.sum(m * m))
    rows = max(1, _BLOCK // max(1, G * N))
    for start in range(0, n, rows):
        block = X[start:start + rows]
        # Accumulate coordinate by coordinate, in the same order as the
        # compiled loop, so the sums do not depend on the block shape.
        vals = np.zeros((len(block), G))
        xnorm2 = np.zeros(len(block))
        for k in range(N):
            vals += block[:, perm[:, k]] * m[k]
            xnorm2 += block[:, k] * block[:, k]
        best = vals.max(axis=1)
        thr = best - rtol * np.sqrt(xnorm2) * mnorm
        choice = np.argmax(vals >= thr[:, None], axis=1)
        idx[start:start + rows] = choice
        sup[start:start + rows] = vals[np.arange(len(block)), choice]
    return idx, sup


def finite_gather(X, perm, idx):
    return np.take_along_axis(X, perm[idx], axis=1)
