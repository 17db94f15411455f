"""Independent assembly of the p = 2 system ``(M_v + tau K_Q) u = M_v f``.

Built cell by cell from the bilinear (or linear) element gradient at the
cell centre, with trapezoid nodal weights; shares no code with the package
beyond reading the grid description and the weight arrays.
"""
import itertools

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


def _corner_gradient(h):
    """Rows: partial derivatives at the centre; columns: the 2^N corners."""
    N = len(h)
    corners = list(itertools.product((0, 1), repeat=N))
    B = np.zeros((N, len(corners)))
    for k, c in enumerate(corners):
        for i in range(N):
            sign = 1.0 if c[i] else -1.0
            B[i, k] = sign / h[i] / 2 ** (N - 1)
    return corners, B


def assemble(shape, lower, upper, Q, v):
    shape = tuple(shape)
    N = len(shape)
    h = [(b - a) / (n - 1) for a, b, n in zip(lower, upper, shape)]
    vol = float(np.prod(h))
    corners, B = _corner_gradient(h)
    strides = [int(np.prod(shape[i + 1:])) for i in range(N)]
    cell_shape = [n - 1 for n in shape]
    rows, cols, vals = [], [], []
    for c, idx in enumerate(itertools.product(*[range(m) for m in cell_shape])):
        nodes = [sum((idx[i] + cr[i]) * strides[i] for i in range(N)) for cr in corners]
        Kloc = vol * B.T @ Q[c] @ B
        for a, na in enumerate(nodes):
            for b, nb in enumerate(nodes):
                rows.append(na)
                cols.append(nb)
                vals.append(Kloc[a, b])
    n = int(np.prod(shape))
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    w = np.ones(shape)
    for i in range(N):
        wi = np.full(shape[i], h[i])
        wi[0] = wi[-1] = h[i] / 2
        w = w * wi.reshape([-1 if j == i else 1 for j in range(N)])
    M = sp.diags(v * w.ravel())
    return M, K


def solve_step(shape, lower, upper, Q, v, f, tau):
    M, K = assemble(shape, lower, upper, Q, v)
    grids = np.indices(shape).reshape(len(shape), -1)
    interior = np.ones(grids.shape[1], dtype=bool)
    for i, n in enumerate(shape):
        interior &= (grids[i] > 0) & (grids[i] < n - 1)
    idx = np.flatnonzero(interior)
    A = (M + tau * K).tocsr()[idx][:, idx]
    u = np.zeros_like(f)
    u[idx] = spsolve(A.tocsc(), (M @ f)[idx])
    return u
