"""Pure-numpy sampling kernels (fallback when the compiled extension is absent).

All kernels receive pre-built plan arrays: ``tl``/``tr`` are int32 grid
indices of shape (L, L, N) and ``wl``/``wr`` the matching interpolation
weights.  Out-of-range samples are encoded as index 0 with weight 0, and
every cell with start >= end carries all-zero weights, so plain gathers and
scatters implement the zero rule exactly.
"""

import numpy as np

NAME = "python"


def expand_forward(f, tl, tr, wl, wr):
    """(L, C) features -> (L, L, N, C) proposal feature tensor."""
    out = wl[..., None] * f[tl]
    out += wr[..., None] * f[tr]
    return out


def expand_backward(gout, tl, tr, wl, wr, length):
    """Adjoint of expand_forward: (L, L, N, C) -> (L, C)."""
    c = gout.shape[-1]
    gin = np.zeros((length, c), dtype=gout.dtype)
    flat = gout.reshape(-1, c)
    np.add.at(gin, tl.ravel(), wl.reshape(-1, 1) * flat)
    np.add.at(gin, tr.ravel(), wr.reshape(-1, 1) * flat)
    return gin


def collapse_forward(g, tl, tr, wl, wr, bias):
    """Sample a pre-collapsed grid: g (L, N, Cout) -> out (L, L, Cout).

    Computes bias + sum_n wl*g[tl, n] + wr*g[tr, n]; equivalent to
    materializing the proposal tensor and fully connecting each (N, C)
    block, but without the L*L*N*C intermediate.
    """
    ll, n = tl.shape[0], tl.shape[2]
    out = np.tile(bias, (ll, ll, 1))
    for s in range(n):
        gs = g[:, s, :]
        out += wl[:, :, s, None] * gs[tl[:, :, s]]
        out += wr[:, :, s, None] * gs[tr[:, :, s]]
    return out


def collapse_backward(gout, tl, tr, wl, wr, length):
    """Adjoint of collapse_forward: (L, L, Cout) -> grid gradient (L, N, Cout)."""
    n = tl.shape[2]
    cout = gout.shape[-1]
    flat = gout.reshape(-1, cout)
    ggrid = np.zeros((length, n, cout), dtype=gout.dtype)
    for s in range(n):
        gs = np.zeros((length, cout), dtype=gout.dtype)
        np.add.at(gs, tl[:, :, s].ravel(), wl[:, :, s].reshape(-1, 1) * flat)
        np.add.at(gs, tr[:, :, s].ravel(), wr[:, :, s].reshape(-1, 1) * flat)
        ggrid[:, s, :] = gs
    return ggrid
