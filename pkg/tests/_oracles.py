"""Independent reference implementations used as test oracles.

Everything here is built on numpy/scipy directly and shares no code with
the package under test.
"""

import numpy as np
import scipy.sparse.linalg as spla


def well_conditioned(n, seed, shift=3.0):
    rng = np.random.default_rng(seed)
    A = shift * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n)
    return A, b


def gmres_residuals(A, b, steps):
    """Relative residual norms of full GMRES after 1..steps iterations (scipy)."""
    hist = []
    spla.gmres(
        A, b, rtol=1e-15, atol=0.0, restart=steps, maxiter=1,
        callback=lambda r: hist.append(float(r)), callback_type="pr_norm",
    )
    return np.array(hist)


def gmres_steps(A, b, m):
    """x after exactly m GMRES steps from zero, by dense least squares on an
    orthonormal Krylov basis (Householder QR of the Arnoldi-free basis)."""
    n = len(b)
    K = np.empty((n, m))
    q = b / np.linalg.norm(b)
    for j in range(m):
        K[:, j] = q
        q = A @ q
        q = q - K[:, : j + 1] @ (K[:, : j + 1].T @ q)
        q = q - K[:, : j + 1] @ (K[:, : j + 1].T @ q)
        nq = np.linalg.norm(q)
        if nq < 1e-14:
            K = K[:, : j + 1]
            break
        q = q / nq
    y = np.linalg.lstsq(A @ K, b, rcond=None)[0]
    return K @ y


def gmresr_residuals(A, b, m, steps):
    """Norms of linear GMRESR(m) (untruncated outer GCR) residuals."""
    r = b.copy()
    P, V, out = [], [], []
    for _ in range(steps):
        p = gmres_steps(A, r, m)
        v = A @ p
        for pi, vi in zip(P, V):
            beta = vi @ v
            v = v - beta * vi
            p = p - beta * pi
        nv = np.linalg.norm(v)
        p, v = p / nv, v / nv
        P.append(p)
        V.append(v)
        r = r - (v @ r) * v
        out.append(np.linalg.norm(r))
    return np.array(out)


def fd_derivative(f, x, q, h=1e-7):
    """Central difference of f at x along q."""
    return (f(x + h * q) - f(x - h * q)) / (2 * h)


def fd_gradient(E, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (E(x + e) - E(x - e)) / (2 * h)
    return g
