"""Independent brute-force oracles for tiny meshes.

Nothing here reuses the vectorized kernels: basis functions are built per
triangle from a monomial Vandermonde system in physical coordinates,
integrals use a Duffy-collapsed Gauss-Legendre rule, and global indices are
found by matching node coordinates.
"""
from __future__ import annotations

import math

import numpy as np

ORACLE_POINTS = 8  # per direction; exact well beyond degree 10


def _duffy_rule(m: int = ORACLE_POINTS):
    x, w = np.polynomial.legendre.leggauss(m)
    s, ws = (x + 1) / 2, w / 2
    pts, wts = [], []
    for a, wa in zip(s, ws):
        for b, wb in zip(s, ws):
            # (a, b) in the unit square -> (a, (1 - a) b) in the reference triangle
            pts.append((a, (1 - a) * b))
            wts.append(wa * wb * (1 - a))
    return np.array(pts), np.array(wts)


def _monomials(x, y):
    return np.array([1.0, x, y, x * x, x * y, y * y])


def _monomial_grads(x, y):
    return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2 * x, 0.0], [y, x], [0.0, 2 * y]])


class _Element:
    def __init__(self, corners: np.ndarray):
        self.corners = corners
        mids = [(corners[1] + corners[2]) / 2, (corners[2] + corners[0]) / 2, (corners[0] + corners[1]) / 2]
        self.nodes = np.vstack([corners, mids])
        V = np.array([_monomials(*p) for p in self.nodes])  # rows: nodes, cols: monomials
        self.coef = np.linalg.inv(V)  # column j holds the monomial coefficients of basis j
        d1 = corners[1] - corners[0]
        d2 = corners[2] - corners[0]
        self.jac = abs(d1[0] * d2[1] - d1[1] * d2[0])
        ref_pts, ref_w = _duffy_rule()
        self.points = [corners[0] + r * d1 + s * d2 for r, s in ref_pts]
        self.weights = ref_w * self.jac

    def values(self, p):
        return _monomials(*p) @ self.coef

    def grads(self, p):
        return self.coef.T @ _monomial_grads(*p)


def _node_index(layout, point, tol=1e-12) -> int:
    d = np.abs(layout.node_coords - point).sum(axis=1)
    i = int(np.argmin(d))
    if d[i] > tol:
        raise AssertionError(f"no global node at {point}")
    return i


def dense_forms(mesh, layout, w=None) -> dict:
    """Dense M, A, B and (optionally) N(w) by element loops."""
    nv, npr = layout.n_velocity, layout.n_pressure
    M = np.zeros((nv, nv))
    A = np.zeros((nv, nv))
    B = np.zeros((npr, nv))
    N = np.zeros((nv, nv)) if w is not None else None
    for t, tri in enumerate(mesh.triangles):
        el = _Element(mesh.vertices[tri])
        glob = [_node_index(layout, p) for p in el.nodes]
        for p, wq in zip(el.points, el.weights):
            phi = el.values(p)
            grad = el.grads(p)
            if w is not None:
                wv = np.zeros(2)
                for a in range(6):
                    wv += phi[a] * w[2 * glob[a] : 2 * glob[a] + 2]
            for i in range(6):
                for c in range(2):
                    I = 2 * glob[i] + c
                    B[t, I] += wq * grad[i, c]
                    for j in range(6):
                        J = 2 * glob[j] + c
                        M[I, J] += wq * phi[i] * phi[j]
                        A[I, J] += wq * (grad[i] @ grad[j])
                        if N is not None:
                            N[I, J] += wq * 0.5 * ((wv @ grad[j]) * phi[i] - (wv @ grad[i]) * phi[j])
    out = {"M": M, "A": A, "B": B}
    if N is not None:
        out["N"] = N
    return out


def dense_trilinear(mesh, w_fun, u_fun, phi_fun, points: int = ORACLE_POINTS) -> float:
    """``b(w, u, phi)`` for closed-form fields given with their Jacobians.

    Each argument maps ``(x, y)`` to ``(value (2,), jacobian (2, 2))``.
    """
    total = 0.0
    for tri in mesh.triangles:
        el = _Element(mesh.vertices[tri])
        for p, wq in zip(el.points, el.weights):
            wv, _ = w_fun(*p)
            uv, gu = u_fun(*p)
            fv, gf = phi_fun(*p)
            total += wq * 0.5 * ((gu @ wv) @ fv - (gf @ wv) @ uv)
    return total


def monomial_integral(a: int, b: int) -> float:
    """Exact integral of ``x^a y^b`` over the reference triangle."""
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


def run_selftest() -> list[tuple[str, bool, str]]:
    """Oracle checks on n <= 2 meshes: (name, passed, detail) per check."""
    from .analysis import convergence_rates
    from .assembly import assemble_convection, assemble_divergence, assemble_mass, assemble_stiffness
    from .fem import build_dof_layout, gauss_rule
    from .mesh import build_structured
    from .problems import example1, forcing_consistency_check

    results = []

    worst = 0.0
    for deg in range(1, 11):
        rule = gauss_rule(deg)
        for a in range(deg + 1):
            for b in range(deg + 1 - a):
                approx = np.sum(rule.weights * rule.xy[:, 0] ** a * rule.xy[:, 1] ** b)
                worst = max(worst, abs(approx - monomial_integral(a, b)))
    results.append(("quadrature exactness", bool(worst < 1e-13), f"max error {worst:.2e}"))

    rng = np.random.default_rng(1)
    for n in (1, 2):
        mesh = build_structured(n)
        layout = build_dof_layout(mesh)
        w = rng.standard_normal(layout.n_velocity)
        oracle = dense_forms(mesh, layout, w)
        ours = {
            "M": assemble_mass(mesh, layout),
            "A": assemble_stiffness(mesh, layout),
            "B": assemble_divergence(mesh, layout),
            "N": assemble_convection(w, mesh, layout),
        }
        diff = max(np.abs(ours[k].toarray() - oracle[k]).max() for k in ours)
        results.append((f"assembly oracle n={n}", bool(diff < 1e-13), f"max entry difference {diff:.2e}"))

    mesh = build_structured(2)
    layout = build_dof_layout(mesh)
    worst = 0.0
    for _ in range(20):
        v, w = rng.standard_normal((2, layout.n_velocity))
        N = assemble_convection(w, mesh, layout)
        worst = max(worst, abs(v @ (N @ v)) / (v @ v) / np.linalg.norm(w))
    results.append(("convection antisymmetry", bool(worst < 1e-12), f"max relative |v^T N v| {worst:.2e}"))

    rates = convergence_rates([(1 / 4, 0.430939), (1 / 8, 0.203398), (1 / 16, 0.065544), (1 / 32, 0.017502)])
    expected = [1.0832, 1.6338, 1.9049]
    ok = all(round(r, 4) == e for r, e in zip(rates, expected))
    results.append(("rate arithmetic", ok, ", ".join(f"{r:.4f}" for r in rates)))

    dev = max(forcing_consistency_check(example1(kappa=k), n_samples=200) for k in (0.0, 1e-3, 1.0))
    results.append(("manufactured forcing", bool(dev < 1e-8), f"max deviation {dev:.2e}"))
    return results
