"""Smoke test for the bmpc_py extension.

Build and install first:  pip install -e crates/py --no-build-isolation
"""

import json

import numpy as np

import bmpc_py


def random_stage(rng, nx, nu):
    w = rng.standard_normal((nx + nu, nx + nu))
    w = w @ w.T / (nx + nu) + 0.1 * np.eye(nx + nu)
    return {
        "A": (0.6 * np.eye(nx) + 0.3 * rng.standard_normal((nx, nx)) / np.sqrt(nx)).tolist(),
        "B": rng.standard_normal((nx, nu)).tolist(),
        "c": (0.5 * rng.standard_normal(nx)).tolist(),
        "Q": w[:nx, :nx].tolist(),
        "R": w[nx:, nx:].tolist(),
        "M": w[nx:, :nx].tolist(),
        "q": rng.standard_normal(nx).tolist(),
        "r": rng.standard_normal(nu).tolist(),
    }


def numpy_riccati(stages, p_term, q_term):
    """Plain backward Riccati recursion, written independently of the crate."""
    P, p = np.array(p_term), np.array(q_term)
    out = [(P, p)]
    for s in reversed(stages):
        A, B, c = np.array(s["A"]), np.array(s["B"]), np.array(s["c"])
        Q, R, M = np.array(s["Q"]), np.array(s["R"]), np.array(s["M"])
        q, r = np.array(s["q"]), np.array(s["r"])
        pc = p + P @ c
        H = R + B.T @ P @ B
        G = M + B.T @ P @ A
        g = r + B.T @ pc
        K = -np.linalg.solve(H, G)
        k = -np.linalg.solve(H, g)
        P = Q + A.T @ P @ A + G.T @ K
        P = 0.5 * (P + P.T)
        p = q + A.T @ pc + G.T @ k
        out.append((P, p))
    return out[::-1]


def check_scan_against_numpy():
    rng = np.random.default_rng(0)
    nx, nu, n = 4, 2, 64
    stages = [random_stage(rng, nx, nu) for _ in range(n)]
    L = rng.standard_normal((nx, nx))
    p_term = (L @ L.T / nx + 0.1 * np.eye(nx)).tolist()
    q_term = rng.standard_normal(nx).tolist()
    want = numpy_riccati(stages, p_term, q_term)
    for name in ("sequential", "tree", "parallel-tree"):
        got = bmpc_py.lqr_backward_scan(stages, p_term, q_term, name)
        assert len(got) == n + 1
        for (P, p), (Pw, pw) in zip(got, want):
            assert np.linalg.norm(np.array(P) - Pw) <= 1e-8 * np.linalg.norm(Pw)
            assert np.linalg.norm(np.array(p) - pw) <= 1e-8 * max(np.linalg.norm(pw), 1.0)
    ric = bmpc_py.lqr_riccati(stages, p_term, q_term)
    assert np.allclose(np.array(ric[0][0]), want[0][0], rtol=1e-10, atol=0)
    print("scan vs numpy Riccati: ok")


def check_topology():
    t = bmpc_py.TreeTopology(7, [(3, 2)])
    assert (t.node_count, t.horizon, len(t.leaves)) == (12, 7, 2)
    assert abs(sum(t.weight(l) for l in t.leaves) - 1.0) < 1e-12
    assert len(t.children(3)) == 2
    print("topology:", t)


def check_intersection_solve():
    prob = bmpc_py.VehicleProblem.intersection(leaves=2, horizon=31)
    states, inputs, report_json = prob.solve("pmsilqr")
    report = json.loads(report_json)
    topo = prob.topology
    assert len(states) == topo.node_count
    assert all(inputs[l] is None for l in topo.leaves)
    assert report["status"] == "converged", report["status"]
    assert report["violation"] <= 1e-4
    _, _, other = prob.solve("hypmsilqr")
    other = json.loads(other)
    assert abs(other["cost"] - report["cost"]) <= 1e-5 * abs(report["cost"])
    print(
        "intersection: cost %.6f, %d inner iterations, violation %.1e"
        % (report["cost"], report["inner_iterations"], report["violation"])
    )


def check_errors():
    try:
        bmpc_py.VehicleProblem.latency(t_sh1=0.01)
    except ValueError as e:
        print("rejected latency config:", e)
    else:
        raise AssertionError("T_sh1 <= T_sh0 should be rejected")


if __name__ == "__main__":
    check_scan_against_numpy()
    check_topology()
    check_intersection_solve()
    check_errors()
    print("smoke test passed")
