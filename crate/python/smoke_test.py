"""Smoke test for the riskpde extension module.

Build and install it first, e.g. `maturin develop -m crates/python/Cargo.toml`
or `pip install ./crates/python`, then run `python python/smoke_test.py`.
"""

import math
import pathlib
import tempfile

import riskpde

ROOT = pathlib.Path(__file__).resolve().parent.parent
DESK = ROOT / "configs" / "desk.json"


def main():
    diag, off = riskpde.mass_matrix(4, 1.0)
    assert len(diag) == 3 and len(off) == 2
    assert math.isclose(diag[0], 2 * 0.25 / 3) and math.isclose(off[0], 0.25 / 6)

    nodes, weights = riskpde.collocation_grid(2, 3)
    assert len(nodes) == 9 and math.isclose(sum(weights), 1.0)

    problem = riskpde.Problem.from_file(str(DESK))
    n_nodes, n_t, n_interior = problem.shape
    assert (n_nodes, n_t, n_interior) == (9, 20, 15)

    u = problem.random_control(1)
    w = problem.random_control(2)
    g = problem.gradient(u)
    adjoint = problem.inner_product(g, w)
    fd = problem.fd_directional(u, w)
    assert abs(fd - adjoint) <= 1e-6 * abs(adjoint), (fd, adjoint)

    u_star, report = problem.solve()
    assert report["converged"], report
    assert report["complementarity_residual"] <= 1e-6
    assert min(u_star) >= 0.0

    estimate, std_error = problem.mc_objective(u_star, 2000, 7)
    total = problem.objective(u_star)["total"]
    assert abs(estimate - total) <= 4 * std_error, (estimate, total, std_error)

    unconstrained = riskpde.Problem.from_json(
        problem.config_json().replace('"constrained": true', '"constrained": false')
    )
    _, control, _ = unconstrained.kkt_solve()
    assert len(control) == n_nodes * (n_t + 1) * n_interior

    with tempfile.TemporaryDirectory() as out:
        solved = riskpde.run_solve(str(DESK), out)
        assert solved["converged"]
        assert (pathlib.Path(out) / "std_y.csv").is_file()
    assert riskpde.run_gradcheck(str(DESK))["max_rel_error"] <= 1e-6

    try:
        riskpde.Problem.from_json('{"mesh": {}}')
    except ValueError as e:
        assert "mesh" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    print("smoke test passed: J* = %.10e after %d iterations" % (total, report["iterations"]))


if __name__ == "__main__":
    main()
