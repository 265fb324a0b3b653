"""Smoke test for the oodbound Python extension."""

import csv
import io
import math

import oodbound


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    # concentration term at K=1000, n=500, delta=0.05 is 5.0086...·M
    conc = oodbound.concentration_term(1.0, 1000, 500, 0.05)
    expected = 3.0 * math.sqrt((2 * 1000 * math.log(2) + 2 * math.log(2 / 0.05)) / 500)
    assert close(conc, expected), conc

    robust = oodbound.robust_ood_bound(0.1, 1.0, 0.05, 0.2, 1000, 500)
    assert robust.method == "robust"
    assert close(robust.total, 0.1 + 0.05 + 0.4 + conc)
    assert robust.as_dict()["K"] == "1000"

    zhao = oodbound.zhao_bound(0.1, 0.2, 101, 500)
    assert zhao.total > robust.total
    pac = oodbound.pacbayes_bound(0.1, 0.05, 2.0, 500)
    assert pac.total > 0.1

    assert close(oodbound.success_probability(2, 4.0), 2.0 / 3.0)
    assert oodbound.success_probability(7, 1.0) == 0.0

    assert oodbound.tv_distance([0, 0, 1], [0, 0, 1]) == 0.0
    assert close(oodbound.tv_distance([0, 0], [1, 1]), 2.0)

    x, y, groups = oodbound.gen_spurious(n=200, d=10, p_maj=0.9, seed=1)
    assert len(x) == 200 and len(x[0]) == 20 and len(groups) == 200
    part = oodbound.Partition(x, k_target=64, seed=3)
    assert part.k == 64
    cells = part.assign(x)
    assert all(0 <= c < part.k for c in cells)
    assert part.tv_distance(x, x) == 0.0

    theta = oodbound.fit_ridge(x, y, 0.5)
    rep = oodbound.ridge_sharpness(x, theta, 0.5, convention="dimensional")
    n, d = len(x), len(x[0])

    def objective(w):
        res = sum((sum(a * b for a, b in zip(row, w)) - t) ** 2 for row, t in zip(x, y))
        return res / (2 * n) + 0.5 * 0.5 * sum(v * v for v in w)

    fd = oodbound.hessian_trace_fd(objective, theta, 1e-3)
    assert close(rep.kappa, sum(t * t for t in theta) * fd, 1e-4), (rep.kappa, fd)
    assert 1.0 <= rep.n_prime_hat <= n
    assert d == 20

    assert close(oodbound.spearman([1, 2, 3, 4], [1, 3, 2, 4]), 0.8)

    text = oodbound.run_experiment("diag-trajectory")
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["t", "loss", "kappa", "epsilon_proxy", "c2_times_sup_kappa", "seed"]
    assert text == oodbound.run_experiment("diag-trajectory")

    try:
        oodbound.run_experiment("no-such-experiment")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown experiment accepted")

    print("oodbound", oodbound.__version__, "smoke test passed")


if __name__ == "__main__":
    main()
