"""Smoke test for the nbf_py extension module.

Build it first, for example with
    cargo build -p nbf-py --release --features extension-module
    cp target/release/libnbf_py.so python/nbf_py.so
or `pip install ./crates/py` when maturin is available.
"""

import math
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import nbf_py  # noqa: E402


def check(name, ok):
    print(f"{name}: {'ok' if ok else 'FAIL'}")
    if not ok:
        sys.exit(1)


def main():
    w = nbf_py.freestream_state(10.0)
    check("freestream density", w[0] == 1.0 and w[2] == 0.0)

    f = nbf_py.rusanov_flux(w, w, [1.0, 0.0])
    p = 0.4 * (w[3] - 0.5 * w[0] * w[1] ** 2)
    check("rusanov consistency", abs(f[1] - (w[0] * w[1] ** 2 + p)) <= 1e-9 * abs(f[1]))

    check("relative l2", nbf_py.relative_l2([1.0, 1.0], [1.0, 0.0]) == 1.0)

    net = nbf_py.Mlp([2, 6, 6, 1], "tanh", 3)
    x = [0.3, -0.7]
    jac = net.input_jacobian(x)[0]
    h = 1e-6
    fd = []
    for k in range(2):
        xp, xm = list(x), list(x)
        xp[k] += h
        xm[k] -= h
        fd.append((net.forward(xp)[0] - net.forward(xm)[0]) / (2 * h))
    check("mlp jacobian", all(abs(a - b) < 1e-6 for a, b in zip(jac, fd)))

    rng = random.Random(0)
    cols = [[rng.gauss(0, 1) for _ in range(12)] for _ in range(5)]
    basis = nbf_py.pod_basis(cols, 5)
    modes = basis["modes"]
    gram = max(
        abs(sum(a * b for a, b in zip(modes[i], modes[j])) - (1.0 if i == j else 0.0))
        for i in range(5)
        for j in range(5)
    )
    check("pod orthonormality", gram < 1e-10)

    grid = nbf_py.Grid(12, 10, 4.0)
    states, residuals, _ = grid.solve(10.0, max_iters=200)
    check("solver runs", len(states) == grid.num_cells and len(residuals) == 200)
    check("solver finite", all(math.isfinite(v) for s in states for v in s))

    try:
        nbf_py.NbfModel.load("no-such-bundle")
    except RuntimeError as e:
        check("missing bundle", "model bundle not found" in str(e))
    print("smoke test passed")


if __name__ == "__main__":
    main()
