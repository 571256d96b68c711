"""Compare the numpy and numba element kernels.

Usage: python benchmarks/bench_kernels.py [--res 24] [--repeat 5]

Times geometry, mass and tensor curl-curl element matrices on a Kuhn box
mesh with both backends, checks that they agree and prints a table.
"""

import argparse
import time

import numpy as np

from nhdms import _backend
from nhdms.fem import kernels as K
from nhdms.mesh import build_box_mesh


def _workload(points, tets, eps, tensor):
    vol, grads = K.tet_geometry(points, tets)
    w1, w2 = K.whitney1(grads), K.whitney2(grads)
    curls = K.edge_curls(grads)
    # scalar curl-curl is a single einsum on both backends, so time the tensor one
    return {
        "geometry": lambda: K.tet_geometry(points, tets),
        "mass_edge": lambda: K.mass(vol, w1, w1, eps),
        "mass_face": lambda: K.mass(vol, w2, w2),
        "mass_tensor": lambda: K.mass(vol, w2, w2, tensor),
        "curlcurl": lambda: K.curlcurl(vol, curls, tensor),
    }


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--res", type=int, default=24, help="grid cells per axis")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not _backend.HAVE_NUMBA:
        raise SystemExit("numba is not installed")

    mesh = build_box_mesh([0, 0, 0], [1, 1, 1], args.res)
    rng = np.random.default_rng(0)
    eps = rng.uniform(1, 10, mesh.n_tets) + 1j * rng.uniform(0, 1, mesh.n_tets)
    tensor = rng.normal(size=(mesh.n_tets, 3, 3)) + 1j * rng.normal(size=(mesh.n_tets, 3, 3))
    results = {}
    old = _backend.active_backend()
    try:
        for name in ("numpy", "numba"):
            _backend.set_backend(name)
            work = _workload(mesh.points, mesh.tets, eps, tensor)
            for fn in work.values():  # warm up (numba compiles here)
                fn()
            results[name] = {k: _best(fn, args.repeat) for k, fn in work.items()}
    finally:
        _backend.set_backend(old)

    print(f"{mesh.n_tets} tets, best of {args.repeat}")
    print(f"{'kernel':<12}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}  agree")
    for k in results["numpy"]:
        (tn, a), (tb, b) = results["numpy"][k], results["numba"][k]
        a, b = (a[1], b[1]) if isinstance(a, tuple) else (a, b)
        print(f"{k:<12}{tn:>12.4f}{tb:>12.4f}{tn / tb:>10.2f}  {np.allclose(a, b, rtol=1e-12, atol=1e-12)}")


if __name__ == "__main__":
    main()
