"""Compare the compiled dense kernels against the pure-Python ones.

Runs each kernel on the classifier's working shapes and a larger stress shape,
then a full forward/backward/update pass composed from the kernels alone,
and prints a per-operation speedup table.

    python3 benchmarks/bench_backends.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from sepsis_e2e.nn.backends import dense_py
from sepsis_e2e.rng import derive_seed, make_rng

try:
    from sepsis_e2e.nn.backends import _dense_cy
except ImportError:
    _dense_cy = None

DIMS = [40, 32, 16, 8, 2]
BATCH = 32


def layer_blobs(rng, batch, d_in, d_out):
    x = rng.standard_normal((batch, d_in))
    w = rng.standard_normal((d_out, d_in)) * 0.3
    b = rng.standard_normal(d_out) * 0.1
    dy = rng.standard_normal((batch, d_out))
    return x, w, b, dy


def op_cases(rng):
    """(name, callable factory) pairs; each factory binds one backend module."""
    shapes = [(BATCH, DIMS[i], DIMS[i + 1]) for i in range(len(DIMS) - 1)]
    shapes.append((256, 128, 64))
    cases = []
    for batch, d_in, d_out in shapes:
        x, w, b, dy = layer_blobs(rng, batch, d_in, d_out)
        tag = "%dx%d->%d" % (batch, d_in, d_out)
        z = dense_py.affine(x, w, b)
        labels = rng.integers(0, 2, size=batch).astype(np.int64)
        logits = rng.standard_normal((batch, 2))
        params = rng.standard_normal(d_in * d_out)
        grads = rng.standard_normal(d_in * d_out)
        cases.append(("affine %s" % tag,
                      lambda m, x=x, w=w, b=b: m.affine(x, w, b)))
        cases.append(("affine_backward %s" % tag,
                      lambda m, x=x, w=w, dy=dy: m.affine_backward(x, w, dy)))
        cases.append(("relu %s" % tag,
                      lambda m, z=z: m.relu(z)))
        cases.append(("relu_backward %s" % tag,
                      lambda m, z=z, dy=dy: m.relu_backward(z, dy)))
        cases.append(("elementwise_mul %s" % tag,
                      lambda m, z=z: m.elementwise_mul(z, z)))
        cases.append(("softmax_ce b%d" % batch,
                      lambda m, logits=logits, labels=labels: m.softmax_ce(logits, labels)))
        cases.append(("sgd_update n%d" % (d_in * d_out),
                      lambda m, p=params, g=grads: m.sgd_update_flat(p.copy(), g, 1e-3)))
    return cases


def full_pass(module, weights, biases, x, labels, lr):
    """One forward/backward/update sweep built from the kernels alone."""
    acts = [x]
    pre = []
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = module.affine(h, w, b)
        pre.append(z)
        h = z if i == last else module.relu(z)
        acts.append(h)
    _, losses, dlogits = module.softmax_ce(acts[-1], labels)
    dy = dlogits / x.shape[0]
    for i in range(last, -1, -1):
        if i != last:
            dy = module.relu_backward(pre[i], dy)
        dx, dw, db = module.affine_backward(acts[i], weights[i], dy)
        module.sgd_update_flat(weights[i].reshape(-1), dw.reshape(-1), lr)
        module.sgd_update_flat(biases[i], db, lr)
        dy = dx
    return float(losses.sum())


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeats):
            fn()
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200,
                        help="inner-loop calls per timing sample (default 200)")
    args = parser.parse_args()

    if _dense_cy is None:
        print("compiled backend not importable; showing pure-Python timings only")
    rng = make_rng(derive_seed(0, "bench"))
    rows = []
    for name, factory in op_cases(rng):
        t_py = time_call(lambda: factory(dense_py), args.repeats)
        if _dense_cy is not None:
            t_cy = time_call(lambda: factory(_dense_cy), args.repeats)
            rows.append((name, t_py, t_cy))
        else:
            rows.append((name, t_py, None))

    def net_blobs():
        r = make_rng(derive_seed(1, "bench-net"))
        weights = [r.standard_normal((DIMS[i + 1], DIMS[i])) * 0.2
                   for i in range(len(DIMS) - 1)]
        biases = [np.zeros(DIMS[i + 1]) for i in range(len(DIMS) - 1)]
        x = r.standard_normal((BATCH, DIMS[0]))
        labels = r.integers(0, 2, size=BATCH).astype(np.int64)
        return weights, biases, x, labels

    for label, module in (("python", dense_py), ("compiled", _dense_cy)):
        if module is None:
            continue
        weights, biases, x, labels = net_blobs()
        t = time_call(lambda: full_pass(module, weights, biases, x, labels, 1e-3),
                      max(20, args.repeats // 4))
        rows.append(("full pass %s b%d" % ("x".join(map(str, DIMS)), BATCH)
                     + (" [%s]" % label), t, None))

    width = max(len(r[0]) for r in rows)
    header = "%-*s %12s %12s %9s" % (width, "operation", "python (us)",
                                     "compiled(us)", "speedup")
    print(header)
    print("-" * len(header))
    for name, t_py, t_cy in rows:
        if t_cy is None:
            print("%-*s %12.2f %12s %9s" % (width, name, t_py * 1e6, "-", "-"))
        else:
            print("%-*s %12.2f %12.2f %8.2fx"
                  % (width, name, t_py * 1e6, t_cy * 1e6, t_py / t_cy))


if __name__ == "__main__":
    main()
