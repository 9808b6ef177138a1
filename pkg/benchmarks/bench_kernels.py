"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Times the batched forward/backward used by NEB, one Adam training run, and
a full pair experiment at layer 0, once per available backend.
"""
import argparse
import time

import numpy as np

import mepconnect
from mepconnect.classifier import MlpSpec, TrainConfig, init_model, make_dataset, train_adam
from mepconnect.diffcore import grad_wrt_params, loss_and_input_grads
from mepconnect.pathfind import ClassifierEnergy, NebConfig, connect_pair, neb_relax, straight_line_path


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    data = make_dataset("rings", 400, seed=3)
    model = init_model(MlpSpec((2, 32, 32, 2), 1))
    trained, _ = train_adam(model, data, TrainConfig(epochs=200))
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(22, 2))
    batch = (data.points[:32], data.labels[:32])

    cases = {
        "input grads, 22 pivots x1000": lambda: [loss_and_input_grads(trained.layers, Z, 1) for _ in range(1000)],
        "param grads, batch 32 x1000": lambda: [grad_wrt_params(trained.layers, batch) for _ in range(1000)],
        "train_adam, 20 epochs": lambda: train_adam(model, data, TrainConfig(epochs=20)),
        "neb_relax, 200 iterations": lambda: neb_relax(
            straight_line_path([1.625, 0.0], [-1.625, 0.1], 20), ClassifierEnergy(trained, 0, 1),
            NebConfig(max_iters=200, force_tol=0.0, step_size=0.005)),
        "connect_pair, antipodal, N=20": lambda: connect_pair(
            trained, 0, np.array([1.625, 0.0]), np.array([-1.625, 0.0]), NebConfig()),
    }
    results = {}
    for name in mepconnect.available_backends():
        mepconnect.set_backend(name)
        results[name] = {case: best_of(fn, args.repeat) for case, fn in cases.items()}
    names = list(results)
    print(f"{'case':34s}" + "".join(f"{n:>12s}" for n in names) + ("    speedup" if len(names) == 2 else ""))
    for case in cases:
        row = f"{case:34s}" + "".join(f"{results[n][case] * 1e3:10.1f}ms" for n in names)
        if len(names) == 2:
            row += f"  {results['python'][case] / results['cython'][case]:8.2f}x"
        print(row)


if __name__ == "__main__":
    main()
