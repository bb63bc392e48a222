"""Smoke test for the `skim` extension module.

Build and install it first:

    pip install --no-build-isolation -e crates/python
    python python/smoke_test.py
"""

import math
import os
import tempfile

import skim


def check_solvers():
    a = [[1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 3.0, 1.0]]
    w0 = [[0.5, -2.0]]
    y = [[sum(w0[0][i] * a[i][t] for i in range(2)) for t in range(4)]]
    w = skim.solve_batch(a, y)
    assert all(abs(w[0][i] - w0[0][i]) < 1e-10 for i in range(2)), w
    p = skim.pseudoinverse(a)
    assert len(p) == 4 and len(p[0]) == 2
    ridge = skim.solve_ridge(a, y, 1e-12)
    assert abs(ridge[0][0] - 0.5) < 1e-6


def check_kernels_and_error():
    assert abs(skim.eval_response("alpha", 25.0, tau=25.0) - math.exp(-1)) < 1e-12
    assert abs(skim.eval_response("damped_resonance", math.pi / 0.2, tau=30.0, omega=0.2)) < 1e-12
    value, degenerate = skim.wills_error(45, 9, 5, 441)
    assert abs(value - (5 / 45 + 9 / 441)) < 1e-12 and not degenerate
    value, degenerate = skim.wills_error(0, 0, 3, 10)
    assert math.isinf(value) and degenerate


def check_network():
    raster, target, windows = skim.gen_embedded_task(seed=4, stream_len=8000, num_embeddings=20)
    assert raster.num_channels == 4 and raster.num_steps == 8000
    assert len(windows) == 20 and len(target[0]) == 8000
    again = skim.SpikeRaster.from_text(raster.to_text())
    assert again.events == raster.events

    net = skim.Network(4, 30, seed=4)
    assert net.output_weights is None
    net.fit([raster], [target])
    activations, soma, spikes = net.forward(raster)
    assert len(activations) == 30 and len(soma[0]) == 8000
    hits = sum(any(s <= t < e for t in spikes[0]) for s, e in windows)
    assert hits >= 15, hits

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "net.json")
        net.save(path)
        loaded = skim.Network.load(path)
        assert loaded.to_json() == net.to_json()

    pruned, report = net.prune_two_pass([raster], [target], keep=15)
    assert pruned.num_dendrites == 15
    assert len(report["kept_indices"]) == 15

    try:
        skim.Network(4, 0)
    except ValueError as e:
        assert "num_dendrites" in str(e)
    else:
        raise AssertionError("zero dendrites accepted")


def check_pattern_run():
    m = skim.run_pattern_task(seed=1, num_dendrites=30, stream_len=10000, num_embeddings=25,
                              test_stream_len=6000, test_embeddings=12)
    assert m["counts"]["true_positives"] + m["counts"]["false_negatives"] == 12
    assert m["num_dendrites"] == 30


if __name__ == "__main__":
    check_solvers()
    check_kernels_and_error()
    check_network()
    check_pattern_run()
    print("skim smoke test passed")
