import json

import numpy as np
import pytest

import bplab


def test_worked_example():
    r = bplab.toy1d(bplab.make_kernel("tri3"))
    assert r["maxpool"] == [0, 1, 0, 1]
    assert r["maxpool_shifted"] == [1, 1, 1, 1]
    assert r["maxblurpool"] == pytest.approx([0.5, 1, 0.5, 1], abs=1e-12)
    assert r["maxblurpool_shifted"] == pytest.approx([0.75] * 4, abs=1e-12)


def test_kernels():
    k = bplab.make_kernel("Bin-5")
    assert k.taps == [1, 4, 6, 4, 1]
    assert len(bplab.all_kernels()) == 7
    assert bplab.kernel_2d(k).sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        bplab.make_kernel("gauss")


def test_degenerate_pools_agree():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(2, 8, 8))
    np.testing.assert_array_equal(
        bplab.max_blur_pool(x, 2, bplab.make_kernel("delta1")), bplab.max_pool(x, 2, 2)
    )
    np.testing.assert_allclose(
        bplab.blur_pool(x, bplab.make_kernel("rect2")), bplab.avg_pool(x, 2, 2), atol=1e-12
    )


def test_blur_commutes_with_shift():
    x = np.random.default_rng(1).uniform(size=(6, 10))
    k = bplab.make_kernel("tri3")
    np.testing.assert_array_equal(
        bplab.apply_blur(bplab.shift_circular(x, 2, -3), k),
        bplab.shift_circular(bplab.apply_blur(x, k), 2, -3),
    )


def test_heatmap_period():
    import os

    spec = os.path.join(os.path.dirname(__file__), "..", "..", "specs", "toy-vgg-baseline.json")
    net = bplab.Network.from_spec_file(spec, seed=0)
    x = np.random.default_rng(2).uniform(size=(1, 32, 32))
    hm = net.heatmap(x, 2)
    assert hm["grid"].shape == (32, 32)
    assert hm["period"] == 2
    assert hm["grid"][::2, ::2].max() <= 1e-9
    assert hm["grid"][1::2, :].mean() > 1e-3
    assert net.infer(x).shape == (1, 4)


def test_metrics():
    a = np.zeros((1, 4, 4))
    assert bplab.psnr(a, a + 0.1) == pytest.approx(20.0)
    board = np.array([[[0.0, 1.0], [1.0, 0.0]]])
    assert bplab.image_tv(board) == pytest.approx(100.0)


def test_cli_roundtrip(tmp_path):
    code, out, err = bplab.run_cli(["psnr", "--filter", "tri3", "--out", str(tmp_path)])
    assert code == 0, err
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "psnr"
    assert "psnr.json" in manifest["outputs"]
    code, _, err = bplab.run_cli(["psnr", "--filter", "nope"])
    assert code == 2
    assert json.loads(err)["error"] == "usage"
