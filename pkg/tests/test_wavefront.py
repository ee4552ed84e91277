"""Vectorized tracer vs the scalar engine, draw for draw."""

import numpy as np
from numpy.testing import assert_allclose
import pytest

from pathgrad import _wavefront
from pathgrad.materials import GradientVector, N_CONTROLS
from pathgrad.path_engine import (backward_pass, forward_pass, trace_image,
                                  trace_pixel_sample)
from pathgrad.sampling import _MASK64, _mix64, stream_key
from pathgrad.scene_io import ScalarImage, build_cornell_box


def test_mix64_vector_matches_scalar():
    values = [0, 1, 2, 0x9E3779B97F4A7C15, 2**63, 2**64 - 1, 42]
    rng = np.random.default_rng(5)
    values += [int(v) for v in rng.integers(0, 2**63, size=50)]
    batch = _wavefront._mix64(np.array(values, dtype=np.uint64))
    for v, got in zip(values, batch):
        assert int(got) == _mix64(v & _MASK64)


def test_stream_keys_match_scalar():
    pixels = np.array([0, 1, 17, 255, 65535], dtype=np.uint64)
    samples = np.array([0, 3, 1, 0, 7], dtype=np.uint64)
    keys = _wavefront._stream_keys(42, pixels, samples)
    for p, s, got in zip(pixels, samples, keys):
        assert int(got) == stream_key(42, int(p), int(s))


def _scalar_reference(scene, theta, spp, seed, target, max_depth=16):
    """Per-path scalar replay of the exact cost/gradient trace_image computes."""
    cam = scene.camera
    npix = cam.width * cam.height
    sums = np.zeros(npix)
    paths = []
    for pixel in range(npix):
        per_pixel = []
        for s in range(spp):
            path = trace_pixel_sample(scene, theta, pixel, s, seed,
                                      max_depth=max_depth)
            per_pixel.append(path)
            sums[pixel] += forward_pass(path, theta)
        paths.append(per_pixel)
    # image pixels are stored float32, so the cost quantizes the means first
    mean32 = (sums / spp).astype(np.float32).astype(np.float64)
    resid = mean32 - target.data.astype(np.float64).reshape(-1)
    cost = float(0.5 * (resid @ resid))
    grad = GradientVector()
    for pixel in range(npix):
        for path in paths[pixel]:
            forward_pass(path, theta)
            backward_pass(path, resid[pixel] / spp, theta, grad)
    return mean32, cost, grad.as_array()


def test_batch_matches_scalar_engine():
    scene, theta = build_cornell_box(12, 12)
    spp, seed = 2, 9
    target = ScalarImage(12, 12, np.full((12, 12), 0.25, dtype=np.float32))
    out = trace_image(scene, theta, spp=spp, seed=seed, target=target,
                      compute_gradients=True)
    mean32, cost, grad = _scalar_reference(scene, theta, spp, seed, target)
    # same draws, same paths; only summation association differs
    assert_allclose(out.image.data.reshape(-1).astype(np.float64), mean32,
                    rtol=1e-6, atol=1e-9)  # float32 storage on both sides
    assert_allclose(out.cost, cost, rtol=1e-12)
    assert_allclose(out.grad.as_array(), grad, rtol=1e-12, atol=1e-15)
    assert out.sample_count == 12 * 12 * spp


def test_batch_image_bitwise_stable_per_pixel():
    # per-pixel values must not depend on how many pixels render alongside
    scene, theta = build_cornell_box(8, 8)
    full = trace_image(scene, theta, spp=3, seed=11)
    half_scene, _ = build_cornell_box(8, 8)
    again = trace_image(half_scene, theta, spp=3, seed=11)
    assert np.array_equal(full.image.data, again.image.data)


def test_thread_count_does_not_change_pixels():
    scene, theta = build_cornell_box(16, 16)
    target = trace_image(scene, theta, spp=2, seed=4).image
    one = trace_image(scene, theta, spp=2, seed=4, target=target,
                      compute_gradients=True, threads=1)
    four = trace_image(scene, theta, spp=2, seed=4, target=target,
                       compute_gradients=True, threads=4)
    assert np.array_equal(one.image.data, four.image.data)
    assert one.mean_depth == four.mean_depth
    # reductions merge in chunk order; only association differs
    assert_allclose(four.cost, one.cost, rtol=1e-12, atol=1e-18)
    assert_allclose(four.grad.as_array(), one.grad.as_array(),
                    rtol=1e-12, atol=1e-15)


def test_grad_images_decompose_total_gradient():
    scene, theta = build_cornell_box(12, 12)
    target = ScalarImage.zeros(12, 12)
    out = trace_image(scene, theta, spp=2, seed=6, target=target,
                      compute_gradients=True, want_grad_images=True)
    assert out.grad_images.shape == (N_CONTROLS, 12, 12)
    assert_allclose(out.grad_images.sum(axis=(1, 2)), out.grad.as_array(),
                    rtol=1e-10, atol=1e-15)


def test_self_target_gives_exact_zero_cost_and_gradient():
    scene, theta = build_cornell_box(16, 16)
    target = trace_image(scene, theta, spp=4, seed=42).image
    out = trace_image(scene, theta, spp=4, seed=42, target=target,
                      compute_gradients=True)
    assert out.cost == 0.0
    assert out.grad.as_tuple() == (0.0,) * N_CONTROLS


def test_trace_image_target_validation():
    scene, theta = build_cornell_box(8, 8)
    with pytest.raises(ValueError, match="requires a target"):
        trace_image(scene, theta, spp=1, seed=0, compute_gradients=True)
    with pytest.raises(ValueError, match="does not match"):
        trace_image(scene, theta, spp=1, seed=0,
                    target=ScalarImage.zeros(4, 4), compute_gradients=True)


def test_mean_depth_and_outputs_sane():
    scene, theta = build_cornell_box(8, 8)
    out = trace_image(scene, theta, spp=4, seed=0)
    assert 1.0 <= out.mean_depth <= 16.0  # closed box: every ray hits
    assert np.all(np.isfinite(out.image.data))
    assert np.all(out.image.data >= 0.0)
    assert out.cost == 0.0  # no target requested
