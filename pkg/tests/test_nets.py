import numpy as np
import pytest

from iddm import (
    Architecture,
    CheckpointError,
    adam_update,
    denoiser_architecture,
    denoiser_forward,
    htnet_architecture,
    htnet_forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    time_embedding,
)
from iddm import autodiff as ad
from iddm.autodiff import Tensor
from iddm.nets import _param_spec, unet_forward


def _inputs(rng, n=1, size=8):
    x = rng.standard_normal((n, size, size, 3))
    h = rng.uniform(0, 1, (n, size, size, 3))
    hazy = rng.uniform(0, 1, (n, size, size, 3))
    t = rng.integers(1, 200, size=n)
    return x, h, hazy, t


def test_init_determinism_and_bounds():
    arch = denoiser_architecture()
    p1 = init_params(arch, seed=42)
    p2 = init_params(arch, seed=42)
    p3 = init_params(arch, seed=43)
    assert p1.nbytes_equal(p2)
    assert not p1.nbytes_equal(p3)
    for name, shape in _param_spec(arch):
        data = p1.tensors[name].data
        assert data.shape == shape
        if name.endswith(".b") or name == "out.w":
            assert np.all(data == 0)  # zeroed output head; see init_params
        else:
            fan_in = int(np.prod(shape[:-1]))
            assert np.abs(data).max() <= np.sqrt(6.0 / fan_in)
            assert np.any(data != 0)
        assert p1.tensors[name].grad.shape == shape


def test_architecture_validation():
    with pytest.raises(ValueError):
        Architecture(in_channels=0)
    with pytest.raises(ValueError):
        Architecture(in_channels=3, emb_dim=7)
    with pytest.raises(ValueError):
        htnet_architecture(inputs="nonsense")


def test_time_embedding_contract():
    emb = time_embedding([0, 1, 500, 1000], 16)
    assert emb.shape == (4, 16)
    assert np.all(np.abs(emb) <= 1.0)
    np.testing.assert_array_equal(emb, time_embedding([0, 1, 500, 1000], 16))
    assert np.any(emb[1] != emb[2])


def test_denoiser_shape_contract_and_zero_params():
    rng = np.random.default_rng(0)
    p = init_params(denoiser_architecture(), seed=1)
    x, h, hazy, t = _inputs(rng, n=2, size=8)
    out = denoiser_forward(p, x.astype(np.float32), h.astype(np.float32),
                           hazy.astype(np.float32), t)
    assert out.shape == (2, 8, 8, 3)

    for tensor in p.tensors.values():
        tensor.data[...] = 0.0
    out = denoiser_forward(p, x.astype(np.float32), h.astype(np.float32),
                           hazy.astype(np.float32), t)
    assert np.all(out.data == 0.0)

    with pytest.raises(ValueError):
        denoiser_forward(p, x[:, :4], h, hazy, t)  # mismatched shapes


def test_denoiser_accepts_unbatched_images():
    rng = np.random.default_rng(1)
    p = init_params(denoiser_architecture(), seed=2)
    x, h, hazy, _ = _inputs(rng, n=1, size=8)
    single = denoiser_forward(p, x[0], h[0], hazy[0], 7)
    batched = denoiser_forward(p, x, h, hazy, [7])
    assert single.shape == (8, 8, 3)
    np.testing.assert_array_equal(single.data, batched.data[0])


def test_htnet_nonnegative_output():
    rng = np.random.default_rng(2)
    for inputs, channels in (("xt", 3), ("xt_hazy", 6)):
        arch = htnet_architecture(inputs=inputs)
        assert arch.in_channels == channels
        p = init_params(arch, seed=3)
        x, _, hazy, t = _inputs(rng, n=2, size=8)
        out = htnet_forward(p, (x * 5).astype(np.float32), hazy.astype(np.float32), t)
        assert out.shape == (2, 8, 8, 3)
        assert np.all(out.data >= 0.0)


def test_odd_spatial_dims_rejected():
    p = init_params(denoiser_architecture(), seed=4)
    bad = np.zeros((1, 7, 8, 9), dtype=np.float32)
    with pytest.raises(ValueError):
        unet_forward(p, Tensor(bad), 1)


def _fd_check_network(arch, forward, n_coords=60, seed=5):
    """Central finite differences on random parameter coordinates, 64-bit."""
    rng = np.random.default_rng(seed)
    p = init_params(arch, seed=seed, dtype=np.float64)
    # the output head starts at zero, which would zero every interior
    # gradient; randomize it so the check exercises the whole graph
    head = p.tensors["out.w"]
    bound = np.sqrt(6.0 / np.prod(head.data.shape[:-1]))
    head.data = rng.uniform(-bound, bound, head.data.shape)
    x = rng.standard_normal((1, 8, 8, 3))
    hazy = rng.uniform(0, 1, (1, 8, 8, 3))
    proj = rng.standard_normal((1, 8, 8, arch.out_channels))

    def loss_value():
        return float(ad.sum_(ad.mul(forward(p, x, hazy), Tensor(proj))).data)

    p.zero_grad()
    ad.sum_(ad.mul(forward(p, x, hazy), Tensor(proj))).backward()

    names = sorted(p.tensors)
    checked = 0
    step = 1e-4
    while checked < n_coords:
        name = names[int(rng.integers(len(names)))]
        data = p.tensors[name].data
        idx = np.unravel_index(int(rng.integers(data.size)), data.shape)
        old = data[idx]
        data[idx] = old + step
        hi = loss_value()
        data[idx] = old - step
        lo = loss_value()
        data[idx] = old
        fd = (hi - lo) / (2 * step)
        an = p.tensors[name].grad[idx]
        denom = max(abs(fd), abs(an))
        assert (abs(fd - an) <= 1e-3 * denom) or (abs(fd - an) <= 1e-8), (
            f"{name}{idx}: analytic {an} vs fd {fd}"
        )
        checked += 1


def test_denoiser_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    h = rng.uniform(0, 1, (1, 8, 8, 3))
    _fd_check_network(
        denoiser_architecture(base_width=8, emb_dim=8),
        lambda p, x, hazy: denoiser_forward(p, x, h, hazy, 13),
    )


def test_htnet_gradients_match_finite_differences():
    _fd_check_network(
        htnet_architecture(base_width=8, emb_dim=8),
        lambda p, x, hazy: htnet_forward(p, x, hazy, 101),
    )


def test_adam_zero_gradients_leave_parameters_unchanged():
    p = init_params(denoiser_architecture(base_width=4), seed=7)
    before = {k: t.data.copy() for k, t in p.tensors.items()}
    p.zero_grad()
    adam_update(p, lr=1e-3)
    for k, t in p.tensors.items():
        np.testing.assert_array_equal(t.data, before[k])


def test_adam_first_step_magnitude():
    # beta1 = 0.9, beta2 = 0.99, g = 1: bias correction gives step ~ lr/(1 + eps)
    p = init_params(htnet_architecture(base_width=4), seed=8, dtype=np.float64)
    before = p.tensors["stem.w"].data.copy()
    for t in p.tensors.values():
        t.grad = np.ones_like(t.data)
    adam_update(p, lr=1e-5)
    delta = p.tensors["stem.w"].data - before
    np.testing.assert_allclose(delta, -1e-5 / (1.0 + 1e-8), rtol=1e-5)


def test_adam_constant_gradient_converges_to_lr_steps():
    p = init_params(htnet_architecture(base_width=4), seed=9)
    g = 3.7
    last = None
    for _ in range(200):
        before = p.tensors["stem.b"].data.copy()
        for t in p.tensors.values():
            t.grad = np.full_like(t.data, g)
        adam_update(p, lr=1e-3)
        last = np.abs(p.tensors["stem.b"].data - before)
    np.testing.assert_allclose(last, 1e-3, rtol=1e-3)


def test_adam_requires_populated_gradients():
    p = init_params(htnet_architecture(base_width=4), seed=10)
    p.tensors["stem.w"].grad = None
    with pytest.raises(ValueError):
        adam_update(p, lr=1e-3)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(denoiser_architecture(base_width=8), seed=11)
    for t in p.tensors.values():
        t.grad = np.ones_like(t.data) * 0.1
    adam_update(p, lr=1e-3)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, p, meta={"T": 200, "role": "denoiser"})

    q, meta = load_checkpoint(path)
    assert meta == {"T": 200, "role": "denoiser"}
    assert q.arch == p.arch
    assert q.adam_step == 1
    assert q.nbytes_equal(p)
    for name in p.tensors:
        np.testing.assert_array_equal(q.adam_m[name], p.adam_m[name])
        np.testing.assert_array_equal(q.adam_v[name], p.adam_v[name])


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTIDDM" + b"\x00" * 64)
    with pytest.raises(CheckpointError):
        load_checkpoint(str(bad))

    p = init_params(htnet_architecture(base_width=4), seed=12)
    good = tmp_path / "good.ckpt"
    save_checkpoint(str(good), p)
    blob = bytearray(good.read_bytes())
    blob[13:20] = b"garbage"  # stomp on the JSON header
    (tmp_path / "trunc.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "trunc.ckpt"))


def test_forward_is_pure():
    rng = np.random.default_rng(13)
    p = init_params(denoiser_architecture(), seed=14)
    x, h, hazy, t = _inputs(rng, n=1, size=8)
    a = denoiser_forward(p, x, h, hazy, t).data
    b = denoiser_forward(p, x, h, hazy, t).data
    np.testing.assert_array_equal(a, b)
