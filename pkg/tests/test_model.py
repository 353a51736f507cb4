import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import precise.autograd as ag
from precise.autograd import ShapeError, Tensor
from precise.gradcheck import check_instance
from precise.model import (ArchSpec, PrototypeBank, classify, decode, encode, forward, init_model,
                           prototype_distances)

from . import oracles


def test_same_seed_bit_identical():
    arch = ArchSpec((4, 4), (6,), 3)
    a, b = init_model(arch, 2, 2, seed=3), init_model(arch, 2, 2, seed=3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    c = init_model(arch, 2, 2, seed=4)
    assert c.encoder[0][0].data.tobytes() != a.encoder[0][0].data.tobytes()


def test_bank_layout_two_per_class():
    model = init_model(ArchSpec((4, 4), (6,), 5), 2, 2)
    assert model.bank.prototypes.shape == (4, 5)
    assert list(model.bank.reserved(0)) == [0, 1] and list(model.bank.reserved(1)) == [2, 3]


def test_bank_three_per_class_three_classes():
    assert init_model(ArchSpec((4, 4), (6,), 5), 3, 3).bank.m == 9


def test_init_rejects_bad_counts():
    with pytest.raises(ValueError):
        init_model(ArchSpec((4, 4), (6,), 3), 0, 2)
    with pytest.raises(ValueError):
        init_model(ArchSpec((4, 4), (6,), 3), 2, 1)
    with pytest.raises(ValueError):
        ArchSpec((4, 4), (0,), 3)


@given(st.integers(1, 6), st.integers(2, 6))
def test_reservation_partition(d, N):
    bank = PrototypeBank(Tensor(np.zeros((d * N, 2))), d, N)
    blocks = [set(bank.reserved(j)) for j in range(N)]
    assert set().union(*blocks) == set(range(d * N))
    assert all(a.isdisjoint(b) for a, b in itertools.combinations(blocks, 2))
    assert all(bank.class_of(k) == j for j, blk in enumerate(blocks) for k in blk)


def test_glorot_bounds():
    model = init_model(ArchSpec((4, 4), (6,), 3), 1, 2, seed=0)
    w = model.encoder[0][0].data
    assert np.abs(w).max() <= np.sqrt(6 / (16 + 6))
    assert all(p.requires_grad for p in model.parameters())


def test_class_seeded_prototypes():
    rng = np.random.default_rng(0)
    imgs = rng.uniform(0, 1, (10, 4, 4))
    labels = np.array([0] * 7 + [1] * 3)
    arch = ArchSpec((4, 4), (6,), 3)
    m = init_model(arch, 2, 2, seed=1, init_images=imgs, init_labels=labels, dtype=np.float64)
    with ag.no_grad():
        z = encode(m, Tensor(imgs.reshape(10, -1))).data
    for k in range(4):
        members = z[labels == m.bank.class_of(k)]
        assert np.min(np.linalg.norm(members - m.bank.prototypes.data[k], axis=1)) < 0.1


def test_encode_zero_input_and_batch_consistency(tiny_model, rng):
    z0 = encode(tiny_model, Tensor(np.zeros((1, 9))))
    assert np.all(np.isfinite(z0.data)) and z0.shape == (1, 3)
    x = rng.uniform(0, 1, (2, 9))
    both = encode(tiny_model, Tensor(x)).data
    single = np.concatenate([encode(tiny_model, Tensor(x[i:i + 1])).data for i in range(2)])
    np.testing.assert_allclose(both, single, rtol=0, atol=1e-15)


def test_encode_gradient(tiny_model, rng):
    x = Tensor(rng.uniform(0, 1, (2, 9)))

    def build():
        return ag.sum(encode(tiny_model, x) * Tensor([[1.0, -0.5, 2.0]]))

    leaves = [p for pair in tiny_model.encoder for p in pair]
    assert check_instance(build, leaves) < 1e-5


def test_encode_shape_mismatch(tiny_model):
    with pytest.raises(ShapeError):
        encode(tiny_model, Tensor(np.zeros((1, 8))))
    with pytest.raises(ShapeError):
        decode(tiny_model, Tensor(np.zeros((1, 4))))


def test_decode_range_and_saturation(tiny_model, rng):
    out = decode(tiny_model, Tensor(rng.normal(size=(5, 3)) * 3))
    assert out.data.min() >= 0 and out.data.max() <= 1
    ext = decode(tiny_model, Tensor(np.array([[50.0] * 3, [-50.0] * 3])))
    assert np.all(np.isfinite(ext.data)) and ext.data.min() >= 0 and ext.data.max() <= 1
    x = Tensor(rng.uniform(0, 1, (2, 9)))
    assert decode(tiny_model, encode(tiny_model, x)).shape == x.shape


def test_prototype_distances(tiny_model):
    p0 = tiny_model.bank.prototypes.data[0:1]
    out = prototype_distances(tiny_model, Tensor(p0))
    assert out.data[0, 0] <= 1e-6 and np.all(out.data >= 0)


def test_prototype_distances_hand_computed():
    bank_model = init_model(ArchSpec((3, 3), (4,), 2), 1, 2, dtype=np.float64)
    bank_model.bank.prototypes.data[...] = [[1.0, 2.0], [-3.0, 0.5]]
    z = [[0.25, -1.0]]
    out = prototype_distances(bank_model, Tensor(z)).data
    expected = [[np.sqrt(0.75 ** 2 + 3.0 ** 2 + 1e-12), np.sqrt(3.25 ** 2 + 1.5 ** 2 + 1e-12)]]
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(out, oracles.distance_matrix(z, [[1.0, 2.0], [-3.0, 0.5]]), rtol=0, atol=1e-12)


def test_classify_uniform_and_closed_form(rng):
    model = init_model(ArchSpec((3, 3), (4,), 2), 1, 2, dtype=np.float64)
    model.cls_weight.data[...] = 0
    np.testing.assert_allclose(classify(model, Tensor(rng.normal(size=(3, 2)))).data, 0.5, atol=1e-15)
    model.cls_weight.data[...] = np.eye(2)
    p = classify(model, Tensor([[0.0, 10.0]])).data
    # logits equal the distance vector, so class 1 gets e^10 / (1 + e^10)
    assert abs(p[0, 1] - 1 / (1 + np.exp(-10.0))) < 1e-12
    assert abs(p[0, 0] - 1 / (1 + np.exp(10.0))) < 1e-12
    model.cls_weight.data[...] = rng.normal(size=(2, 2))
    rows = classify(model, Tensor(rng.uniform(0, 5, (6, 2)))).data.sum(axis=1)
    np.testing.assert_allclose(rows, 1.0, atol=1e-9)


def test_forward_shapes_and_purity(tiny_model, rng):
    x = Tensor(rng.uniform(0, 1, (4, 9)))
    out = forward(tiny_model, x)
    assert out.recon.shape == (4, 9) and out.encoding.shape == (4, 3)
    assert out.distances.shape == (4, 4) and out.probs.shape == (4, 2)
    np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-9)
    again = forward(tiny_model, x)
    for a, b in zip(out, again):
        assert a.data.tobytes() == b.data.tobytes()


def test_forward_end_to_end_gradient(tiny_model, rng):
    x = Tensor(rng.uniform(0, 1, (2, 9)))
    w = [Tensor(rng.uniform(0.5, 1.5, s)) for s in [(2, 9), (2, 4), (2, 2)]]

    def build():
        out = forward(tiny_model, x)
        return ag.sum(out.recon * w[0]) + ag.sum(out.distances * w[1]) + ag.sum(out.probs * w[2])

    assert check_instance(build, tiny_model.parameters()) < 1e-4


def test_permutation_consistency(tiny_model, rng):
    x = Tensor(rng.uniform(0, 1, (5, 9)))
    before = forward(tiny_model, x).probs.data
    perm = rng.permutation(tiny_model.bank.m)
    tiny_model.bank.prototypes.data[...] = tiny_model.bank.prototypes.data[perm]
    tiny_model.cls_weight.data[...] = tiny_model.cls_weight.data[:, perm]
    np.testing.assert_allclose(forward(tiny_model, x).probs.data, before, rtol=0, atol=1e-9)
