import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from decfd.head import (
    HeadParams,
    LossWeights,
    PlainHead,
    PrototypeError,
    Prototypes,
    cfd_loss,
    intervene,
    multiclass_loss,
    predict,
    total_loss,
    update_prototypes,
)
from decfd.nn import F, Param, Tensor, grad_check


def test_first_update_copies_mean():
    p = Prototypes((0, 1), 3)
    v = np.array([1.0, 2.0, 3.0])
    update_prototypes(np.tile(v, (4, 1)), [1, 1, 1, 1], p)
    np.testing.assert_array_equal(p[1], v)
    assert p.initialized.tolist() == [False, True]
    assert not p.ready


def test_absent_label_unchanged():
    p = Prototypes((0, 1), 2)
    update_prototypes(np.array([[1.0, 1.0], [3.0, 3.0]]), [0, 1], p)
    before = p[0].copy()
    update_prototypes(np.array([[9.0, 9.0]]), [1], p)
    np.testing.assert_array_equal(p[0], before)


def test_two_updates_match_hand_ema():
    p = Prototypes((0, 1), 1, momentum=0.9)
    update_prototypes(np.array([[2.0], [4.0], [10.0]]), [0, 0, 1], p)
    update_prototypes(np.array([[6.0], [0.0]]), [0, 1], p)
    assert p[0][0] == pytest.approx(0.9 * 3.0 + 0.1 * 6.0, abs=1e-15)
    assert p[1][0] == pytest.approx(0.9 * 10.0 + 0.1 * 0.0, abs=1e-15)
    assert p.counts_seen.tolist() == [3, 2]


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        update_prototypes(np.zeros((1, 2)), [2], Prototypes((0, 1), 2))
    with pytest.raises(ValueError):
        Prototypes((0, 1), 2, momentum=1.0)


def _ready_protos(rng, d=4, labels=(0, 1)):
    p = Prototypes(labels, d)
    update_prototypes(rng.normal(size=(len(labels), d)), list(labels), p)
    return p


def test_intervene_requires_initialized():
    head = HeadParams(2, 3)
    with pytest.raises(PrototypeError):
        intervene(np.zeros((1, 3)), Prototypes((0, 1), 3), head)


def test_intervene_zero_weights_gives_bias(rng):
    head = HeadParams(2, 4, rng)
    for q in head.params():
        q.data[...] = 0.0
    head.out_proj.b.data[...] = 0.7
    out = intervene(rng.normal(size=(3, 4)), _ready_protos(rng), head)
    np.testing.assert_array_equal(out.data, [0.7, 0.7, 0.7])


def test_intervene_hand_chain_and_order(rng):
    head = HeadParams(2, 4, rng)
    protos = _ready_protos(rng)
    h = rng.normal(size=(2, 4))
    flat = np.concatenate([protos[0], protos[1]])
    info = head.proto_proj.W.data @ flat + head.proto_proj.b.data
    want = [head.out_proj.W.data[0] @ np.concatenate([h[i], info]) + head.out_proj.b.data[0] for i in range(2)]
    np.testing.assert_allclose(intervene(h, protos, head).data, want, atol=1e-14)
    swapped = protos.copy()
    swapped.values[:] = protos.values[::-1]
    assert not np.allclose(intervene(h, swapped, head).data, want)
    np.testing.assert_allclose(intervene(h[0], protos, head).data, want[0], atol=1e-14)


def test_prototypes_get_no_gradient(rng):
    head = HeadParams(2, 4, rng)
    protos = _ready_protos(rng)
    h = Param(rng.normal(size=(2, 4)), "h")
    out = F.sum_(intervene(h, protos, head))
    out.backward()
    assert h.grad is not None and head.proto_proj.W.grad is not None
    assert all(not t.requires_grad for t in out._parents[0]._parents if t.shape == (1, 8))


def test_head_gradients(rng):
    head = HeadParams(2, 3, rng)
    protos = _ready_protos(rng, d=3)
    h = Param(rng.normal(size=(4, 3)), "h")
    y = np.array([0, 1, 1, 0])
    assert grad_check(lambda: cfd_loss(intervene(h, protos, head), y), [h, *head.params()]) <= 1e-6


def test_plain_head(rng):
    head = PlainHead(3, rng)
    h = rng.normal(size=(2, 3))
    np.testing.assert_allclose(head(h).data, h @ head.out_proj.W.data[0] + head.out_proj.b.data[0], atol=1e-15)


def test_predict_values():
    assert predict(0.0) == 0.5
    assert float(predict(3.0)) == pytest.approx(0.95257, abs=1e-5)
    x = np.random.default_rng(0).normal(size=1000) * 5
    for n in (2, 3):
        assert np.array_equal(predict(x, n), expit(x))


@given(st.floats(-40, 40), st.integers(1, 6))
def test_predict_identity_any_label_count(x, n):
    assert float(predict(x, n)) == float(expit(x))


def test_cfd_loss_values():
    assert cfd_loss(np.array([0.0]), [1]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert cfd_loss(np.array([0.0]), [0]).item() == pytest.approx(math.log(2), abs=1e-15)
    assert cfd_loss(np.array([50.0]), [1]).item() < 1e-20
    want = -math.log(1 - 1 / (1 + math.exp(-1.2)))
    assert cfd_loss(np.array([1.2]), [0]).item() == pytest.approx(want, abs=1e-14)
    assert want == pytest.approx(1.463, abs=1e-3)


def test_multiclass_loss(rng):
    logits = rng.normal(size=(3, 4))
    y = np.array([0, 3, 1])
    want = -np.mean([logits[i, y[i]] - np.log(np.exp(logits[i]).sum()) for i in range(3)])
    assert multiclass_loss(logits, y).item() == pytest.approx(want, abs=1e-14)


def test_total_loss():
    cfd, ntm = Tensor(np.array(1.0)), Tensor(np.array(2.0))
    assert total_loss(cfd, ntm, LossWeights(0.0)) is cfd
    assert total_loss(cfd, ntm, LossWeights(0.5)).item() == 2.0
    with pytest.raises(ValueError):
        LossWeights(-1.0)
