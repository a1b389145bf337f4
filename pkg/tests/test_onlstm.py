import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from ong.onlstm import OnLstm, cummax, model_scores, onlstm_run, onlstm_step

floats = st.floats(-30, 30, allow_nan=False)


def np_cummax(v):
    e = np.exp(v - v.max())
    return np.cumsum(e / e.sum())


def reference_run(X, p: OnLstm):
    """Plain numpy recurrence built from the per-gate parameter slices."""
    sig = lambda z: 1 / (1 + np.exp(-z))
    g = {k: [t.detach().numpy() for t in p.gate_params(k)] for k in ("f", "i", "o", "c", "mf", "mi")}
    pre = lambda k, x, h: g[k][0] @ x + g[k][1] @ h + g[k][2]
    h = np.zeros(p.hidden)
    c = np.zeros(p.hidden)
    hs, imps = [], []
    for x in X:
        f, i, o = sig(pre("f", x, h)), sig(pre("i", x, h)), sig(pre("o", x, h))
        ch = np.tanh(pre("c", x, h))
        mf = np_cummax(pre("mf", x, h))
        mi = 1 - np_cummax(pre("mi", x, h))
        w = mf * mi
        c = (f * w + mf - w) * c + (i * w + mi - w) * ch
        h = o * np.tanh(c)
        hs.append(h)
        imps.append(1 - mf.sum())
    return np.array(hs), np.array(imps)


class TestCummax:
    def test_zeros(self):
        torch.testing.assert_close(cummax(torch.zeros(3, dtype=torch.float64)),
                                   torch.tensor([1 / 3, 2 / 3, 1], dtype=torch.float64))

    def test_singleton(self):
        assert cummax(torch.tensor([-4.2])).tolist() == [1.0]

    def test_saturated(self):
        out = cummax(torch.tensor([10.0, -10.0], dtype=torch.float64))
        # sigmoid(20)
        assert out[0].item() == pytest.approx(0.9999999979388463, abs=1e-15)
        assert out[1].item() == pytest.approx(1.0, abs=1e-12)

    @given(st.lists(floats, min_size=1, max_size=30))
    def test_monotone_and_ends_at_one(self, v):
        out = cummax(torch.tensor(v, dtype=torch.float64))
        assert (out[1:] >= out[:-1]).all()
        assert abs(out[-1].item() - 1) <= 1e-9
        np.testing.assert_allclose(out.numpy(), np_cummax(np.array(v)), atol=1e-12)


class TestCell:
    def test_single_unit_carries_cell(self):
        torch.manual_seed(0)
        p = OnLstm(3, hidden=1).double()
        c = torch.tensor([0.7], dtype=torch.float64)
        h = torch.tensor([0.1], dtype=torch.float64)
        for _ in range(5):
            h, c_new, mf = onlstm_step(torch.randn(3, dtype=torch.float64), h, c, p)
            assert mf.item() == 1.0
            assert c_new.item() == pytest.approx(0.7, abs=1e-15)
            c = c_new

    def test_zero_parameters(self):
        p = OnLstm(2, hidden=4).double()
        with torch.no_grad():
            for w in p.parameters():
                w.zero_()
        c_prev = torch.tensor([0.5, -1.0, 2.0, 0.25], dtype=torch.float64)
        with torch.no_grad():
            h, c, mf = p.step(torch.tensor([3.0, -7.0], dtype=torch.float64),
                              torch.zeros(4, dtype=torch.float64), c_prev)
        # f=i=o=0.5, c_hat=0, master gates cummax(0)=[.25,.5,.75,1] and 1-that
        mf_ref = np.array([0.25, 0.5, 0.75, 1.0])
        mi_ref = 1 - mf_ref
        w = mf_ref * mi_ref
        f_bar = 0.5 * w + mf_ref - w
        np.testing.assert_allclose(c.numpy(), f_bar * c_prev.numpy(), atol=1e-15)
        np.testing.assert_allclose(h.numpy(), 0.5 * np.tanh(c.numpy()), atol=1e-15)
        np.testing.assert_allclose(mf.numpy(), mf_ref)

    def test_shape_errors(self):
        p = OnLstm(2, hidden=3)
        with pytest.raises(ValueError):
            p.step(torch.zeros(3), torch.zeros(3), torch.zeros(3))
        with pytest.raises(ValueError):
            p.step(torch.zeros(2), torch.zeros(3), torch.zeros(2))

    def test_plain_lstm_has_no_master(self):
        p = OnLstm(2, hidden=3, master=False)
        with pytest.raises(KeyError):
            p.gate_params("mf")
        assert onlstm_run(torch.randn(4, 2), p).imp is None


class TestRun:
    def test_base_case(self):
        out = onlstm_run(torch.randn(1, 5, dtype=torch.float64), OnLstm(5, 7).double())
        assert out.H.shape == (1, 7) and out.imp.shape == (1,)

    def test_empty(self):
        with pytest.raises(ValueError):
            OnLstm(2, 3)(torch.zeros(0, 2))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_reference(self, seed):
        torch.manual_seed(seed)
        p = OnLstm(4, 5).double()
        X = torch.randn(6, 4, dtype=torch.float64)
        out = p(X)
        H, imp = reference_run(X.numpy(), p)
        np.testing.assert_allclose(out.H.detach().numpy(), H, atol=1e-12)
        np.testing.assert_allclose(out.imp.detach().numpy(), imp, atol=1e-12)

    def test_batched_equals_unbatched(self):
        torch.manual_seed(1)
        p = OnLstm(3, 4).double()
        X = torch.randn(2, 5, 3, dtype=torch.float64)
        out = p(X)
        for b in range(2):
            torch.testing.assert_close(out.H[b], p(X[b]).H)

    def test_order_sensitive(self):
        torch.manual_seed(2)
        p = OnLstm(3, 4).double()
        X = torch.randn(4, 3, dtype=torch.float64)
        assert not torch.allclose(p(X).H[-1], p(X.flip(0)).H[-1])

    def test_imp_range(self):
        torch.manual_seed(3)
        D = 6
        imp = OnLstm(3, D).double()(torch.randn(8, 3, dtype=torch.float64)).imp
        # sum of a cummax lies in [1, D]
        assert (imp <= 0).all() and (imp >= 1 - D).all()

    def test_gradcheck(self):
        torch.manual_seed(4)
        p = OnLstm(3, 4).double()
        X = torch.randn(5, 3, dtype=torch.float64, requires_grad=True)
        assert torch.autograd.gradcheck(lambda x: p(x).H.sum() + p(x).imp.sum(), (X,),
                                        eps=1e-6, atol=1e-7)


class TestModelScores:
    def test_two(self):
        out = model_scores(torch.tensor([2.0, 3.0], dtype=torch.float64))
        np.testing.assert_allclose(out.numpy(), [0.2689414213699951, 0.7310585786300049], atol=1e-12)

    def test_shift(self):
        a = model_scores(torch.tensor([2.0, 3.0], dtype=torch.float64))
        b = model_scores(torch.tensor([12.0, 13.0], dtype=torch.float64))
        torch.testing.assert_close(a, b, atol=1e-15, rtol=0)

    def test_uniform(self):
        torch.testing.assert_close(model_scores(torch.full((4,), -1.5)), torch.full((4,), 0.25))

    def test_mask(self):
        out = model_scores(torch.tensor([[1.0, 2.0, 9.0]]), torch.tensor([[True, True, False]]))
        assert out[0, 2] == 0
        assert out.sum().item() == pytest.approx(1.0)

    @given(st.lists(floats, min_size=1, max_size=30))
    def test_distribution(self, v):
        out = model_scores(torch.tensor(v, dtype=torch.float64))
        assert abs(out.sum().item() - 1) <= 1e-6 and (out > 0).all()
