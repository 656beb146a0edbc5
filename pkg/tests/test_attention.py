import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caslu import attention as A
from caslu import tensor as T
from caslu.encoders import EncodedSequence


def encoded(tape, rows, mask=None, grad=False):
    rows = np.asarray(rows, dtype=float)
    if mask is None:
        mask = np.ones(rows.shape[0])
    return EncodedSequence(tape.leaf(rows, requires_grad=grad), np.asarray(mask, float))


class TestCorrelationMap:
    def test_identical_direction(self):
        tape = T.Tape(np.float64)
        cm = A.correlation_map(encoded(tape, [[1.0, 0.0]]), encoded(tape, [[1.0, 0.0]]))
        assert cm.C.value[0, 0] == pytest.approx(1.0, abs=1e-9)

    def test_orthogonal(self):
        tape = T.Tape(np.float64)
        cm = A.correlation_map(encoded(tape, [[1.0, 0.0]]), encoded(tape, [[0.0, 1.0]]))
        assert cm.C.value[0, 0] == pytest.approx(0.0, abs=1e-9)

    def test_45_degrees(self):
        tape = T.Tape(np.float64)
        cm = A.correlation_map(encoded(tape, [[1.0, 1.0]]), encoded(tape, [[1.0, 0.0]]))
        assert cm.C.value[0, 0] == pytest.approx(1 / np.sqrt(2), abs=1e-6)

    def test_width_mismatch(self):
        tape = T.Tape(np.float64)
        with pytest.raises(T.ShapeError):
            A.correlation_map(encoded(tape, [[1.0, 0.0]]), encoded(tape, [[1.0, 0.0, 0.0]]))

    def test_masked_entries_zero_and_range(self):
        rng = np.random.default_rng(0)
        tape = T.Tape(np.float64)
        hw = rng.normal(size=(4, 3))
        hp = rng.normal(size=(5, 3))
        hw[3] = 0.0
        hp[4] = 0.0
        cm = A.correlation_map(encoded(tape, hw, [1, 1, 1, 0]),
                               encoded(tape, hp, [1, 1, 1, 1, 0]))
        assert np.array_equal(cm.C.value[3, :], np.zeros(5))
        assert np.array_equal(cm.C.value[:, 4], np.zeros(4))
        assert np.all(np.abs(cm.C.value) <= 1 + 1e-6)

    def test_scale_invariance_of_rows(self):
        rng = np.random.default_rng(1)
        tape = T.Tape(np.float64)
        hw = rng.normal(size=(3, 4))
        hp = rng.normal(size=(3, 4))
        base = A.correlation_map(encoded(tape, hw), encoded(tape, hp)).C.value
        hw2 = hw.copy()
        hw2[1] *= 37.0
        scaled = A.correlation_map(encoded(tape, hw2), encoded(tape, hp)).C.value
        assert np.allclose(base, scaled, atol=1e-6)

    def test_premask_flag_is_value_neutral_for_zeroed_rows(self):
        # masked hidden rows are exact zeros, so both settings agree
        rng = np.random.default_rng(2)
        tape = T.Tape(np.float64)
        hw = rng.normal(size=(3, 4))
        hw[2] = 0.0
        hp = rng.normal(size=(2, 4))
        on = A.correlation_map(encoded(tape, hw, [1, 1, 0]), encoded(tape, hp),
                               premask=True).C.value
        off = A.correlation_map(encoded(tape, hw, [1, 1, 0]), encoded(tape, hp),
                                premask=False).C.value
        assert np.array_equal(on, off)


class TestRowColAttention:
    def test_zero_kernel_uniform(self):
        rng = np.random.default_rng(3)
        tape = T.Tape(np.float64)
        cm = A.correlation_map(encoded(tape, rng.normal(size=(3, 2))),
                               encoded(tape, rng.normal(size=(4, 2))))
        alpha = A.row_attention(cm, tape.leaf(np.zeros(4)))
        assert np.allclose(alpha.value, [1 / 3] * 3, atol=1e-12)

    def test_single_active_row_one_hot(self):
        tape = T.Tape(np.float64)
        hw = np.array([[1.0, 0.0], [0.0, 0.0]])
        cm = A.correlation_map(encoded(tape, hw, [1, 0]),
                               encoded(tape, [[1.0, 1.0]]))
        alpha = A.row_attention(cm, tape.leaf(np.array([5.0])))
        assert alpha.value.tolist() == [1.0, 0.0]

    def test_two_by_two_identity_map(self):
        tape = T.Tape(np.float64)
        cm = A.CorrelationMap(tape.leaf(np.eye(2)), np.ones(2), np.ones(2))
        alpha = A.row_attention(cm, tape.leaf(np.array([2.0, 0.0])))
        assert alpha.value == pytest.approx([0.8808, 0.1192], abs=1e-4)

    def test_col_attention_is_transposed_row_attention(self):
        rng = np.random.default_rng(4)
        tape = T.Tape(np.float64)
        C = rng.normal(size=(3, 4))
        rm = np.array([1.0, 1.0, 0.0])
        cm_mask = np.array([1.0, 0.0, 1.0, 1.0])
        cm = A.CorrelationMap(tape.leaf(C), rm, cm_mask)
        k = tape.leaf(rng.normal(size=3))
        beta = A.col_attention(cm, k)
        flipped = A.CorrelationMap(tape.leaf(C.T), cm_mask, rm)
        assert np.allclose(beta.value, A.row_attention(flipped, k).value, atol=1e-12)

    def test_all_masked_rows_error(self):
        tape = T.Tape(np.float64)
        cm = A.CorrelationMap(tape.leaf(np.zeros((2, 2))), np.zeros(2), np.ones(2))
        with pytest.raises(T.DegenerateMaskError):
            A.row_attention(cm, tape.leaf(np.zeros(2)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 10 ** 6))
    def test_simplex_property(self, m, n, seed):
        rng = np.random.default_rng(seed)
        tape = T.Tape(np.float64)
        mask = rng.integers(0, 2, size=m).astype(float)
        if mask.sum() == 0:
            mask[0] = 1.0
        cm = A.CorrelationMap(tape.leaf(rng.normal(size=(m, n))), mask, np.ones(n))
        alpha = A.row_attention(cm, tape.leaf(rng.normal(size=n))).value
        assert abs(alpha.sum() - 1.0) < 1e-6
        assert np.all(alpha >= 0)
        assert np.all(alpha[mask == 0] == 0)


class TestPooling:
    def test_one_hot_selects_row(self):
        tape = T.Tape(np.float64)
        H = encoded(tape, [[1.0, 2.0], [3.0, 4.0]])
        out = A.attend_pool(H, tape.leaf([0.0, 1.0]))
        assert out.value.tolist() == [3.0, 4.0]

    def test_uniform_two_rows(self):
        tape = T.Tape(np.float64)
        H = encoded(tape, [[2.0, 0.0], [0.0, 4.0]])
        out = A.attend_pool(H, tape.leaf([0.5, 0.5]))
        assert out.value.tolist() == [1.0, 2.0]

    def test_hand_weighted_sum(self):
        tape = T.Tape(np.float64)
        H = encoded(tape, [[2.0], [0.0]])
        got = A.attend_pool(H, tape.leaf([0.25, 0.75]))
        assert got.value.tolist() == [0.5]
        H2 = encoded(tape, [[2.0, 0.0], [0.0, 4.0]])
        got2 = A.attend_pool(H2, tape.leaf([0.25, 0.75]))
        assert got2.value.tolist() == [0.5, 3.0]

    def test_non_simplex_weights_rejected(self):
        tape = T.Tape(np.float64)
        H = encoded(tape, [[1.0], [1.0]])
        with pytest.raises(A.ContractError):
            A.attend_pool(H, tape.leaf([0.7, 0.7]))

    def test_uniform_pool_values(self):
        tape = T.Tape(np.float64)
        H = encoded(tape, [[1.0], [3.0]])
        assert A.uniform_pool(H).value.tolist() == [2.0]
        single = encoded(tape, [[5.0, -1.0]])
        assert A.uniform_pool(single).value.tolist() == [5.0, -1.0]

    def test_uniform_pool_equals_zero_kernel_attention(self):
        rng = np.random.default_rng(5)
        tape = T.Tape(np.float64)
        H = encoded(tape, rng.normal(size=(4, 3)))
        Hp = encoded(tape, rng.normal(size=(5, 3)))
        cm = A.correlation_map(H, Hp)
        alpha = A.row_attention(cm, tape.leaf(np.zeros(5)))
        via_attention = A.attend_pool(H, alpha)
        assert np.allclose(via_attention.value, A.uniform_pool(H).value, atol=1e-6)

    def test_all_masked_uniform_pool_error(self):
        tape = T.Tape(np.float64)
        H = encoded(tape, [[0.0, 0.0]], mask=[0])
        with pytest.raises(T.DegenerateMaskError):
            A.uniform_pool(H)


class TestPaddingInvariance:
    def test_padding_either_side_leaves_alpha_beta_and_pools_fixed(self):
        rng = np.random.default_rng(6)
        tape = T.Tape(np.float64)
        hw = rng.normal(size=(3, 4))
        hp = rng.normal(size=(4, 4))
        kt = rng.normal(size=6)
        kp = rng.normal(size=5)

        def run(pad_w, pad_p):
            HW = encoded(tape, np.vstack([hw, np.zeros((pad_w, 4))]),
                         [1] * 3 + [0] * pad_w)
            HP = encoded(tape, np.vstack([hp, np.zeros((pad_p, 4))]),
                         [1] * 4 + [0] * pad_p)
            cm = A.correlation_map(HW, HP)
            alpha = A.row_attention(cm, tape.leaf(kt[:4 + pad_p]))
            beta = A.col_attention(cm, tape.leaf(kp[:3 + pad_w]))
            t = A.attend_pool(HW, alpha)
            p = A.attend_pool(HP, beta)
            return alpha.value[:3], beta.value[:4], t.value, p.value

        base = run(0, 0)
        padded = run(2, 2)
        for got, want in zip(padded, base):
            assert np.allclose(got, want, atol=1e-6)


class TestBatchedPath:
    def test_batched_matches_single(self):
        rng = np.random.default_rng(7)
        tape = T.Tape(np.float64)
        B, Lw, Lp, D = 3, 4, 5, 6
        hw = rng.normal(size=(B, Lw, D))
        hp = rng.normal(size=(B, Lp, D))
        wm = np.ones((B, Lw))
        pm = np.ones((B, Lp))
        wm[1, 3] = 0
        pm[2, 4] = 0
        hw[1, 3] = 0.0
        hp[2, 4] = 0.0
        kt = tape.leaf(rng.normal(size=Lp))
        kp = tape.leaf(rng.normal(size=Lw))
        C3 = A.correlation_batch(tape.leaf(hw), wm, tape.leaf(hp), pm)
        alpha2 = A.row_attention_batch(C3, wm, kt)
        beta2 = A.col_attention_batch(C3, pm, kp)
        t2 = A.pool_batch(tape.leaf(hw), alpha2)
        for i in range(B):
            cm = A.correlation_map(encoded(tape, hw[i], wm[i]),
                                   encoded(tape, hp[i], pm[i]))
            assert np.allclose(C3.value[i], cm.C.value, atol=1e-9)
            a1 = A.row_attention(cm, kt)
            b1 = A.col_attention(cm, kp)
            assert np.allclose(alpha2.value[i], a1.value, atol=1e-9)
            assert np.allclose(beta2.value[i], b1.value, atol=1e-9)
            t1 = A.attend_pool(encoded(tape, hw[i], wm[i]), a1)
            assert np.allclose(t2.value[i], t1.value, atol=1e-9)


class TestGradCheck:
    def test_full_attention_path(self):
        rng = np.random.default_rng(8)
        Lw, Lp, D = 3, 4, 2
        hw = rng.normal(size=(Lw, D))
        hp = rng.normal(size=(Lp, D))
        kt = rng.normal(size=Lp) * 0.3
        kp = rng.normal(size=Lw) * 0.3
        w_out = rng.normal(size=2 * D)

        def f(leaves):
            lhw, lhp, lkt, lkp = leaves
            HW = EncodedSequence(lhw, np.ones(Lw))
            HP = EncodedSequence(lhp, np.ones(Lp))
            cm = A.correlation_map(HW, HP)
            t = A.attend_pool(HW, A.row_attention(cm, lkt))
            p = A.attend_pool(HP, A.col_attention(cm, lkp))
            both = T.concat_cols([T.reshape(t, (1, D)), T.reshape(p, (1, D))])
            return T.sum_all(T.mul(both, both.tape.constant(w_out.reshape(1, -1))))

        err = T.grad_check(f, [hw, hp, kt, kp], eps=1e-5)
        assert err < 1e-4


class TestTrace:
    def test_json_round_trip(self):
        trace = A.AttentionTrace(np.array([[0.5, -0.25]]), np.array([1.0]),
                                 np.array([0.75, 0.25]), ["add"], ["ae", "d"])
        back = A.AttentionTrace.from_json(trace.to_json())
        assert np.allclose(back.C, trace.C)
        assert np.allclose(back.alpha, trace.alpha)
        assert np.allclose(back.beta, trace.beta)
        assert back.words == ["add"]
        assert back.phonemes == ["ae", "d"]
