import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caslu import tensor as T


def naive_matmul(a, b):
    # independent triple-loop oracle
    r, k = len(a), len(a[0])
    c = len(b[0])
    out = [[0.0] * c for _ in range(r)]
    for i in range(r):
        for j in range(c):
            for t in range(k):
                out[i][j] += a[i][t] * b[t][j]
    return out


class TestMatmul:
    def test_identity(self):
        tape = T.Tape()
        eye = tape.leaf(np.eye(2))
        m = tape.leaf([[1.0, 2.0], [3.0, 4.0]])
        assert np.allclose(T.matmul(eye, m).value, [[1, 2], [3, 4]])

    def test_hand_product_matches_triple_loop(self):
        a = [[1.0, 2.0], [3.0, 4.0]]
        b = [[5.0], [6.0]]
        tape = T.Tape()
        got = T.matmul(tape.leaf(a), tape.leaf(b)).value
        assert got.tolist() == [[17.0], [39.0]]
        assert got.tolist() == naive_matmul(a, b)

    def test_random_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            r, k, c = rng.integers(1, 5, size=3)
            a = rng.normal(size=(r, k))
            b = rng.normal(size=(k, c))
            tape = T.Tape(np.float64)
            got = T.matmul(tape.leaf(a), tape.leaf(b)).value
            assert np.allclose(got, naive_matmul(a.tolist(), b.tolist()), atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        tape = T.Tape()
        a = tape.leaf(np.zeros((2, 3)))
        b = tape.leaf(np.zeros((2, 3)))
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(a, b)


class TestElementwise:
    def test_sigmoid_at_zero(self):
        tape = T.Tape()
        assert T.sigmoid(tape.leaf([0.0])).value[0] == 0.5

    def test_tanh_at_zero(self):
        tape = T.Tape()
        assert T.tanh(tape.leaf([0.0])).value[0] == 0.0

    def test_add(self):
        tape = T.Tape()
        got = T.add(tape.leaf([1.0, 2.0]), tape.leaf([3.0, 4.0])).value
        assert got.tolist() == [4.0, 6.0]

    def test_add_shape_mismatch(self):
        tape = T.Tape()
        with pytest.raises(T.ShapeError):
            T.add(tape.leaf([1.0]), tape.leaf([1.0, 2.0]))

    def test_sigmoid_extreme_inputs_stay_finite(self):
        tape = T.Tape()
        y = T.sigmoid(tape.leaf([-900.0, 900.0])).value
        assert np.all(np.isfinite(y))
        assert y[0] == pytest.approx(0.0, abs=1e-12)
        assert y[1] == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_check_finite_mode_catches_overflow(self):
        tape = T.Tape(check_finite=True)
        with pytest.raises(T.NumericError):
            T.exp(tape.leaf([1000.0]))


class TestMaskedSoftmax:
    def test_uniform_case(self):
        tape = T.Tape(np.float64)
        y = T.masked_softmax(tape.leaf([0.0, 0.0, 0.0]), [1, 1, 1]).value
        assert np.allclose(y, [1 / 3] * 3, atol=1e-12)

    def test_single_active_position(self):
        tape = T.Tape(np.float64)
        y = T.masked_softmax(tape.leaf([5.0, -7.0]), [1, 0]).value
        assert y.tolist() == [1.0, 0.0]

    def test_two_logits(self):
        # e^1/(e^1+e^2) evaluated directly
        tape = T.Tape(np.float64)
        y = T.masked_softmax(tape.leaf([1.0, 2.0]), [1, 1]).value
        assert y == pytest.approx([0.2689, 0.7311], abs=1e-4)

    def test_all_masked_is_an_error(self):
        tape = T.Tape()
        with pytest.raises(T.DegenerateMaskError):
            T.masked_softmax(tape.leaf([1.0, 2.0]), [0, 0])

    def test_rowwise_with_matrix_input(self):
        tape = T.Tape(np.float64)
        y = T.masked_softmax(tape.leaf([[0.0, 0.0, 5.0], [1.0, 2.0, 3.0]]),
                             [[1, 1, 0], [1, 1, 1]]).value
        assert np.allclose(y[0], [0.5, 0.5, 0.0], atol=1e-12)
        assert y[1].sum() == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=8), st.data())
    def test_simplex_and_masked_zeros(self, logits, data):
        mask = data.draw(st.lists(st.integers(0, 1),
                                  min_size=len(logits), max_size=len(logits)))
        if sum(mask) == 0:
            mask[data.draw(st.integers(0, len(mask) - 1))] = 1
        tape = T.Tape(np.float64)
        y = T.masked_softmax(tape.leaf(logits), mask).value
        assert abs(y.sum() - 1.0) < 1e-6
        assert np.all(y >= 0)
        for yi, mi in zip(y, mask):
            if mi == 0:
                assert yi == 0.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=8),
           st.floats(-20, 20), st.data())
    def test_shift_invariance(self, logits, shift, data):
        mask = data.draw(st.lists(st.integers(0, 1),
                                  min_size=len(logits), max_size=len(logits)))
        if sum(mask) == 0:
            mask[0] = 1
        tape = T.Tape(np.float64)
        base = T.masked_softmax(tape.leaf(logits), mask).value
        shifted = T.masked_softmax(
            tape.leaf([x + shift if m else x for x, m in zip(logits, mask)]),
            mask).value
        assert np.allclose(base, shifted, atol=1e-6)


class TestBackward:
    def test_square_derivative(self):
        tape = T.Tape(np.float64)
        x = tape.leaf([3.0], requires_grad=True)
        loss = T.sum_all(T.mul(x, x))
        tape.backward(loss)
        assert x.grad.tolist() == [6.0]

    def test_fanout_accumulates(self):
        tape = T.Tape(np.float64)
        x = tape.leaf([1.5], requires_grad=True)
        loss = T.sum_all(T.add(x, x))
        tape.backward(loss)
        assert x.grad.tolist() == [2.0]

    def test_matmul_sum_grad_is_row_sums_of_b(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 2))
        b = rng.normal(size=(2, 4))
        tape = T.Tape(np.float64)
        ta = tape.leaf(a, requires_grad=True)
        loss = T.sum_all(T.matmul(ta, tape.leaf(b)))
        tape.backward(loss)
        expected = np.tile(b.sum(axis=1), (3, 1))
        assert np.allclose(ta.grad, expected, atol=1e-12)

    def test_backward_is_bit_deterministic(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(4, 4))
        grads = []
        for _ in range(2):
            tape = T.Tape(np.float64)
            x = tape.leaf(a, requires_grad=True)
            y = T.tanh(T.matmul(x, x))
            loss = T.sum_all(T.mul(y, y))
            tape.backward(loss)
            grads.append(x.grad.copy())
        assert np.array_equal(grads[0], grads[1])

    def test_non_scalar_loss_rejected(self):
        tape = T.Tape()
        x = tape.leaf([1.0, 2.0], requires_grad=True)
        with pytest.raises(T.GraphError):
            tape.backward(x)

    def test_detached_node_rejected(self):
        tape_a, tape_b = T.Tape(), T.Tape()
        x = tape_a.leaf([1.0], requires_grad=True)
        with pytest.raises(T.GraphError):
            tape_b.backward(x)

    def test_cross_tape_operands_rejected(self):
        tape_a, tape_b = T.Tape(), T.Tape()
        with pytest.raises(T.GraphError):
            T.add(tape_a.leaf([1.0]), tape_b.leaf([1.0]))


class TestGradCheck:
    def test_quadratic_is_essentially_exact(self):
        err = T.grad_check(lambda ps: T.sum_all(T.mul(ps[0], ps[0])),
                           [np.array([1.0])])
        assert err < 1e-7

    def test_planted_bug_is_detected(self):
        def f(ps):
            return T.sum_all(T.tanh(ps[0]))

        clean = T.grad_check(f, [np.array([0.3, -0.8])])
        assert clean < 1e-7
        with T.planted_backward_bug():
            broken = T.grad_check(f, [np.array([0.3, -0.8])])
        assert broken > 1e-2


def _op_cases(rng):
    """One random (params, f) pair per registered op, shapes <= 4x4."""
    r, k, c = rng.integers(1, 5, size=3)
    B, m, n = rng.integers(1, 4, size=3)
    a2 = rng.normal(size=(r, k))
    cases = {}

    def unary(name, fn, sample):
        x = sample()
        probe = fn(T.Tape(np.float64).leaf(x))
        if probe.shape == ():
            scale = float(rng.normal())
            cases[name] = ([x], lambda ps, fn=fn: T.scale(fn(ps[0]), scale))
            return
        weights = rng.normal(size=probe.shape)

        def f(ps, fn=fn, weights=weights):
            out = fn(ps[0])
            return T.sum_all(T.mul(out, out.tape.constant(weights)))

        cases[name] = ([x], f)

    unary("tanh", T.tanh, lambda: rng.normal(size=(r, k)))
    unary("sigmoid", T.sigmoid, lambda: rng.normal(size=(r, k)))
    unary("exp", T.exp, lambda: rng.normal(size=(r, k)))
    unary("sqrt", T.sqrt, lambda: rng.uniform(0.5, 3.0, size=(r, k)))
    unary("recip", T.recip, lambda: rng.uniform(0.5, 3.0, size=(r, k)) * rng.choice([-1, 1]))
    unary("scale", lambda t: T.scale(t, 1.7), lambda: rng.normal(size=(r, k)))
    unary("clamp_min", lambda t: T.clamp_min(t, 0.0),
          lambda: np.where(np.abs(rng.normal(size=(r, k))) < 0.1, 0.5,
                           rng.normal(size=(r, k))))
    unary("transpose_last2", T.transpose_last2, lambda: rng.normal(size=(r, k)))
    unary("reshape", lambda t: T.reshape(t, (k, r)), lambda: rng.normal(size=(r, k)))
    unary("slice_cols", lambda t: T.slice_cols(t, 0, max(1, k // 2)),
          lambda: rng.normal(size=(r, k)))
    unary("select_time", lambda t: T.select_time(t, 0), lambda: rng.normal(size=(B, m, n)))
    unary("sum_all", lambda t: T.sum_all(t), lambda: rng.normal(size=(r, k)))
    unary("mean_all", lambda t: T.mean_all(t), lambda: rng.normal(size=(r, k)))
    unary("sum_last", T.sum_last, lambda: rng.normal(size=(B, m, n)))
    unary("unfold_same", lambda t: T.unfold_same(t, 3), lambda: rng.normal(size=(B, m, n)))
    unary("log_softmax", T.log_softmax, lambda: rng.normal(size=(r, k)))

    def binary(name, fn, xa, xb):
        probe_tape = T.Tape(np.float64)
        tmp = fn(probe_tape.leaf(xa), probe_tape.leaf(xb))
        weights = rng.normal(size=tmp.shape)

        def f(ps):
            out = fn(ps[0], ps[1])
            return T.sum_all(T.mul(out, out.tape.constant(weights)))

        cases[name] = ([xa, xb], f)

    binary("add", T.add, rng.normal(size=(r, k)), rng.normal(size=(r, k)))
    binary("sub", T.sub, rng.normal(size=(r, k)), rng.normal(size=(r, k)))
    binary("mul", T.mul, rng.normal(size=(r, k)), rng.normal(size=(r, k)))
    binary("matmul", T.matmul, a2, rng.normal(size=(k, c)))
    binary("matmul3", T.matmul3, rng.normal(size=(B, m, n)), rng.normal(size=(n, c)))
    binary("bmm", T.bmm, rng.normal(size=(B, m, n)), rng.normal(size=(B, n, c)))
    binary("add_bias", T.add_bias, rng.normal(size=(r, k)), rng.normal(size=(k,)))
    binary("scale_rows", T.scale_rows, rng.normal(size=(r, k)), rng.normal(size=(r,)))
    binary("scale_mid", T.scale_mid, rng.normal(size=(B, m, n)), rng.normal(size=(B, m)))
    binary("scale_last3", T.scale_last3, rng.normal(size=(B, m, n)), rng.normal(size=(B, n)))
    binary("concat_cols", lambda x, y: T.concat_cols([x, y]),
           rng.normal(size=(r, k)), rng.normal(size=(r, c)))
    binary("stack_time", lambda x, y: T.stack_time([x, y]),
           rng.normal(size=(r, k)), rng.normal(size=(r, k)))

    ids = rng.integers(0, r, size=(B, m))
    w_gather = rng.normal(size=ids.shape + (k,))
    cases["gather_rows"] = ([a2], lambda ps: T.sum_all(
        T.mul(T.gather_rows(ps[0], ids), ps[0].tape.constant(w_gather))))

    mask = rng.integers(0, 2, size=k)
    if mask.sum() == 0:
        mask[0] = 1
    w_sm = rng.normal(size=(k,))
    cases["masked_softmax"] = ([rng.normal(size=(k,))], lambda ps: T.sum_all(
        T.mul(T.masked_softmax(ps[0], mask), ps[0].tape.constant(w_sm))))

    labels = rng.integers(0, k, size=r)
    cases["softmax_xent"] = ([rng.normal(size=(r, k))],
                             lambda ps: T.sum_all(T.softmax_xent(ps[0], labels)))
    return cases


OP_NAMES = sorted(_op_cases(np.random.default_rng(0)).keys())


@pytest.mark.parametrize("op_name", OP_NAMES)
def test_every_op_passes_grad_check(op_name):
    # 100 random draws per op at eps=1e-5, float64
    worst = 0.0
    for draw in range(100):
        rng = np.random.default_rng(1000 * draw + hash(op_name) % 1000)
        params, f = _op_cases(rng)[op_name]
        worst = max(worst, T.grad_check(f, params, eps=1e-5))
    assert worst < 1e-4, f"{op_name}: max rel error {worst}"
