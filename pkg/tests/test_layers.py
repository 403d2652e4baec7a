import numpy as np
import pytest

from docmem_nmt import autodiff as ad
from docmem_nmt.autodiff import Tensor, grad_check
from docmem_nmt.errors import ShapeError
from docmem_nmt.layers import (
    AffineParams,
    CellKind,
    GruParams,
    LstmParams,
    LstmState,
    bind_cell,
    birnn,
    cell_shapes,
    gru_step,
    lstm_step,
    unroll,
)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def zero_gru(input_dim: int, hidden: int) -> GruParams:
    shapes = GruParams.shapes("gru", input_dim, hidden)
    return GruParams.bind({name: Tensor(np.zeros(shape)) for name, shape in shapes.items()}, "gru")


def random_cell(kind: CellKind, input_dim: int, hidden: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    shapes = cell_shapes(kind, "cell", input_dim, hidden)
    return bind_cell(kind, {name: Tensor(rng.normal(size=shape)) for name, shape in shapes.items()}, "cell")


def test_gru_zero_params_halves_state() -> None:
    h = np.array([0.4, -1.2, 2.0])

    out = gru_step(Tensor(np.zeros(2)), Tensor(h), zero_gru(2, 3))

    np.testing.assert_allclose(out.value, 0.5 * h)


def test_gru_saturated_update_gate_takes_candidate() -> None:
    p = zero_gru(2, 2)
    b = np.zeros(6)
    b[:2] = 50.0
    p = GruParams(p.w, p.u_zr, p.u_n, Tensor(b))

    out = gru_step(Tensor(np.zeros(2)), Tensor([1.0, -1.0]), p)

    np.testing.assert_allclose(out.value, [0.0, 0.0], atol=1e-12)


def test_gru_matches_formula() -> None:
    p = random_cell(CellKind.GRU, 2, 2, seed=1)
    assert isinstance(p, GruParams)
    x, h = np.array([0.3, -0.7]), np.array([0.1, 0.5])
    w, u_zr, u_n, b = p.w.value, p.u_zr.value, p.u_n.value, p.b.value

    z = sigmoid(w[0:2] @ x + b[0:2] + u_zr[0:2] @ h)
    r = sigmoid(w[2:4] @ x + b[2:4] + u_zr[2:4] @ h)
    n = np.tanh(w[4:6] @ x + b[4:6] + u_n @ (r * h))
    expected = (1.0 - z) * h + z * n

    np.testing.assert_allclose(gru_step(Tensor(x), Tensor(h), p).value, expected, rtol=1e-12)


def test_lstm_zero_params() -> None:
    shapes = LstmParams.shapes("lstm", 2, 3)
    p = LstmParams.bind({name: Tensor(np.zeros(shape)) for name, shape in shapes.items()}, "lstm")

    state = lstm_step(Tensor(np.ones(2)), LstmState(Tensor(np.ones(3)), Tensor(np.zeros(3))), p)

    np.testing.assert_array_equal(state.c.value, np.zeros(3))
    np.testing.assert_array_equal(state.h.value, np.zeros(3))


def test_lstm_carries_cell_when_forget_saturates() -> None:
    shapes = LstmParams.shapes("lstm", 2, 2)
    view = {name: Tensor(np.zeros(shape)) for name, shape in shapes.items()}
    b = np.zeros(8)
    b[0:2] = -50.0  # input gate closed
    b[2:4] = 50.0  # forget gate open
    view["lstm.b"] = Tensor(b)
    c = np.array([0.7, -0.3])

    state = lstm_step(Tensor([1.0, 2.0]), LstmState(Tensor([0.2, 0.1]), Tensor(c)), LstmParams.bind(view, "lstm"))

    np.testing.assert_allclose(state.c.value, c, atol=1e-12)


def test_lstm_matches_formula() -> None:
    p = random_cell(CellKind.LSTM, 2, 2, seed=2)
    assert isinstance(p, LstmParams)
    x, h, c = np.array([0.3, -0.7]), np.array([0.1, 0.5]), np.array([-0.2, 0.4])
    gates = p.w.value @ x + p.u.value @ h + p.b.value
    i, f, g, o = sigmoid(gates[0:2]), sigmoid(gates[2:4]), np.tanh(gates[4:6]), sigmoid(gates[6:8])
    c_next = f * c + i * g

    state = lstm_step(Tensor(x), LstmState(Tensor(h), Tensor(c)), p)

    np.testing.assert_allclose(state.c.value, c_next, rtol=1e-12)
    np.testing.assert_allclose(state.h.value, o * np.tanh(c_next), rtol=1e-12)


def test_cell_rejects_wrong_input_shape() -> None:
    with pytest.raises(ShapeError):
        gru_step(Tensor(np.zeros(3)), Tensor(np.zeros(3)), zero_gru(2, 3))


def test_cell_params_reject_inconsistent_shapes() -> None:
    with pytest.raises(ShapeError):
        GruParams(Tensor(np.zeros((6, 2))), Tensor(np.zeros((4, 2))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(5)))


@pytest.mark.parametrize("kind", list(CellKind), ids=[k.value for k in CellKind])
def test_birnn_single_token(kind: CellKind) -> None:
    fwd, bwd = random_cell(kind, 2, 3, seed=3), random_cell(kind, 2, 3, seed=4)
    x = Tensor([0.5, -0.5])

    states = birnn([x], fwd, bwd)

    assert len(states.rows) == 1
    expected = np.concatenate([unroll([x], fwd)[0].value, unroll([x], bwd)[0].value])
    np.testing.assert_allclose(states.rows[0].value, expected)
    np.testing.assert_allclose(states.final.value, expected)


@pytest.mark.parametrize("kind", list(CellKind), ids=[k.value for k in CellKind])
def test_birnn_halves_match_unidirectional_runs(kind: CellKind) -> None:
    fwd, bwd = random_cell(kind, 2, 3, seed=5), random_cell(kind, 2, 3, seed=6)
    seq = [Tensor(v) for v in np.random.default_rng(7).normal(size=(3, 2))]

    states = birnn(seq, fwd, bwd)

    forward_only = unroll(seq, fwd)
    backward_only = unroll(seq[::-1], bwd)
    np.testing.assert_allclose(states.rows[2].value[:3], forward_only[2].value)
    np.testing.assert_allclose(states.rows[0].value[3:], backward_only[2].value)
    np.testing.assert_allclose(states.final.value, np.concatenate([forward_only[2].value, backward_only[2].value]))


def test_birnn_rejects_empty_sequence() -> None:
    with pytest.raises(ShapeError):
        birnn([], zero_gru(2, 2), zero_gru(2, 2))


def test_affine_without_bias() -> None:
    layer = AffineParams(Tensor([[1.0, 2.0], [3.0, 4.0]]))

    assert layer(Tensor([1.0, 1.0])).value.tolist() == [3.0, 7.0]
    assert AffineParams.shapes("out", 2, 5, bias=False) == {"out.w": (5, 2)}


@pytest.mark.parametrize("kind", list(CellKind), ids=[k.value for k in CellKind])
def test_birnn_gradients(kind: CellKind) -> None:
    rng = np.random.default_rng(8)
    point = {name: rng.normal(scale=0.5, size=shape) for name, shape in cell_shapes(kind, "f", 2, 2).items()}
    point |= {name: rng.normal(scale=0.5, size=shape) for name, shape in cell_shapes(kind, "b", 2, 2).items()}
    point["x"] = rng.normal(size=(3, 2))

    def loss(p):
        seq = [Tensor(row) for row in p["x"].value]
        states = birnn(seq, bind_cell(kind, p, "f"), bind_cell(kind, p, "b"))
        return ad.reduce_sum(states.final)

    result = grad_check(loss, point, names=[name for name in point if name != "x"])

    assert result.max_relative_error <= 1e-6
