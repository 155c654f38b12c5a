import numpy as np
import pytest

from sstnet.autodiff import Tensor
from sstnet.errors import ParameterError, ShapeError
from sstnet.optim import AdamState, adam_step, fans, step_lr, xavier_init


def _param(values):
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def test_zero_gradient_leaves_params_unchanged():
    p = _param([1.0, -2.0])
    st = AdamState.for_params([p], learning_rate=0.1)
    adam_step([p], [np.zeros(2)], st)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert st.step_count == 1


def test_constant_gradient_displacement_tends_to_lr():
    p = _param([0.0])
    st = AdamState.for_params([p], learning_rate=1e-3)
    prev = 0.0
    for _ in range(200):
        adam_step([p], [np.array([0.7])], st)
        step = prev - p.data[0]
        prev = p.data[0]
    assert abs(step - 1e-3) < 1e-3 * 1e-4


def test_first_step_is_sign_times_lr():
    p = _param([0.0, 0.0])
    st = AdamState.for_params([p], learning_rate=0.01)
    adam_step([p], [np.array([3.0, -0.2])], st)
    np.testing.assert_allclose(p.data, [-0.01, 0.01], rtol=1e-6)


def test_adam_deterministic():
    runs = []
    for _ in range(2):
        p = xavier_init((4, 3), seed=5, dtype=np.float64)
        st = AdamState.for_params([p], learning_rate=0.05)
        g = np.random.default_rng(0)
        for _ in range(10):
            adam_step([p], [g.normal(size=(4, 3))], st)
        runs.append(p.data.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_step_count_increments():
    p = _param([1.0])
    st = AdamState.for_params([p])
    for k in range(1, 4):
        adam_step([p], [np.ones(1)], st)
        assert st.step_count == k


@pytest.mark.parametrize("grad_shape", [(3,), (2, 1)])
def test_adam_shape_mismatch(grad_shape):
    p = _param([1.0, 2.0])
    with pytest.raises(ShapeError):
        adam_step([p], [np.ones(grad_shape)], AdamState.for_params([p]))


def test_adam_list_length_mismatch():
    p = _param([1.0])
    with pytest.raises(ShapeError):
        adam_step([p], [], AdamState.for_params([p]))


def test_xavier_same_seed():
    np.testing.assert_array_equal(xavier_init((8, 5), 3).data, xavier_init((8, 5), 3).data)
    assert not np.array_equal(xavier_init((8, 5), 3).data, xavier_init((8, 5), 4).data)


def test_xavier_variance():
    w = xavier_init((100, 100), seed=11, dtype=np.float64).data
    target = 2.0 / 200
    assert abs(w.var() - target) / target < 0.2


def test_xavier_bounds_over_a_million_draws():
    w = xavier_init((1000, 1000), seed=2, dtype=np.float64).data
    bound = np.sqrt(6.0 / 2000)
    assert np.all(np.abs(w) <= bound)


def test_xavier_conv_fans():
    assert fans((3, 3, 4, 8)) == (36, 72)


@pytest.mark.parametrize("shape", [(5,), ()])
def test_xavier_rank_error(shape):
    with pytest.raises(ParameterError):
        xavier_init(shape, 0)


def test_step_lr_schedule():
    assert step_lr(1) == 1e-4
    assert step_lr(60) == 1e-4
    assert step_lr(61) == 1e-5
    assert step_lr(100) == 1e-5
