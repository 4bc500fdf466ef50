import numpy as np
import pytest

from kitchen_fetch.objective import LossSpec, NonFiniteError
from kitchen_fetch.policy import (
    Minibatch, NetworkSpec, PolicyParams, backward, forward, greedy_action, init_params, minibatch_loss,
    sample_action,
)


def closed_form_count(c, w, convs, hidden, ctx=8, actions=7):
    n, size = 0, w
    for out, k, s in convs:
        n += out * c * k * k + out
        c, size = out, (size - k) // s + 1
    flat = c * size * size + ctx
    return n + hidden * flat + hidden + actions * hidden + actions + hidden + 1


def random_batch(spec, n, rng, adv_scale=1.0):
    feats = rng.random((n, spec.input_channels, spec.window, spec.window))
    ctx = np.eye(spec.context_units)[rng.integers(spec.context_units, size=n)] if spec.context_units else np.zeros((n, 0))
    return Minibatch(feats, ctx, rng.integers(7, size=n), np.log(rng.dirichlet(np.ones(7), size=n)[:, 0]),
                     adv_scale * rng.normal(size=n), rng.normal(size=n))


def numeric_grad(params, batch, loss_spec, h=1e-5):
    g = np.zeros_like(params.flat)
    for i in range(params.flat.size):
        up, dn = params.flat.copy(), params.flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (minibatch_loss(PolicyParams(params.spec, up), batch, loss_spec).total
                - minibatch_loss(PolicyParams(params.spec, dn), batch, loss_spec).total) / (2 * h)
    return g


# --------------------------------------------------------------------------- spec


def test_parameter_count_closed_form():
    for c, w, convs, hidden in [(14, 11, ((16, 3, 1), (32, 3, 1)), 128), (4, 11, ((16, 3, 1), (32, 3, 1)), 128),
                                (14, 11, ((16, 3, 1), (32, 3, 2)), 128), (2, 5, ((3, 2, 2),), 4), (3, 4, (), 6)]:
        spec = NetworkSpec(c, w, convs, hidden)
        assert spec.parameter_count == closed_form_count(c, w, convs, hidden)
    assert NetworkSpec(14, 11).parameter_count == 209_560


@pytest.mark.parametrize("kwargs", [
    dict(input_channels=0, window=11), dict(input_channels=4, window=0),
    dict(input_channels=4, window=5, conv_layers=((4, 7, 1),)), dict(input_channels=4, window=5, hidden_units=0),
    dict(input_channels=4, window=5, conv_layers=((0, 3, 1),)), dict(input_channels=4, window=5, action_count=5),
])
def test_invalid_specs(kwargs):
    with pytest.raises(ValueError):
        NetworkSpec(**kwargs)


def test_spec_dict_round_trip():
    spec = NetworkSpec(4, 11, ((8, 3, 2),), 32)
    assert NetworkSpec.from_dict(spec.to_dict()) == spec


def test_init_is_seeded_with_zero_biases():
    spec = NetworkSpec(4, 7, ((4, 3, 1),), 16)
    a, b, c = init_params(spec, 1), init_params(spec, 1), init_params(spec, 2)
    assert np.array_equal(a.flat, b.flat) and not np.array_equal(a.flat, c.flat)
    for name, arr in a.layers().items():
        if name.endswith(".b"):
            assert np.all(arr == 0)
    # small policy head: the initial distribution is close to uniform
    out = forward(a, np.random.default_rng(0).random((4, 7, 7)), np.eye(8)[0])
    assert np.allclose(out.action_probs, 1 / 7, atol=0.02)


# --------------------------------------------------------------------------- forward


def naive_forward(params, x, ctx):
    """Loop-based reference; the conv output is flattened row, column, channel."""
    spec = params.spec
    p = params.layers()
    a = x
    for i, (out, k, s) in enumerate(spec.conv_layers):
        w, b = p[f"conv{i}.w"], p[f"conv{i}.b"]
        size = a.shape[1]
        osz = (size - k) // s + 1
        y = np.zeros((out, osz, osz))
        for o in range(out):
            for r in range(osz):
                for c in range(osz):
                    y[o, r, c] = np.sum(w[o] * a[:, r * s : r * s + k, c * s : c * s + k]) + b[o]
        a = np.maximum(y, 0)
    flat = np.concatenate([a.transpose(1, 2, 0).ravel(), ctx])
    h = np.maximum(p["fc.w"] @ flat + p["fc.b"], 0)
    logits = p["pi.w"] @ h + p["pi.b"]
    value = (p["v.w"] @ h + p["v.b"])[0]
    z = logits - logits.max()
    probs = np.exp(z) / np.exp(z).sum()
    return probs, value


def test_forward_matches_loop_reference():
    rng = np.random.default_rng(0)
    spec = NetworkSpec(3, 7, ((4, 3, 1), (5, 2, 2)), 9)
    params = PolicyParams(spec, rng.normal(scale=0.3, size=spec.parameter_count))
    x = rng.random((3, 7, 7))
    ctx = np.eye(8)[2]
    out = forward(params, x, ctx)
    probs, value = naive_forward(params, x, ctx)
    assert np.allclose(out.action_probs, probs, atol=1e-12)
    assert out.value == pytest.approx(value, abs=1e-12)
    assert out.entropy == pytest.approx(-(probs * np.log(probs)).sum(), abs=1e-12)


def test_batched_forward_equals_single():
    rng = np.random.default_rng(1)
    spec = NetworkSpec(4, 11, ((8, 3, 1),), 16)
    params = init_params(spec, 3)
    x = rng.random((5, 4, 11, 11))
    ctx = np.eye(8)[rng.integers(8, size=5)]
    batch = forward(params, x, ctx)
    for i in range(5):
        single = forward(params, x[i], ctx[i])
        assert np.allclose(single.action_probs, batch.action_probs[i], atol=1e-14)
        assert np.sum(single.action_probs) == pytest.approx(1.0)


def test_forward_rejects_wrong_shapes():
    params = init_params(NetworkSpec(4, 11, ((4, 3, 1),), 8), 0)
    with pytest.raises(ValueError, match="does not match"):
        forward(params, np.zeros((14, 11, 11)), np.zeros(8))
    with pytest.raises(ValueError, match="context"):
        forward(params, np.zeros((4, 11, 11)), np.zeros(3))


# --------------------------------------------------------------------------- sampling


def test_uniform_sampling_frequencies():
    rng = np.random.default_rng(0)
    probs = np.full(7, 1 / 7)
    counts = np.bincount([sample_action(probs, rng)[0] for _ in range(70000)], minlength=7) / 70000
    assert np.all(np.abs(counts - 1 / 7) < 0.01)


def test_sampling_returns_log_probability_and_respects_zeros():
    rng = np.random.default_rng(0)
    probs = np.array([0.0, 0.0, 1.0, 0, 0, 0, 0])
    for _ in range(100):
        a, lp = sample_action(probs, rng)
        assert a == 2 and lp == 0.0
    probs = np.array([0.5, 0.25, 0.25, 0, 0, 0, 0])
    seen = {sample_action(probs, rng) for _ in range(300)}
    assert seen == {(0, np.log(0.5)), (1, np.log(0.25)), (2, np.log(0.25))}


def test_greedy_is_argmax():
    params = init_params(NetworkSpec(4, 5, ((3, 3, 1),), 8), 0)
    out = forward(params, np.random.default_rng(0).random((4, 5, 5)), np.eye(8)[1])
    assert greedy_action(out) == int(np.argmax(out.action_probs))


# --------------------------------------------------------------------------- gradients


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    spec = NetworkSpec(2, 5, ((3, 3, 1), (2, 2, 1)), 6, context_units=3)
    assert spec.parameter_count <= 250
    params = PolicyParams(spec, rng.normal(scale=0.5, size=spec.parameter_count))
    batch = random_batch(spec, 6, rng)
    loss_spec = LossSpec(0.2, 0.5, 0.01)
    grad, _ = backward(params, batch, loss_spec)
    num = numeric_grad(params, batch, loss_spec)
    rel = np.abs(grad - num) / np.maximum(1e-6, np.abs(grad) + np.abs(num))
    assert rel.max() < 1e-4


def test_gradient_through_binding_clip_matches_finite_differences():
    # old log-probs far from the new ones: most samples sit on the clipped branch
    rng = np.random.default_rng(8)
    spec = NetworkSpec(2, 4, ((2, 3, 1),), 5, context_units=2)
    params = PolicyParams(spec, rng.normal(scale=0.5, size=spec.parameter_count))
    b = random_batch(spec, 8, rng)
    new_lp = np.log(forward(params, b.features, b.context).action_probs[np.arange(8), b.actions])
    old = new_lp + rng.choice([-1.0, 1.0], size=8)
    batch = Minibatch(b.features, b.context, b.actions, old, b.advantages, b.returns)
    loss_spec = LossSpec(0.2, 0.5, 0.01)
    grad, terms = backward(params, batch, loss_spec)
    assert terms.clip_fraction > 0
    num = numeric_grad(params, batch, loss_spec)
    assert np.max(np.abs(grad - num) / np.maximum(1e-6, np.abs(grad) + np.abs(num))) < 1e-4


def test_zero_advantage_and_coefficients_give_zero_gradient():
    rng = np.random.default_rng(1)
    spec = NetworkSpec(2, 5, ((3, 3, 1),), 6)
    params = init_params(spec, 0)
    b = random_batch(spec, 5, rng)
    batch = Minibatch(b.features, b.context, b.actions, b.old_log_prob, np.zeros(5), b.returns)
    grad, _ = backward(params, batch, LossSpec(0.2, 0.0, 0.0))
    assert np.all(grad == 0)


def test_duplicated_sample_gives_the_same_gradient():
    rng = np.random.default_rng(2)
    spec = NetworkSpec(2, 5, ((3, 3, 1),), 6)
    params = init_params(spec, 0)
    one = random_batch(spec, 1, rng)
    two = Minibatch(*(np.concatenate([v, v]) for v in (one.features, one.context, one.actions,
                                                       one.old_log_prob, one.advantages, one.returns)))
    g1, _ = backward(params, one, LossSpec())
    g2, _ = backward(params, two, LossSpec())
    assert np.allclose(g1, g2, atol=1e-14)


def test_non_finite_input_is_reported():
    spec = NetworkSpec(2, 5, ((3, 3, 1),), 6)
    params = init_params(spec, 0)
    b = random_batch(spec, 3, np.random.default_rng(0))
    feats = b.features.copy()
    feats[0, 0, 0, 0] = np.nan
    bad = Minibatch(feats, b.context, b.actions, b.old_log_prob, b.advantages, b.returns)
    with pytest.raises(NonFiniteError):
        backward(params, bad, LossSpec())
