import numpy as np
import pytest

from unrolled.blocks import BlockVariant, NetworkSpec, StageSpec, backward, forward, init_network
from unrolled.numerics import Rng, finite_diff_gradient, max_relative_error
from unrolled.train import softmax_cross_entropy


def small_net(variant, seed=0, width=5, blocks=2, input_dim=3, output_dim=4, activation="tanh"):
    spec = NetworkSpec(input_dim, (StageSpec(width, blocks, variant),), output_dim, seed, activation)
    return init_network(spec)


def reference_loss(net, theta, x, labels, dtype=np.longdouble):
    """Independent forward pass and mean cross-entropy in extended precision."""
    spec = net.spec
    p = {}
    i = 0
    for k, v in net.params.items():
        p[k] = np.asarray(theta[i : i + v.size], dtype=dtype).reshape(v.shape)
        i += v.size
    act = np.tanh if spec.activation == "tanh" else (lambda z: np.maximum(z, 0))
    sig = lambda z: 1 / (1 + np.exp(-z))
    a = np.asarray(x, dtype=dtype) @ p["input.w"] + p["input.b"]
    for s, st in enumerate(spec.stages):
        if f"proj{s}.w" in p:
            a = a @ p[f"proj{s}.w"] + p[f"proj{s}.b"]
        for b in range(st.blocks):
            if (s, b) in net.identity_blocks:
                continue
            q = lambda n: p[f"stage{s}.block{b}.{n}"]
            h = act(a @ q("h_w") + q("h_b"))
            t = sig(a @ q("t_w") + q("t_b")) if st.variant.has_t else 1
            c = sig(a @ q("c_w") + q("c_b")) if st.variant.has_c else 1
            if st.variant is BlockVariant.PLAIN:
                a = h
            elif st.variant is BlockVariant.COUPLED:
                a = h * t + a * (1 - t)
            else:
                a = h * t + a * c
    z = a @ p["output.w"] + p["output.b"]
    z = z - z.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -log_p[np.arange(len(labels)), labels].mean()


def gradient_check(net, x, labels, eps=1e-5):
    """Max relative error between backprop and central differences on the loss.

    The differenced loss is evaluated by ``reference_loss`` in long double, so
    the oracle shares no code with the forward/backward path under test.
    """
    trace = forward(net, x)
    _, dlogits = softmax_cross_entropy(trace.logits, labels)
    grads = backward(net, trace, dlogits)
    analytic = np.concatenate([grads[k].ravel() for k in net.params])
    numeric = finite_diff_gradient(lambda th: reference_loss(net, th, x, labels), net.flat(), eps)
    return max_relative_error(analytic, numeric)


def random_batch(seed, n=4, dim=3, classes=4):
    rng = Rng(seed + 7919)
    return rng.normal((n, dim)), rng.integers(classes, n)


@pytest.fixture(params=list(BlockVariant), ids=lambda v: v.value)
def variant(request):
    return request.param
