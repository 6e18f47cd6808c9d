import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcx.errors import (
    ClassifierTimeout,
    DivergedLoss,
    InvalidConfig,
    InvalidDataset,
    ModelParseError,
    ProcessExit,
    ProtocolError,
    ShapeMismatch,
    VersionMismatch,
)
from pcx.model import (
    SHAPES,
    SyntheticShapeSpec,
    external_classifier,
    forward,
    forward_batch,
    from_params,
    gradient,
    init_params,
    load_model,
    save_model,
    synth_dataset,
    train,
)
from pcx.model.network import TinyPointNetParams, dumps_model, loads_model


def reference_forward(params, pts):
    """Point-by-point, neuron-by-neuron re-implementation of the forward pass."""
    feats = []
    for p in pts:
        h = list(p)
        for W, b in params.point_layers:
            h = [max(0.0, sum(h[i] * W[i, j] for i in range(len(h))) + b[j]) for j in range(W.shape[1])]
        feats.append(h)
    g = [max(f[j] for f in feats) for j in range(len(feats[0]))]
    for k, (W, b) in enumerate(params.head_layers):
        g = [sum(g[i] * W[i, j] for i in range(len(g))) + b[j] for j in range(W.shape[1])]
        if k < len(params.head_layers) - 1:
            g = [max(0.0, v) for v in g]
    return np.array(g)


@pytest.fixture(scope="module")
def small_params():
    params = init_params(5, seed=11, point_widths=(3, 8, 16), head_widths=(16, 12))
    rng = np.random.default_rng(12)
    # nonzero biases so every term of the arithmetic is exercised
    for W, b in params.point_layers + params.head_layers:
        b += rng.normal(scale=0.1, size=b.shape)
    return params


def test_forward_matches_reference(small_params):
    pts = np.random.default_rng(0).normal(size=(12, 3))
    np.testing.assert_allclose(forward(small_params, pts), reference_forward(small_params, pts), atol=1e-6)


def test_forward_default_widths_reference():
    params = init_params(8, seed=3)
    pts = np.random.default_rng(1).normal(size=(6, 3))
    np.testing.assert_allclose(forward(params, pts), reference_forward(params, pts), atol=1e-6)


def test_zero_weights_zero_logits():
    params = init_params(4, seed=0)
    for arr in params.arrays():
        arr[...] = 0.0
    assert np.all(forward(params, np.random.default_rng(0).normal(size=(30, 3))) == 0.0)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_permutation_invariance(seed):
    params = init_params(8, seed=seed % 97)
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(int(rng.integers(1, 300)), 3))
    perm = rng.permutation(len(pts))
    assert forward(params, pts).tobytes() == forward(params, pts[perm]).tobytes()


def test_shape_errors(small_params):
    with pytest.raises(ShapeMismatch):
        forward(small_params, np.zeros((4, 2)))
    with pytest.raises(ShapeMismatch):
        gradient(small_params, np.zeros((4, 3)), 99)
    W, b = small_params.point_layers[0]
    with pytest.raises(ShapeMismatch):
        TinyPointNetParams([(W, b)], [(np.zeros((3, 2)), np.zeros(2))])


def central_differences(params, pts, k, coords, step=1e-4):
    out = []
    for i, a in coords:
        plus, minus = pts.copy(), pts.copy()
        plus[i, a] += step
        minus[i, a] -= step
        out.append((forward(params, plus)[k] - forward(params, minus)[k]) / (2 * step))
    return np.array(out)


def test_gradient_matches_finite_differences(bundled_params, shapes_small):
    rng = np.random.default_rng(5)
    for pc in shapes_small[:4]:
        pts = pc.points.copy()
        k = int(np.argmax(forward(bundled_params, pts)))
        g = gradient(bundled_params, pts, k)
        coords = [(int(rng.integers(len(pts))), int(rng.integers(3))) for _ in range(20)]
        fd = central_differences(bundled_params, pts, k, coords)
        np.testing.assert_allclose([g[i, a] for i, a in coords], fd, atol=1e-3)


def test_gradient_dead_points_are_zero(bundled_params, shapes_small):
    pts = shapes_small[0].points
    _, (acts, arg, _) = forward_batch(bundled_params, pts[None], keep=True)
    winners = set(np.unique(arg[0]).tolist())
    dead = [i for i in range(len(pts)) if i not in winners]
    assert dead
    g = gradient(bundled_params, pts, 0)
    assert np.all(g[dead] == 0.0)


def test_gradient_linear_in_final_row(bundled_params, shapes_small):
    pts = shapes_small[2].points
    c = 3
    g = gradient(bundled_params, pts, c)
    doubled = bundled_params.copy()
    doubled.head_layers[-1][0][:, c] *= 2.0
    assert np.array_equal(gradient(doubled, pts, c), 2.0 * g)


def test_batched_gradient_matches_single(bundled_params, shapes_small):
    X = np.stack([pc.points for pc in shapes_small[:3]])
    batched = gradient(bundled_params, X, 1)
    for i in range(3):
        # BLAS may sum in a different order for different batch shapes
        np.testing.assert_allclose(batched[i], gradient(bundled_params, X[i], 1), rtol=1e-12, atol=1e-13)


# --------------------------------------------------------------------------
# persistence


def test_save_load_bit_identical(tmp_path, bundled_params, shapes_small):
    path = tmp_path / "m.json"
    save_model(bundled_params, path)
    back = load_model(path)
    pts = shapes_small[0].points
    assert forward(back, pts).tobytes() == forward(bundled_params, pts).tobytes()
    for a, b in zip(back.arrays(), bundled_params.arrays()):
        assert a.tobytes() == b.tobytes()
    assert back.class_names == bundled_params.class_names


def test_weights_written_with_17_digits(small_params):
    text = dumps_model(small_params)
    w = small_params.point_layers[0][0][0, 0]
    assert format(float(w), ".17g") in text


def test_corrupted_model(tmp_path, small_params):
    text = dumps_model(small_params)
    with pytest.raises(ModelParseError):
        loads_model(text[: len(text) // 2])
    with pytest.raises(ModelParseError):
        loads_model(text.replace('"point.1.W"', '"point.9.W"'))


def test_version_checks(small_params):
    text = dumps_model(small_params)
    with pytest.raises(VersionMismatch):
        loads_model(text.replace('"version":1,', ""))
    with pytest.raises(VersionMismatch):
        loads_model(text.replace('"version":1,', '"version":2,'))


# --------------------------------------------------------------------------
# synthetic data and training


def test_sphere_points_on_unit_sphere():
    (pc,) = synth_dataset(["sphere"], 1, SyntheticShapeSpec(points=1024, jitter=0.0, seed=4))
    np.testing.assert_allclose(np.linalg.norm(pc.points, axis=1), 1.0, atol=1e-6)


def test_plane_is_coplanar():
    (pc,) = synth_dataset(["plane"], 1, SyntheticShapeSpec(points=512, jitter=0.0, seed=4))
    assert np.linalg.eigvalsh(np.cov(pc.points.T)).min() < 1e-9


def test_synth_deterministic_and_labeled():
    spec = SyntheticShapeSpec(points=64, jitter=0.02, seed=9)
    a = synth_dataset(SHAPES, 2, spec)
    b = synth_dataset(SHAPES, 2, spec)
    assert len(a) == 16
    assert all(x.points.tobytes() == y.points.tobytes() for x, y in zip(a, b))
    assert [pc.label for pc in a] == [k for k in range(8) for _ in range(2)]
    for pc in a:
        assert len(pc) == 64
        assert np.linalg.norm(pc.points, axis=1).max() == pytest.approx(1.0)


def test_synth_validation():
    with pytest.raises(InvalidConfig):
        SyntheticShapeSpec(points=4)
    with pytest.raises(InvalidConfig):
        SyntheticShapeSpec(jitter=-1)
    with pytest.raises(InvalidConfig):
        synth_dataset(["sphere"], 0)


@pytest.fixture(scope="module")
def tiny_data():
    spec = SyntheticShapeSpec(points=128, jitter=0.02, seed=1)
    return synth_dataset(["sphere", "plane", "helix"], 12, spec)


def test_train_deterministic(tiny_data):
    a = train(tiny_data, epochs=3, lr=0.01, batch_size=8, seed=2)
    b = train(tiny_data, epochs=3, lr=0.01, batch_size=8, seed=2)
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        assert x.tobytes() == y.tobytes()
    assert len(a.log) == 3
    assert all(np.isfinite(e.loss) for e in a.log)


def test_train_rejects_single_class(tiny_data):
    with pytest.raises(InvalidDataset):
        train([pc for pc in tiny_data if pc.label == 0], epochs=1)
    with pytest.raises(InvalidDataset):
        train([], epochs=1)


def test_train_divergence_is_reported(tiny_data):
    with pytest.raises(DivergedLoss):
        train(tiny_data, epochs=5, lr=1e12, batch_size=8, seed=0)


# --------------------------------------------------------------------------
# external classifiers


def stub(tmp_path, body):
    path = tmp_path / "stub.py"
    path.write_text(textwrap.dedent(body))
    return [sys.executable, str(path)]


ECHO = """
    import json, sys
    pending = []
    for line in sys.stdin:
        msg = json.loads(line)
        if msg.get("end"):
            for rid in pending:
                print(json.dumps({"id": rid, "logits": LOGITS}), flush=True)
            pending = []
        else:
            pending.append(msg["id"])
"""


def test_external_echo(tmp_path):
    f = external_classifier(stub(tmp_path, "LOGITS = [0, 1]\n" + textwrap.dedent(ECHO)))
    try:
        rng = np.random.default_rng(0)
        out = f.predict([rng.normal(size=(10, 3)), rng.normal(size=(7, 3))])
        assert out.tolist() == [[0.0, 1.0], [0.0, 1.0]]
        assert f.predict([np.zeros((3, 3))]).tolist() == [[0.0, 1.0]]
        assert not f.differentiable
    finally:
        f.close()


def test_external_process_exit(tmp_path):
    f = external_classifier(stub(tmp_path, "import sys; sys.exit(0)\n"))
    with pytest.raises(ProcessExit):
        f.predict([np.zeros((4, 3))])
    f.close()


def test_external_wrong_length(tmp_path):
    f = external_classifier(stub(tmp_path, "LOGITS = [0, 1]\n" + textwrap.dedent(ECHO)), class_names=["a", "b", "c"])
    with pytest.raises(ProtocolError):
        f.predict([np.zeros((4, 3))])
    f.close()


def test_external_garbage_reply(tmp_path):
    f = external_classifier(stub(tmp_path, "import sys\nfor line in sys.stdin:\n    print('nope', flush=True)\n"))
    with pytest.raises(ProtocolError):
        f.predict([np.zeros((4, 3))])
    f.close()


def test_external_timeout(tmp_path):
    f = external_classifier(stub(tmp_path, "import time, sys\nsys.stdin.readline()\ntime.sleep(30)\n"), timeout=0.5)
    with pytest.raises(ClassifierTimeout):
        f.predict([np.zeros((4, 3))])
    f.close()


def test_serve_matches_in_process(bundled_params, shapes_small):
    from pcx.cli import BUNDLED_MODEL

    f = external_classifier([sys.executable, "-m", "pcx.model.serve", str(BUNDLED_MODEL)])
    try:
        clouds = [pc.points for pc in shapes_small[:3]]
        np.testing.assert_array_equal(f.predict(clouds), from_params(bundled_params).predict(clouds))
    finally:
        f.close()
