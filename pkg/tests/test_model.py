import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphgen.errors import (
    BadMagic,
    BadParameter,
    DimensionMismatch,
    InvariantViolation,
    IoFailure,
    MissingFile,
)
from morphgen.model import (
    ExpressionCoefficients,
    IdentityCoefficients,
    compute_vertex_normals,
    load_model,
    make_toy_model,
    sample_expression,
    sample_identity,
    save_model,
    synthesize_instance,
    uv_sphere,
    zero_expression,
    zero_identity,
)

FIELDS = (
    "mean_shape", "shape_basis", "shape_sigma", "mean_color", "color_basis",
    "color_sigma", "expr_basis", "expr_sigma", "triangles", "landmark_indices",
)


def assert_models_identical(a, b):
    for name in FIELDS:
        x, y = getattr(a, name), getattr(b, name)
        assert x.shape == y.shape, name
        assert x.tobytes() == y.tobytes(), name


def test_toy_model_deterministic():
    assert_models_identical(make_toy_model(8, 5, 5, 3, seed=7), make_toy_model(8, 5, 5, 3, seed=7))


def test_toy_model_counts():
    m = make_toy_model(8, 5, 5, 3, seed=7)
    assert m.triangle_count == 2 * 8 * 7
    assert m.vertex_count == 2 + 7 * 8
    assert m.n_landmarks == 21
    assert m.landmark_indices[0] == 0
    assert len(set(m.landmark_indices.tolist())) == 21


@pytest.mark.parametrize("rings", [4, 8, 13])
def test_toy_basis_columns_unit_norm(rings):
    m = make_toy_model(rings, 5, 4, 3, seed=rings)
    for basis in (m.shape_basis, m.color_basis, m.expr_basis):
        norms = np.linalg.norm(basis.astype(np.float64), axis=0)
        assert np.all(np.abs(norms - 1) < 1e-6)
    for sigma in (m.shape_sigma, m.color_sigma, m.expr_sigma):
        assert np.all((sigma >= 0.5 - 1e-6) & (sigma <= 5.0 + 1e-6))


def test_toy_model_bad_rings():
    with pytest.raises(BadParameter, match="rings"):
        make_toy_model(3, 5, 5, 3, seed=0)
    with pytest.raises(BadParameter):
        make_toy_model(8, 0, 5, 3, seed=0)


def test_uv_sphere_winding_outward():
    pos, tri = uv_sphere(9)
    p0, p1, p2 = (pos[tri[:, k].astype(int)] for k in range(3))
    face = np.cross(p1 - p0, p2 - p0)
    assert np.all(np.einsum("ij,ij->i", face, (p0 + p1 + p2) / 3) > 0)


def test_save_load_round_trip(tmp_path, toy_model):
    path = tmp_path / "m.mfm"
    save_model(toy_model, path)
    loaded = load_model(path)
    assert loaded.header() == toy_model.header()
    assert_models_identical(loaded, toy_model)


def test_save_is_deterministic(tmp_path, toy_model):
    save_model(toy_model, tmp_path / "a.mfm")
    save_model(toy_model, tmp_path / "b.mfm")
    assert (tmp_path / "a.mfm").read_bytes() == (tmp_path / "b.mfm").read_bytes()


def test_file_layout(tmp_path):
    m = make_toy_model(4, 1, 1, 1, seed=0)
    path = tmp_path / "m.mfm"
    save_model(m, path)
    data = path.read_bytes()
    assert data[:4] == b"MFM1"
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen])
    assert header == {"V": 14, "T": 24, "Ks": 1, "Kc": 1, "Ke": 1, "L": 14}
    first = np.frombuffer(data, "<f4", count=3, offset=8 + hlen)
    assert first.tobytes() == m.mean_shape[:3].tobytes()


def test_save_unwritable(tmp_path, toy_model):
    with pytest.raises(IoFailure):
        save_model(toy_model, tmp_path / "missing-dir" / "m.mfm")


def test_load_missing(tmp_path):
    with pytest.raises(MissingFile):
        load_model(tmp_path / "nope.mfm")


def test_load_bad_magic(tmp_path, toy_model):
    path = tmp_path / "m.mfm"
    save_model(toy_model, path)
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(BadMagic):
        load_model(path)


def _rewrite_header(path, **changes):
    data = path.read_bytes()
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + hlen])
    header.update(changes)
    blob = json.dumps(header).encode()
    path.write_bytes(b"MFM1" + struct.pack("<I", len(blob)) + blob + data[8 + hlen :])


def test_load_dimension_mismatch(tmp_path):
    m = make_toy_model(6, 4, 3, 2, seed=1)
    path = tmp_path / "m.mfm"
    save_model(m, path)
    _rewrite_header(path, Ks=5)  # payload still holds 4 shape columns
    with pytest.raises(DimensionMismatch):
        load_model(path)


def test_load_rejects_non_unit_basis(tmp_path):
    m = make_toy_model(6, 2, 2, 2, seed=1)
    path = tmp_path / "m.mfm"
    save_model(m, path)
    data = bytearray(path.read_bytes())
    (hlen,) = struct.unpack("<I", data[4:8])
    off = 8 + hlen + 4 * m.mean_shape.size  # first shape-basis float
    struct.pack_into("<f", data, off, struct.unpack_from("<f", data, off)[0] + 0.5)
    path.write_bytes(bytes(data))
    with pytest.raises(InvariantViolation):
        load_model(path)


def test_load_rejects_non_positive_sigma(tmp_path):
    m = make_toy_model(6, 2, 2, 2, seed=1)
    path = tmp_path / "m.mfm"
    save_model(m, path)
    data = bytearray(path.read_bytes())
    (hlen,) = struct.unpack("<I", data[4:8])
    off = 8 + hlen + 4 * (m.mean_shape.size + m.shape_basis.size)
    struct.pack_into("<f", data, off, -1.0)
    path.write_bytes(bytes(data))
    with pytest.raises(InvariantViolation):
        load_model(path)


def test_sample_identity_deterministic(toy_model):
    a = sample_identity(toy_model, np.random.default_rng(4))
    b = sample_identity(toy_model, np.random.default_rng(4))
    assert np.array_equal(a.shape, b.shape) and np.array_equal(a.color, b.color)
    assert a.shape.shape == (toy_model.n_shape,)
    assert a.color.shape == (toy_model.n_color,)


def test_sample_identity_length_five():
    m = make_toy_model(6, 5, 2, 3, seed=0)
    assert sample_identity(m, np.random.default_rng(0)).shape.shape == (5,)
    assert sample_expression(m, np.random.default_rng(0)).expr.shape == (3,)


def test_sampling_statistics(toy_model):
    rng = np.random.default_rng(2024)
    shape0 = np.array([sample_identity(toy_model, rng).shape[0] for _ in range(10_000)])
    assert -0.05 <= shape0.mean() <= 0.05
    assert 0.95 <= shape0.std(ddof=1) <= 1.05
    expr0 = np.array([sample_expression(toy_model, rng).expr[0] for _ in range(10_000)])
    assert -0.05 <= expr0.mean() <= 0.05


def test_synthesize_zero_is_mean(toy_model):
    mesh = synthesize_instance(toy_model, zero_identity(toy_model), zero_expression(toy_model))
    assert np.array_equal(mesh.positions.reshape(-1), toy_model.mean_shape.astype(np.float64))
    assert np.array_equal(
        mesh.colors.reshape(-1), np.clip(toy_model.mean_color.astype(np.float64), 0, 1)
    )


def test_synthesize_unit_shape_coefficient(toy_model):
    e1 = np.zeros(toy_model.n_shape)
    e1[0] = 1.0
    ident = IdentityCoefficients(e1, np.zeros(toy_model.n_color))
    mesh = synthesize_instance(toy_model, ident, zero_expression(toy_model))
    disp = mesh.positions.reshape(-1) - toy_model.mean_shape
    expected = toy_model.shape_sigma[0] * toy_model.shape_basis[:, 0].astype(np.float64)
    np.testing.assert_allclose(disp, expected, rtol=1e-12, atol=1e-12)


def test_synthesize_negation(toy_model):
    ident = sample_identity(toy_model, np.random.default_rng(9))
    expr = sample_expression(toy_model, np.random.default_rng(10))
    neg_i = IdentityCoefficients(-ident.shape, -ident.color)
    neg_e = ExpressionCoefficients(-expr.expr)
    mean = toy_model.mean_shape.reshape(-1, 3)
    d_pos = synthesize_instance(toy_model, ident, expr).positions - mean
    d_neg = synthesize_instance(toy_model, neg_i, neg_e).positions - mean
    np.testing.assert_allclose(d_pos, -d_neg, atol=1e-12)


def test_synthesize_dimension_mismatch(toy_model):
    bad = IdentityCoefficients(np.zeros(toy_model.n_shape + 1), np.zeros(toy_model.n_color))
    with pytest.raises(DimensionMismatch):
        synthesize_instance(toy_model, bad, zero_expression(toy_model))


@settings(max_examples=30, deadline=None)
@given(seed_a=st.integers(0, 2**31), seed_b=st.integers(0, 2**31))
def test_synthesis_is_affine(toy_model, seed_a, seed_b):
    m = toy_model
    ia, ea = sample_identity(m, np.random.default_rng(seed_a)), sample_expression(m, np.random.default_rng(seed_a))
    ib, eb = sample_identity(m, np.random.default_rng(seed_b)), sample_expression(m, np.random.default_rng(seed_b))
    f0 = synthesize_instance(m, zero_identity(m), zero_expression(m)).positions
    fa = synthesize_instance(m, ia, ea).positions
    fb = synthesize_instance(m, ib, eb).positions
    fab = synthesize_instance(
        m,
        IdentityCoefficients(ia.shape + ib.shape, ia.color + ib.color),
        ExpressionCoefficients(ea.expr + eb.expr),
    ).positions
    lhs = fab - f0
    rhs = (fa - f0) + (fb - f0)
    assert np.max(np.abs(lhs - rhs)) <= 1e-9 * max(1.0, np.max(np.abs(lhs)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_colors_clamped_and_normals_unit(toy_model, seed):
    rng = np.random.default_rng(seed)
    mesh = synthesize_instance(toy_model, sample_identity(toy_model, rng), sample_expression(toy_model, rng))
    assert mesh.colors.min() >= 0 and mesh.colors.max() <= 1
    assert np.all(np.abs(np.linalg.norm(mesh.normals, axis=1) - 1) <= 1e-6)


def test_normals_planar_square():
    pos = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    tri = np.array([[0, 1, 2], [0, 2, 3]])
    np.testing.assert_allclose(compute_vertex_normals(pos, tri), np.tile([0, 0, 1.0], (4, 1)))


def test_normals_isolated_vertex():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]], dtype=float)
    tri = np.array([[0, 1, 2]])
    n = compute_vertex_normals(pos, tri)
    assert np.array_equal(n[3], [0, 0, 1.0])


def icosphere(levels):
    t = (1 + 5 ** 0.5) / 2
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(levels):
        cache, new = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces)


def _max_normal_error_deg(pos, tri):
    # analytic oracle: the outward normal of a unit sphere at p is p itself
    n = compute_vertex_normals(pos, tri)
    cosang = np.clip(np.einsum("ij,ij->i", n, pos), -1, 1)
    return np.degrees(np.arccos(cosang)).max()


@pytest.mark.parametrize("levels", [3, 4])
def test_normals_subdivided_sphere_radial(levels):
    pos, tri = icosphere(levels)
    assert _max_normal_error_deg(pos, tri) < 2.0


def test_normals_uv_sphere_converge_to_radial():
    errors = [_max_normal_error_deg(*uv_sphere(r)) for r in (4, 8, 16, 32, 64)]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-2] < 2.0
