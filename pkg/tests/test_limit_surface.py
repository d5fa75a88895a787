import re

import numpy as np
import pytest

from homsurf.errors import ChartError, EmbeddabilityError
from homsurf.geometry import SCENARIOS, builtin_scenario, make_oscillation
from homsurf.homogenize import Profile
from homsurf.limit_surface import (
    GRAPH_KIND, PROFILE_KIND, LimitMetric, check_embedding, cumulative_height, embed_revolution, limit_metric,
    surface_mesh, write_obj,
)
from homsurf.scenarios import scenario_limit


@pytest.fixture(scope="module")
def limits():
    return {name: scenario_limit(name) for name in SCENARIOS}


@pytest.mark.parametrize("name", SCENARIOS)
def test_embedding_reproduces_limit_metric(limits, name):
    sl = limits[name]
    emb = sl.embedding()
    lm = sl.metric()
    assert check_embedding(emb, lm, n=64) <= 1e-6
    assert check_embedding(emb, lm, n=64, analytic=True) <= 1e-9


@pytest.mark.parametrize("name", SCENARIOS)
def test_perturbed_metric_is_rejected(limits, name):
    sl = limits[name]
    lm = sl.metric()
    bad = LimitMetric(lambda p: 1.01 * lm.g_hat(p), lm.mu_hat_density)
    assert check_embedding(sl.embedding(), bad, n=32) > 1e-3


def test_star_limit_surface_formula(limits):
    sl = limits["star_graph"]
    emb = sl.embedding()
    prof = sl.profile
    r, th = 0.6, 1.3
    x = emb.h0(np.array([r, th]))
    assert x[0] == pytest.approx(prof(r) * np.sin(th), abs=1e-13)
    assert x[1] == pytest.approx(prof(r) * np.cos(th), abs=1e-13)
    a = sl.domain.range_1[0]
    from homsurf.quadrature import adaptive_simpson
    H = adaptive_simpson(lambda t: np.sqrt(1 - prof.derivative(t) ** 2), a, r, 1e-12)
    assert x[2] == pytest.approx(H, abs=1e-9)


def test_radial_height_integrand_is_constant(limits):
    sl = limits["radial_graph"]
    emb = sl.embedding()
    t = np.linspace(0.1, 0.9, 9)
    v = emb.height_integrand(t)
    np.testing.assert_allclose(v, v[0], atol=1e-9)
    assert v[0] > 0


def test_cumulative_height_oracles():
    H = cumulative_height(lambda t: np.full(np.shape(t), 4.0), 0.0, 2.0)
    assert H(1.5) == pytest.approx(3.0, abs=1e-10)
    H = cumulative_height(lambda t: np.asarray(t), 0.0, 1.0)
    assert H(1.0) == pytest.approx(2.0 / 3.0, abs=1e-8)


def test_tiny_negative_integrand_is_clamped():
    H = cumulative_height(lambda t: np.full(np.shape(t), -1e-13), 0.0, 1.0)
    assert H(1.0) == 0.0


def test_embeddability_error_names_first_violation():
    osc = make_oscillation("sin2")
    prof = Profile("star_graph", osc, 0.05, 1.0).scaled(1.5)
    dom = builtin_scenario("star_graph").domain
    with pytest.raises(EmbeddabilityError) as info:
        embed_revolution(prof, PROFILE_KIND, dom)
    t = info.value.t
    assert 0.05 <= t <= 1.0 and info.value.value < -1e-12
    assert 1.0 - prof.derivative(t) ** 2 < 0


def test_unknown_kind():
    with pytest.raises(ValueError):
        embed_revolution(1.0, "helicoid", builtin_scenario("star_graph").domain)


def test_limit_metric_rejects_non_spd():
    dom = builtin_scenario("star_graph").domain
    with pytest.raises(ChartError):
        limit_metric(1.0, lambda p: np.broadcast_to(np.diag([1.0, -1.0]), np.shape(p)[:-1] + (2, 2)), dom)
    lm = limit_metric(2.0, lambda p: np.broadcast_to(np.diag([4.0, 0.25]), np.shape(p)[:-1] + (2, 2)), dom)
    np.testing.assert_allclose(lm.g_hat(np.zeros((1, 2)))[0], np.diag([0.5, 8.0]))


def test_surface_mesh_counts_and_orientation():
    imm = builtin_scenario("star_graph", eps=0.25)
    V, F = surface_mesh(imm, 6, 12)
    assert V.shape == (7 * 12, 3) and F.shape == (2 * 6 * 12, 3)
    assert F.min() == 0 and F.max() == V.shape[0] - 1
    # face normals agree with dh/dr x dh/dtheta at the face centroid (parameter space)
    s1 = np.linspace(*imm.domain.range_1, 7)
    s2 = np.arange(12) * 2 * np.pi / 12
    P = np.stack(np.meshgrid(s1, s2, indexing="ij"), -1).reshape(-1, 2)
    tri = P[F]
    # unwrap the seam before averaging angles
    tri[..., 1] = np.where(tri[..., 1] < tri[:, :1, 1] - np.pi, tri[..., 1] + 2 * np.pi, tri[..., 1])
    c = tri.mean(axis=1)
    J = imm.jacobian(c)
    ref = np.cross(J[..., 0], J[..., 1])
    n = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    assert np.all(np.einsum("ij,ij->i", n, ref) > 0)


def test_surface_mesh_nonperiodic():
    imm = builtin_scenario("local_bumps", eps=0.1)
    V, F = surface_mesh(imm, 4, 5)
    assert V.shape == (5 * 6, 3) and F.shape == (2 * 4 * 5, 3)


def test_write_obj_format(tmp_path):
    V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
    F = np.array([[0, 1, 2]])
    p = write_obj(tmp_path / "t.obj", V, F, name="tri")
    lines = p.read_text().splitlines()
    assert lines[0] == "o tri"
    assert sum(1 for s in lines if s.startswith("o ")) == 1
    assert [s for s in lines if s.startswith("f ")] == ["f 1 2 3"]
    assert all(re.fullmatch(r"v \S+ \S+ \S+", s) for s in lines if s.startswith("v "))


def test_bump_embedding_is_flat_outside(limits):
    sl = limits["local_bumps"]
    emb = sl.embedding()
    assert emb.kind == GRAPH_KIND
    far = np.array([[0.02, 0.02], [0.98, 0.98]])
    J = emb.h0.jacobian(far)
    np.testing.assert_allclose(J[:, 2, :], 0.0, atol=1e-14)
