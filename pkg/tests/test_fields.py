import numpy as np
import pytest

from exconf.fields import (
    Field,
    Mesh,
    MeshMismatchError,
    NodeSet,
    TargetInterval,
    set_volume,
    symmetric_difference,
)


@pytest.fixture
def mesh5():
    return Mesh(np.arange(5.0)[:, None], np.full(5, 0.5))


def random_sets(mesh, rng, n):
    return [NodeSet(mesh, rng.random(mesh.n_x) < rng.random()) for _ in range(n)]


def test_mesh_validation():
    with pytest.raises(ValueError):
        Mesh(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 1)), [1.0, -1.0, 1.0])
    with pytest.raises(ValueError):
        Mesh(np.zeros((3, 1)), [1.0, 1.0])


def test_set_volume_empty_and_full(mesh5):
    assert set_volume(NodeSet.empty(mesh5), mesh5) == 0.0
    assert set_volume(NodeSet.full(mesh5), mesh5) == pytest.approx(5 * 0.5)


def test_set_volume_sand_piles_grid():
    mesh = Mesh.regular_grid([[-2, 2], [-2, 2]], (80, 80))
    assert mesh.n_x == 6400
    assert set_volume(NodeSet.full(mesh)) == pytest.approx(16.0)
    assert mesh.node_volumes[0] == pytest.approx((4 / 80) ** 2)


def test_set_volume_mesh_mismatch(mesh5):
    other = Mesh(np.arange(5.0)[:, None] + 1.0, np.full(5, 0.5))
    with pytest.raises(MeshMismatchError):
        set_volume(NodeSet.empty(mesh5), other)


def test_symmetric_difference_examples(mesh5):
    a = NodeSet.from_indices(mesh5, [1, 2, 3])
    b = NodeSet.from_indices(mesh5, [2, 3, 4])
    assert symmetric_difference(a, b) == NodeSet.from_indices(mesh5, [1, 4])
    assert symmetric_difference(a, a).is_empty
    disjoint = NodeSet.from_indices(mesh5, [0])
    assert symmetric_difference(a, disjoint) == (a | disjoint)


def test_symdiff_volume_identity(mesh5):
    rng = np.random.default_rng(42)
    for a in random_sets(mesh5, rng, 10):
        for b in random_sets(mesh5, rng, 10):
            lhs = set_volume(symmetric_difference(a, b))
            rhs = set_volume(a) + set_volume(b) - 2 * set_volume(a & b)
            assert lhs == pytest.approx(rhs)
            assert symmetric_difference(a, b) == symmetric_difference(b, a)


def test_volume_monotone_under_inclusion():
    rng = np.random.default_rng(7)
    mesh = Mesh(rng.random((30, 2)), rng.random(30))
    for _ in range(25):
        small_mask = rng.random(30) < 0.4
        grow = small_mask | (rng.random(30) < 0.3)
        assert set_volume(NodeSet(mesh, small_mask)) <= set_volume(NodeSet(mesh, grow)) + 1e-15


def test_target_interval_contains():
    t = TargetInterval(1.03, np.inf)
    f = np.array([1.0, 1.03, 1.1])
    assert list(t.contains(f)) == [False, True, True]
    two_sided = TargetInterval(0.0, 1.0)
    assert list(two_sided.contains(np.array([-0.1, 0.0, 0.5, 1.0, 1.1]))) == [False, True, True, True, False]
    with pytest.raises(ValueError):
        TargetInterval(2.0, 1.0)
    with pytest.raises(ValueError):
        TargetInterval(-np.inf, np.inf)


def test_field_validation(mesh5):
    with pytest.raises(ValueError):
        Field(mesh5, [1.0, 2.0])
    with pytest.raises(ValueError):
        Field(mesh5, [1.0, np.nan, 1.0, 1.0, 1.0])


def test_set_algebra_closure(mesh5):
    rng = np.random.default_rng(3)
    a, b = random_sets(mesh5, rng, 2)
    assert ((a | b) - (a & b)) == (a ^ b)
    assert (a - b) == (a & ~b)
    assert (~(~a)) == a


def test_csv_export(tmp_path, mesh5):
    f = Field(mesh5, np.linspace(0, 1, 5))
    f.to_csv(tmp_path / "field.csv")
    lines = (tmp_path / "field.csv").read_text().splitlines()
    assert lines[0] == "x0,value"
    assert len(lines) == 6
    s = NodeSet.from_indices(mesh5, [0, 4])
    s.to_csv(tmp_path / "set.csv")
    lines = (tmp_path / "set.csv").read_text().splitlines()
    assert lines[0] == "x0,member"
    assert lines[1].endswith(",1") and lines[2].endswith(",0")
