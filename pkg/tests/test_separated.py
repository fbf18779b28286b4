import numpy as np
import pytest

from modpgd.separated import Mode, SeparatedField, spatial_mode, PARAMETRIC
from modpgd.validation import RangeError


def random_field(rng, n_space=5, grids=(5, 4, 6), rank=3):
    modes = [spatial_mode(rng.standard_normal((rank, n_space)))]
    for d, n in enumerate(grids):
        grid = np.sort(rng.uniform(-1, 1, n))
        modes.append(Mode(PARAMETRIC, f"q{d}", grid, rng.standard_normal((rank, n))))
    return SeparatedField(tuple(modes))


def dense_tensor(field):
    # brute-force reconstruction, written independently of the library ops
    shape = [m.size for m in field.modes]
    out = np.zeros(shape)
    for r in range(field.rank):
        term = field.modes[0].values[r]
        for m in field.modes[1:]:
            term = np.multiply.outer(term, m.values[r])
        out += term
    return out


def linterp(grid, vals, x):
    i = np.searchsorted(grid, x, side="right") - 1
    i = min(max(i, 0), len(grid) - 2)
    w = (x - grid[i]) / (grid[i + 1] - grid[i])
    return (1 - w) * vals[i] + w * vals[i + 1]


def test_rank1_single_product():
    f = SeparatedField((
        spatial_mode([[2.0, 0.0]]),
        Mode(PARAMETRIC, "a", [0.0, 1.0], [[3.0, 5.0]]),
        Mode(PARAMETRIC, "b", [0.0, 1.0], [[4.0, 9.0]]),
    ))
    assert f.evaluate((0, 0.0, 0.0)) == pytest.approx(24.0)


def test_zero_mode_annihilates():
    f = SeparatedField((
        spatial_mode([[1.0, 2.0]]),
        Mode(PARAMETRIC, "a", [0.0, 1.0], [[0.0, 0.0]]),
    ))
    assert f.evaluate((1, 0.3)) == 0.0


def test_evaluate_matches_dense_reconstruction():
    rng = np.random.default_rng(7)
    f = random_field(rng, n_space=5, grids=(5, 5, 5), rank=3)
    dense = dense_tensor(f)
    for _ in range(20):
        idx = int(rng.integers(0, 5))
        point = [idx] + [rng.uniform(m.grid[0], m.grid[-1]) for m in f.parametric]
        # interpolate the dense tensor axis by axis
        exact = dense[idx]
        for m, x in zip(f.parametric, point[1:]):
            exact = np.apply_along_axis(lambda v: linterp(m.grid, v, x), 0, exact)
        got = f.evaluate(point)
        assert got == pytest.approx(float(exact), rel=1e-12, abs=1e-13)


def test_evaluate_out_of_range_names_mode():
    rng = np.random.default_rng(0)
    f = random_field(rng)
    bad = f.parametric[1].grid[-1] + 0.5
    with pytest.raises(RangeError, match="q1"):
        f.evaluate((0, f.parametric[0].grid[0], bad, f.parametric[2].grid[0]))


def test_particularize_empty_is_identity():
    rng = np.random.default_rng(1)
    f = random_field(rng)
    assert f.particularize({}) is f


def test_particularize_unit_factor_keeps_modes():
    f = SeparatedField((
        spatial_mode([[1.0, 2.0, 3.0]]),
        Mode(PARAMETRIC, "a", [0.0, 1.0], [[1.0, 1.0]]),
        Mode(PARAMETRIC, "b", [0.0, 1.0], [[5.0, 7.0]]),
    ))
    g = f.particularize({"a": 0.25})
    assert g.mode_labels == ["space", "b"]
    np.testing.assert_allclose(g.spatial.values, f.spatial.values)
    np.testing.assert_allclose(g.mode("b").values, [[5.0, 7.0]])


def test_particularize_commutes_with_evaluate():
    rng = np.random.default_rng(42)
    f = random_field(rng, n_space=6, grids=(5, 4, 7, 3, 6), rank=4)
    labels = [m.label for m in f.parametric]
    bind = {}
    for lab in (labels[1], labels[3]):
        m = f.mode(lab)
        bind[lab] = rng.uniform(m.grid[0], m.grid[-1])
    g = f.particularize(bind)
    for _ in range(50):
        rest = {}
        for m in f.parametric:
            if m.label not in bind:
                rest[m.label] = rng.uniform(m.grid[0], m.grid[-1])
        idx = int(rng.integers(0, 6))
        full = f.evaluate([idx] + [bind.get(m.label, rest.get(m.label))
                                   for m in f.parametric])
        part = g.evaluate([idx] + [rest[m.label] for m in g.parametric])
        assert part == pytest.approx(full, rel=1e-12, abs=1e-14)


def test_particularize_unknown_label_raises():
    rng = np.random.default_rng(3)
    f = random_field(rng)
    with pytest.raises(KeyError):
        f.particularize({"nope": 0.0})


def test_add_term_from_zero():
    f = SeparatedField.zero(4, [("a", [0.0, 1.0])])
    g = f.add_term(np.ones(4), {"a": [1.0, 2.0]})
    assert f.rank == 0 and g.rank == 1
    assert g.evaluate((2, 1.0)) == pytest.approx(2.0)


def test_add_term_dimension_mismatch():
    f = SeparatedField.zero(4, [("a", [0.0, 1.0])])
    with pytest.raises(ValueError):
        f.add_term(np.ones(5), {"a": [1.0, 2.0]})
    with pytest.raises(ValueError):
        f.add_term(np.ones(4), {"a": [1.0, 2.0, 3.0]})
    with pytest.raises(ValueError):
        f.add_term(np.ones(4), {"b": [1.0, 2.0]})


def test_norm2_unit_rank1():
    s = np.array([0.6, 0.8])
    v = np.array([1.0, 0.0])
    f = SeparatedField((spatial_mode(s[None]), Mode(PARAMETRIC, "a", [0, 1], v[None])))
    assert f.norm2() == pytest.approx(1.0)


def test_norm2_matches_dense():
    rng = np.random.default_rng(11)
    for _ in range(5):
        f = random_field(rng, n_space=4, grids=(5, 3, 4), rank=4)
        assert f.norm2() == pytest.approx(np.linalg.norm(dense_tensor(f)), rel=1e-12)


def test_norm2_zero_iff_zero_tensor():
    f = SeparatedField.zero(3, [("a", [0, 1]), ("b", [0, 1])])
    assert f.norm2() == 0.0
    g = f.add_term([1.0, -1.0, 0.0], {"a": [1.0, 2.0], "b": [0.5, 0.5]})
    h = g.add_term([-1.0, 1.0, 0.0], {"a": [1.0, 2.0], "b": [0.5, 0.5]})
    assert h.norm2() == pytest.approx(0.0, abs=1e-12)
    assert np.linalg.norm(dense_tensor(h)) == pytest.approx(0.0, abs=1e-12)


def test_multilinearity_of_evaluate():
    rng = np.random.default_rng(5)
    f = random_field(rng, rank=2)
    point = [1] + [float(m.grid[2]) for m in f.parametric]
    base = f.evaluate(point)
    # scale one term's one factor by c: evaluation changes by (c-1) * that term
    c = 2.5
    m0 = f.parametric[0]
    vals = m0.values.copy()
    term0 = SeparatedField((spatial_mode(f.spatial.values[:1]),) + tuple(
        m.with_values(m.values[:1]) for m in f.parametric))
    vals[0] *= c
    g = SeparatedField((f.spatial,) + tuple(
        m.with_values(vals) if m.label == m0.label else m for m in f.parametric))
    assert g.evaluate(point) == pytest.approx(base + (c - 1) * term0.evaluate(point),
                                              rel=1e-12)


def test_compress_cancels_duplicated_negated_terms():
    rng = np.random.default_rng(13)
    f = random_field(rng, n_space=6, grids=(5, 4), rank=5)
    g = f
    for r in range(5):
        g = g.add_term(-f.spatial.values[r],
                       {m.label: m.values[r] for m in f.parametric})
    assert g.rank == 10
    h = g.compress(1e-10)
    assert h.rank <= 10
    assert h.norm2() == pytest.approx(0.0, abs=1e-10 * max(f.norm2(), 1.0))


def test_compress_tol_zero_preserves_evaluations():
    rng = np.random.default_rng(17)
    f = random_field(rng, n_space=5, grids=(4, 6), rank=6)
    g = f.compress(0.0)
    for _ in range(30):
        point = [int(rng.integers(0, 5))] + [
            rng.uniform(m.grid[0], m.grid[-1]) for m in f.parametric]
        assert g.evaluate(point) == pytest.approx(f.evaluate(point), rel=1e-12, abs=1e-13)


def test_compress_preserves_norm_within_tol():
    rng = np.random.default_rng(19)
    f = random_field(rng, n_space=6, grids=(5, 5), rank=8)
    tiny = f.add_term(1e-14 * np.ones(6), {m.label: np.ones(m.size)
                                           for m in f.parametric})
    h = tiny.compress(1e-10)
    assert abs(h.norm2() - tiny.norm2()) <= 1e-9 * tiny.norm2()


def test_mode_invariants():
    with pytest.raises(ValueError):
        Mode(PARAMETRIC, "a", [0.0], [[1.0]])           # too few points
    with pytest.raises(ValueError):
        Mode(PARAMETRIC, "a", [0.0, 0.0], [[1.0, 1.0]])  # not increasing
    with pytest.raises(ValueError):
        Mode(PARAMETRIC, "a", [0.0, 1.0], [[1.0, 1.0, 1.0]])  # length mismatch
    with pytest.raises(ValueError):
        SeparatedField((spatial_mode([[1.0, 2.0]]),
                        Mode(PARAMETRIC, "space", [0, 1], [[1.0, 1.0]])))
