import numpy as np
import pytest

from raremap_quant.core import (
    GridMap,
    InnerProductWeights,
    PrototypeSet,
    assign_maps,
    empirical_quantization_error,
    nearest_prototype,
    weighted_inner_product,
)


def gm(values):
    values = np.asarray(values, dtype=float)
    side = int(round(np.sqrt(values.size)))
    return GridMap(side, values.reshape(-1))


class TestGridMap:
    def test_flat_and_matrix_agree(self):
        m = GridMap(2, [[1, 2], [3, 4]])
        assert m.values.tolist() == [1, 2, 3, 4]
        assert m.matrix.tolist() == [[1, 2], [3, 4]]

    def test_rejects_wrong_size(self):
        with pytest.raises(ValueError):
            GridMap(2, [1, 2, 3])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            GridMap(1, [np.nan])
        with pytest.raises(ValueError):
            GridMap(1, [np.inf])

    def test_volume(self):
        assert gm([[1, 2], [3, 4]]).total_volume() == 10


class TestWeights:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            InnerProductWeights(1, [0.0])
        with pytest.raises(ValueError):
            InnerProductWeights(2, [1, 1, -1, 1])

    def test_uniform(self):
        w = InnerProductWeights.uniform(3)
        assert w.lam.tolist() == [1.0] * 9


class TestPrototypeSet:
    def test_requires_common_side(self):
        with pytest.raises(ValueError):
            PrototypeSet([gm([1.0]), gm([[1, 2], [3, 4]])])

    def test_probability_range_checked(self):
        with pytest.raises(ValueError):
            PrototypeSet([gm([1.0])], probabilities=[1.5])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            PrototypeSet([])


class TestWeightedInnerProduct:
    def test_disjoint_supports(self):
        a = gm([[1, 0], [0, 0]])
        b = gm([[0, 1], [1, 1]])
        w = InnerProductWeights.uniform(2)
        assert weighted_inner_product(a, b, w) == 0.0

    def test_norm_positivity(self):
        rng = np.random.default_rng(11)
        a = gm(rng.standard_normal(16))
        w = InnerProductWeights.uniform(4)
        assert weighted_inner_product(a, a, w) == pytest.approx(float(np.sum(a.values**2)))
        assert weighted_inner_product(a, a, w) >= 0

    def test_hand_dot_product(self):
        a = gm([[1, 2], [3, 4]])
        b = gm([[1, 0], [0, 1]])
        w = InnerProductWeights.uniform(2)
        assert weighted_inner_product(a, b, w) == 5.0

    def test_symmetry_bilinearity(self):
        rng = np.random.default_rng(7)
        w = InnerProductWeights(2, rng.uniform(0.5, 2.0, 4))
        a, b, c = (gm(rng.standard_normal(4)) for _ in range(3))
        assert weighted_inner_product(a, b, w) == pytest.approx(weighted_inner_product(b, a, w))
        lhs = weighted_inner_product(gm(2.0 * a.values + b.values), c, w)
        rhs = 2.0 * weighted_inner_product(a, c, w) + weighted_inner_product(b, c, w)
        assert lhs == pytest.approx(rhs)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            weighted_inner_product(gm([1.0]), gm([[1, 2], [3, 4]]), InnerProductWeights.uniform(1))


class TestNearestPrototype:
    def test_exact_match_is_distance_zero(self):
        rng = np.random.default_rng(3)
        protos = [gm(rng.standard_normal(9)) for _ in range(4)]
        gamma = PrototypeSet(protos)
        w = InnerProductWeights.uniform(3)
        a = nearest_prototype(protos[2], gamma, w)
        assert a.cell_index == 3
        assert a.distance == 0.0

    def test_single_cell(self):
        gamma = PrototypeSet([gm([0.0])])
        w = InnerProductWeights.uniform(1)
        assert nearest_prototype(gm([123.0]), gamma, w).cell_index == 1

    def test_tie_goes_to_lowest_index(self):
        rng = np.random.default_rng(5)
        g1 = gm(rng.standard_normal(4))
        g2 = gm(-g1.values)
        y = gm(0.5 * (g1.values + g2.values))  # equidistant midpoint
        gamma = PrototypeSet([g1, g2])
        w = InnerProductWeights.uniform(2)
        assert nearest_prototype(y, gamma, w).cell_index == 1

    def test_distance_matches_inner_product(self):
        rng = np.random.default_rng(17)
        w = InnerProductWeights(4, rng.uniform(0.1, 3.0, 16))
        gamma = PrototypeSet([gm(rng.standard_normal(16)) for _ in range(6)])
        for _ in range(25):
            y = gm(rng.standard_normal(16))
            a = nearest_prototype(y, gamma, w)
            dists = [
                np.sqrt(weighted_inner_product(gm(y.values - p.values), gm(y.values - p.values), w))
                for p in gamma.prototypes
            ]
            assert a.distance == pytest.approx(min(dists), rel=1e-12)
            assert a.cell_index == int(np.argmin(dists)) + 1

    def test_lambda_scaling_leaves_argmin_unchanged(self):
        rng = np.random.default_rng(23)
        lam = rng.uniform(0.1, 2.0, 9)
        gamma = PrototypeSet([gm(rng.standard_normal(9)) for _ in range(5)])
        for _ in range(25):
            y = gm(rng.standard_normal(9))
            i1 = nearest_prototype(y, gamma, InnerProductWeights(3, lam)).cell_index
            i2 = nearest_prototype(y, gamma, InnerProductWeights(3, 7.3 * lam)).cell_index
            assert i1 == i2


class TestEmpiricalQuantizationError:
    def test_prototypes_equal_samples_give_zero(self):
        rng = np.random.default_rng(2)
        maps = [gm(rng.standard_normal(4)) for _ in range(3)]
        gamma = PrototypeSet(maps)
        w = InnerProductWeights.uniform(2)
        assert empirical_quantization_error(gamma, maps, np.ones(3), w) == 0.0

    def test_single_prototype_is_rms(self):
        rng = np.random.default_rng(9)
        maps = [gm(rng.standard_normal(4)) for _ in range(50)]
        g = gm(rng.standard_normal(4))
        w = InnerProductWeights.uniform(2)
        got = empirical_quantization_error(PrototypeSet([g]), maps, np.ones(50), w)
        d2 = [np.sum((m.values - g.values) ** 2) for m in maps]
        assert got == pytest.approx(np.sqrt(np.mean(d2)), rel=1e-12)

    def test_two_pixel_hand_case(self):
        maps = [gm([0.0]), gm([2.0])]
        gamma = PrototypeSet([gm([1.0])])
        w = InnerProductWeights.uniform(1)
        assert empirical_quantization_error(gamma, maps, [1.0, 1.0], w) == 1.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            empirical_quantization_error(
                PrototypeSet([gm([0.0])]), [gm([1.0])], [-1.0], InnerProductWeights.uniform(1)
            )

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            empirical_quantization_error(
                PrototypeSet([gm([0.0])]), [gm([1.0])], [1.0, 1.0], InnerProductWeights.uniform(1)
            )

    def test_refinement_never_increases_error(self):
        rng = np.random.default_rng(31)
        maps = [gm(rng.standard_normal(9)) for _ in range(40)]
        wts = rng.uniform(0.0, 2.0, 40)
        w = InnerProductWeights(3, rng.uniform(0.5, 1.5, 9))
        protos = [gm(rng.standard_normal(9)) for _ in range(5)]
        errs = [
            empirical_quantization_error(PrototypeSet(protos[: k + 1]), maps, wts, w)
            for k in range(5)
        ]
        for a, b in zip(errs, errs[1:]):
            assert b <= a + 1e-15


class TestBatchAssignment:
    def test_matches_scalar_path(self):
        rng = np.random.default_rng(41)
        lam = rng.uniform(0.2, 3.0, 16)
        gamma = PrototypeSet([gm(rng.standard_normal(16)) for _ in range(7)])
        Y = rng.standard_normal((30, 16))
        idx, d2 = assign_maps(Y, gamma.matrix, lam)
        w = InnerProductWeights(4, lam)
        for k in range(30):
            a = nearest_prototype(gm(Y[k]), gamma, w)
            assert idx[k] + 1 == a.cell_index
            assert np.sqrt(d2[k]) == pytest.approx(a.distance, rel=1e-9, abs=1e-12)
