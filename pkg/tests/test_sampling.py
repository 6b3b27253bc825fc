import numpy as np
import pytest

from raremap_quant.sampling import (
    AtomPlusUniform,
    BreachPair,
    DiscreteUniform,
    FloodInputs,
    OffshoreConditions,
    PiecewiseUniform,
    Product,
    SampleStream,
    TruncatedParametric,
    breach_conditional,
    density_batch,
    density_eval,
    density_from_config,
    density_to_config,
    is_mean_se,
    is_weight,
    is_weight_batch,
    sample,
    signal_max,
    sobol_design,
    supports_subset,
)

G7 = AtomPlusUniform(atom=0.0, atom_mass=5 / 13, lower=0.0, upper=1.0, uniform_mass=8 / 13)


def flood_nominal(height=5.0):
    offshore = (
        PiecewiseUniform.interval(0.52, 3.59),
        PiecewiseUniform.interval(0.65, 2.5),
        PiecewiseUniform.interval(-8.05, 8.05),
        PiecewiseUniform.interval(-12.0, 0.0),
        PiecewiseUniform.interval(0.0, 12.2),
    )
    return FloodInputs(offshore, embankment_height=height)


def flood_biased(height=5.0):
    f = flood_nominal(height)
    return Product(f.offshore + (BreachPair(DiscreteUniform.integer_range(1, 10), G7),))


class TestDensityEval:
    def test_mixed_measure_atom_mass(self):
        assert density_eval(G7, 0.0) == pytest.approx(5 / 13)

    def test_mixed_measure_density_part(self):
        assert density_eval(G7, 0.5) == pytest.approx(8 / 13)

    def test_outside_support_is_zero(self):
        u = PiecewiseUniform.interval(0.0, 2.0)
        assert density_eval(u, 3.0) == 0.0

    def test_histogram_bins(self):
        h = PiecewiseUniform((0.0, 1.0, 3.0), (0.5, 0.25))
        assert density_eval(h, 0.5) == 0.5
        assert density_eval(h, 2.0) == 0.25
        assert density_eval(h, 3.0) == 0.25  # top edge belongs to the last bin
        assert density_eval(h, -0.1) == 0.0

    def test_histogram_mass_validation(self):
        with pytest.raises(ValueError):
            PiecewiseUniform((0.0, 1.0), (0.9,))

    def test_truncated_normal_normalizes(self):
        tn = TruncatedParametric("normal", {"mean": 0.0, "std": 1.0}, -1.0, 1.0)
        xs = np.linspace(-1, 1, 20001)
        mass = np.trapezoid(density_batch(tn, xs[:, None]), xs)
        assert mass == pytest.approx(1.0, abs=1e-6)
        assert density_eval(tn, 2.0) == 0.0

    def test_discrete_uniform(self):
        d = DiscreteUniform.integer_range(1, 10)
        assert density_eval(d, 3.0) == pytest.approx(0.1)
        assert density_eval(d, 3.5) == 0.0

    def test_product_is_product_of_components(self):
        p = Product((PiecewiseUniform.interval(0, 1), DiscreteUniform.integer_range(1, 4)))
        assert density_eval(p, [0.5, 2.0]) == pytest.approx(1.0 * 0.25)
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.uniform(0, 1, 50), rng.integers(1, 5, 50).astype(float)])
        d_joint = density_batch(p, X)
        d_split = density_batch(p.components[0], X[:, :1]) * density_batch(
            p.components[1], X[:, 1:]
        )
        np.testing.assert_allclose(d_joint, d_split, rtol=1e-14)


class TestIsWeight:
    def test_identity_density(self):
        u = PiecewiseUniform.interval(0.0, 1.0)
        for x in (0.1, 0.5, 0.9):
            assert is_weight(u, u, x) == 1.0

    def test_hand_ratio_of_uniforms(self):
        f = PiecewiseUniform.interval(0.0, 1.0)
        g = PiecewiseUniform.interval(0.0, 2.0)
        assert is_weight(f, g, 0.5) == pytest.approx(2.0)

    def test_breach_atom_mass_ratio(self):
        f7 = AtomPlusUniform(atom=0.0, atom_mass=1e-4, lower=0.0, upper=1.0, uniform_mass=1 - 1e-4)
        assert is_weight(f7, G7, 0.0) == pytest.approx(1e-4 * 13 / 5)

    def test_support_violation_is_hard_error(self):
        f = PiecewiseUniform.interval(0.0, 2.0)
        g = PiecewiseUniform.interval(0.0, 1.0)
        with pytest.raises(ValueError, match="support violation"):
            is_weight(f, g, 1.5)


class TestSampling:
    def test_same_seed_identical(self):
        g = flood_biased()
        a = sample(g, 500, seed=42)
        b = sample(g, 500, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_prefix_coherence(self):
        for spec in (G7, flood_biased(), flood_nominal()):
            big = sample(spec, 400, seed=7)
            small = sample(spec, 150, seed=7)
            np.testing.assert_array_equal(big[:150], small)
            st = SampleStream(spec, 7)
            np.testing.assert_array_equal(np.vstack([st.draw(150), st.draw(250)]), big)

    def test_discrete_uniform_frequencies(self):
        d = DiscreteUniform.integer_range(1, 10)
        x = sample(d, 10**5, seed=1)[:, 0]
        p, n = 0.1, 10**5
        sigma = np.sqrt(p * (1 - p) / n)
        for atom in range(1, 11):
            assert np.mean(x == atom) == pytest.approx(p, abs=3 * sigma)

    def test_atom_plus_uniform_atom_fraction(self):
        x = sample(G7, 10**5, seed=3)[:, 0]
        p = 5 / 13
        sigma = np.sqrt(p * (1 - p) / 10**5)
        assert np.mean(x == 0.0) == pytest.approx(p, abs=3 * sigma)
        cont = x[x > 0]
        assert cont.min() > 0.0 and cont.max() <= 1.0

    def test_interval_mass_matches_closed_form(self):
        h = PiecewiseUniform((0.0, 1.0, 3.0), (0.5, 0.25))
        x = sample(h, 10**5, seed=9)[:, 0]
        for lo, hi, mass in ((0.0, 1.0, 0.5), (1.0, 2.0, 0.25), (0.5, 2.5, 0.625)):
            sigma = np.sqrt(mass * (1 - mass) / 10**5)
            assert np.mean((x >= lo) & (x <= hi)) == pytest.approx(mass, abs=3 * sigma)

    def test_truncated_normal_stays_in_bounds(self):
        tn = TruncatedParametric("normal", {"mean": 2.0, "std": 3.0}, 0.5, 3.5)
        x = sample(tn, 20000, seed=5)[:, 0]
        assert x.min() >= 0.5 and x.max() <= 3.5
        # mass of [0.5, 2.0] under the truncated law, from the normal CDF
        from scipy.stats import norm

        z = norm(2.0, 3.0)
        mass = (z.cdf(2.0) - z.cdf(0.5)) / (z.cdf(3.5) - z.cdf(0.5))
        sigma = np.sqrt(mass * (1 - mass) / 20000)
        assert np.mean(x <= 2.0) == pytest.approx(mass, abs=3 * sigma)


class TestSignalMax:
    def test_zero_surge_gives_tide_peak(self):
        c = OffshoreConditions(T=2.0, S=0.0, t0=3.0, t_minus=-1.0, t_plus=1.0)
        assert signal_max(c) == pytest.approx(2.0, abs=1e-12)

    def test_aligned_peaks_add(self):
        c = OffshoreConditions(T=3.0, S=1.5, t0=0.0, t_minus=-2.0, t_plus=4.0)
        assert signal_max(c) == pytest.approx(4.5, abs=1e-12)

    def test_offset_peak_strictly_between(self):
        # surge peak a quarter-period after high tide, triangle wide enough to
        # overlap the tide peak: the sum beats the tide alone but the offset
        # keeps it below the aligned-peak value T + S
        period = 12.4
        c = OffshoreConditions(T=3.0, S=1.0, t0=period / 4, t_minus=-8.0, t_plus=8.0)
        v = signal_max(c)
        assert 3.0 < v < 4.0

    def test_matches_brute_force_grid(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            c = OffshoreConditions(
                T=rng.uniform(0.5, 3.5),
                S=rng.uniform(0.6, 2.5),
                t0=rng.uniform(-8, 8),
                t_minus=-rng.uniform(0, 12),
                t_plus=rng.uniform(0, 12),
            )
            period = 12.4
            t = np.linspace(min(-period / 2, c.t0 + c.t_minus), max(period / 2, c.t0 + c.t_plus), 200001)
            tide = c.T * np.cos(2 * np.pi * t / period)
            up = np.where(
                c.t_minus < 0, (t - c.t0 - c.t_minus) / max(-c.t_minus, 1e-300), 1.0
            )
            down = np.where(c.t_plus > 0, 1 - (t - c.t0) / max(c.t_plus, 1e-300), 1.0)
            tri = np.where(t <= c.t0, up, down)
            surge = np.where(
                (t >= c.t0 + c.t_minus) & (t <= c.t0 + c.t_plus),
                c.S * np.clip(tri, 0, 1),
                0.0,
            )
            brute = np.max(tide + surge)
            assert signal_max(c) == pytest.approx(brute, abs=2e-4)


class TestBreachConditional:
    def test_above_threshold(self):
        c = OffshoreConditions(T=4.0, S=0.0, t0=0.0, t_minus=0.0, t_plus=0.0)
        p, loc, ero = breach_conditional(c, embankment_height=5.0)  # peak 4.0 > 3.5
        assert p == 0.5
        assert loc.atoms == tuple(float(k) for k in range(1, 11))
        assert density_eval(ero, 0.5) == 1.0

    def test_below_threshold(self):
        c = OffshoreConditions(T=2.5, S=0.0, t0=0.0, t_minus=0.0, t_plus=0.0)
        p, _, _ = breach_conditional(c, embankment_height=5.0)  # peak 2.5 < 3.5
        assert p == 1e-4

    def test_boundary_is_strict(self):
        c = OffshoreConditions(T=3.5, S=0.0, t0=0.0, t_minus=0.0, t_plus=0.0)
        p, _, _ = breach_conditional(c, embankment_height=5.0)  # peak exactly 0.7 * 5
        assert p == 1e-4


class TestSobol:
    def test_first_points_dimension_one(self):
        pts = sobol_design(1, 4)[:, 0]
        np.testing.assert_allclose(pts, [0.0, 0.5, 0.75, 0.25])

    def test_range_and_determinism(self):
        a = sobol_design(5, 100)
        b = sobol_design(5, 100)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() < 1.0
        assert a.shape == (100, 5)

    def test_dimension_limit(self):
        with pytest.raises(ValueError):
            sobol_design(17, 4)
        with pytest.raises(ValueError):
            sobol_design(0, 4)


class TestFloodModel:
    def test_canonical_no_breach_encoding(self):
        g = flood_biased()
        X = sample(g, 5000, seed=11)
        no_breach = X[:, 6] == 0.0
        assert np.all(X[no_breach, 5] == 0.0)
        assert np.all(X[~no_breach, 5] >= 1.0)
        f = flood_nominal()
        Xf = sample(f, 5000, seed=12)
        assert np.all(Xf[Xf[:, 6] == 0.0, 5] == 0.0)

    def test_weight_values_match_hand_ratios(self):
        height = 5.0
        f, g = flood_nominal(height), flood_biased(height)
        X = sample(g, 2000, seed=13)
        w = is_weight_batch(f, g, X)
        p = f.breach_probability(X[:, :5])
        no_breach = X[:, 6] == 0.0
        # offshore marginals of f and g coincide here, so the ratio is pure breach part
        np.testing.assert_allclose(w[no_breach], (1 - p[no_breach]) * 13 / 5, rtol=1e-12)
        np.testing.assert_allclose(w[~no_breach], p[~no_breach] * 13 / 8, rtol=1e-12)

    def test_support_subset(self):
        f, g = flood_nominal(), flood_biased()
        assert supports_subset(f, g)
        assert supports_subset(g, g)

    def test_support_subset_rejects_wider_f(self):
        f = PiecewiseUniform.interval(0.0, 2.0)
        g = PiecewiseUniform.interval(0.0, 1.0)
        assert not supports_subset(f, g)
        assert supports_subset(g, f)

    def test_atom_needs_matching_atom(self):
        f = G7
        g = PiecewiseUniform.interval(0.0, 1.0)
        assert not supports_subset(f, g)

    def test_is_mean_matches_plain_mc(self):
        # IS estimate of E_f[h] with h = x^2 vs plain Monte Carlo under f
        f = PiecewiseUniform.interval(0.0, 1.0)
        g = PiecewiseUniform.interval(0.0, 2.0)
        n = 10**5
        xg = sample(g, n, seed=21)[:, 0]
        terms = xg**2 * is_weight_batch(f, g, xg[:, None])
        est, se = is_mean_se(terms)
        xf = sample(f, n, seed=22)[:, 0]
        mc, mc_se = is_mean_se(xf**2)
        assert abs(est - mc) < 3 * np.hypot(se, mc_se)
        assert est == pytest.approx(1 / 3, abs=4 * se)


class TestConfigRoundtrip:
    def test_all_specs_roundtrip(self):
        specs = [
            PiecewiseUniform((0.0, 1.0, 3.0), (0.5, 0.25)),
            TruncatedParametric("normal", {"mean": 1.0, "std": 2.0}, -1.0, 4.0),
            DiscreteUniform.integer_range(1, 10),
            G7,
            flood_biased(),
            flood_nominal(),
        ]
        for spec in specs:
            back = density_from_config(density_to_config(spec))
            X = sample(spec, 200, seed=33)
            np.testing.assert_array_equal(sample(back, 200, seed=33), X)
            np.testing.assert_allclose(density_batch(back, X), density_batch(spec, X), rtol=0)

    def test_unknown_type_rejected(self):
        with pytest.raises(ValueError):
            density_from_config({"type": "cauchy"})
