//! Standard-normal helpers.
//!
//! Two independent routes are provided on purpose: quantiles used by the
//! Gaussian baseline bound come from bisection on the complementary error
//! function, while sampling uses Wichura's rational approximation of the
//! inverse CDF. The unit tests cross-check one against the other.

use statrs::function::erf::erfc;

/// Inverse of the standard normal CDF (Wichura's algorithm AS 241, PPND16).
///
/// Accurate to roughly 1e-15 relative error over (0, 1). Returns infinities
/// at the endpoints and NaN outside [0, 1].
pub fn inverse_cdf(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * rational(&CENTRAL_NUM, &CENTRAL_DEN, r);
    }

    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        rational(&TAIL_NUM, &TAIL_DEN, r - 1.6)
    } else {
        rational(&FAR_TAIL_NUM, &FAR_TAIL_DEN, r - 5.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Two-sided standard-normal quantile: the gamma with `Pr{|Z| > gamma} = eps`.
///
/// Solved by bisection on `erfc(gamma / sqrt(2)) = eps`, which is monotone
/// decreasing in gamma; the iteration is run to ~1e-13 relative width.
pub fn two_sided_quantile(eps: f64) -> f64 {
    assert!(
        eps > 0.0 && eps < 1.0,
        "two-sided quantile needs eps in (0, 1), got {eps}"
    );
    let tail = |g: f64| erfc(g / std::f64::consts::SQRT_2);

    let mut hi = 1.0_f64;
    while tail(hi) > eps {
        hi *= 2.0;
        if hi > 1e9 {
            break;
        }
    }
    let mut lo = 0.0_f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > eps {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[inline]
fn rational(num: &[f64; 8], den: &[f64; 8], r: f64) -> f64 {
    let mut n = num[7];
    let mut d = den[7];
    for i in (0..7).rev() {
        n = n * r + num[i];
        d = d * r + den[i];
    }
    n / d
}

// Coefficient tables from AS 241 (PPND16); the published digits exceed
// f64 precision and are kept verbatim.
#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];

// Intermediate tail, r = sqrt(-ln(min(p, 1-p))) in (1.6, 5].
#[allow(clippy::excessive_precision)]
const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const TAIL_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];

// Far tail, r > 5 (p below ~1.4e-11 or above 1 - 1.4e-11).
#[allow(clippy::excessive_precision)]
const FAR_TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_DEN: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;

    // Reference quantiles (independent high-precision tables).
    const REFERENCE: &[(f64, f64)] = &[
        (1e-300, -37.0470962993612),
        (1e-16, -8.222082216130435),
        (1e-10, -6.361340902404056),
        (1e-6, -4.753424308822899),
        (0.0013498980316300933, -3.0),
        (0.025, -1.9599639845400545),
        (0.158655253931457, -1.0),
        (0.3, -0.5244005127080409),
        (0.5, 0.0),
        (0.7, 0.5244005127080407),
        (0.8413447460685429, 1.0),
        (0.975, 1.959963984540054),
        (0.9999999999, 6.361340889697422),
    ];

    #[test]
    fn inverse_cdf_matches_reference() {
        for &(p, z) in REFERENCE {
            let got = inverse_cdf(p);
            let tol = 1e-12 * z.abs().max(1.0);
            assert!(
                (got - z).abs() <= tol,
                "ppf({p}) = {got}, expected {z}"
            );
        }
    }

    #[test]
    fn inverse_cdf_edge_cases() {
        assert_eq!(inverse_cdf(0.0), f64::NEG_INFINITY);
        assert_eq!(inverse_cdf(1.0), f64::INFINITY);
        assert!(inverse_cdf(-0.1).is_nan());
        assert!(inverse_cdf(1.1).is_nan());
        assert!(inverse_cdf(f64::NAN).is_nan());
    }

    #[test]
    fn inverse_cdf_is_antisymmetric() {
        // Dyadic p, so that 1 - p is exactly representable and the
        // comparison is not polluted by cancellation in `1.0 - p`.
        for &p in &[0.00390625, 0.03125, 0.25, 0.46875] {
            let a = inverse_cdf(p);
            let b = inverse_cdf(1.0 - p);
            assert!((a + b).abs() <= 1e-13 * a.abs().max(1.0), "p = {p}: {a} vs {b}");
        }
    }

    #[test]
    fn two_sided_quantile_known_values() {
        // gamma_{0.05}: the 1.96 of confidence-interval folklore.
        let g = two_sided_quantile(0.05);
        assert!((g - 1.959963984540054).abs() <= 1e-9, "got {g}");
        // P(|Z| > 1) = 0.31731050786291415, so the quantile at that eps is 1.
        let g1 = two_sided_quantile(0.31731050786291415);
        assert!((g1 - 1.0).abs() <= 1e-9, "got {g1}");
    }

    // The two routes (erfc bisection vs. rational inverse CDF) are
    // independent implementations; they must agree.
    #[test]
    fn quantile_routes_agree() {
        let mut eps = 1e-9;
        while eps < 1.0 {
            let via_erfc = two_sided_quantile(eps);
            let via_ppf = inverse_cdf(1.0 - eps / 2.0);
            assert!(
                (via_erfc - via_ppf).abs() <= 1e-8 * via_ppf.max(1.0),
                "eps = {eps}: {via_erfc} vs {via_ppf}"
            );
            eps *= 3.7;
        }
    }
}
