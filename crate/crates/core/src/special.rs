//! Standard-normal helpers and prior log-densities.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI};

use libm::erfc;
use statrs::function::gamma::ln_gamma;

/// ln(√(2π))
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

#[inline]
pub fn norm_ln_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn norm_cdf(z: f64) -> f64 {
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    if z == f64::INFINITY {
        return 1.0;
    }
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_sf(z: f64) -> f64 {
    norm_cdf(-z)
}

/// ln(1 − Φ(z)), finite far into the upper tail.
pub fn norm_ln_sf(z: f64) -> f64 {
    if z < 30.0 {
        return norm_sf(z).ln();
    }
    let z2 = z * z;
    norm_ln_pdf(z) - z.ln() + (-1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)).ln_1p()
}

/// Inverse of `norm_cdf` (Wichura's AS241, relative accuracy ~1e-16),
/// accurate in the lower tail.
pub fn norm_ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
            + 6.726_577_092_700_87e4)
            * r
            + 4.592_195_393_154_987e4)
            * r
            + 1.373_169_376_550_946e4)
            * r
            + 1.971_590_950_306_551_3e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    tail_quantile(tail) * q.signum()
}

/// Inverse of `norm_sf`, accurate in the upper tail.
#[inline]
pub fn norm_isf(q: f64) -> f64 {
    -norm_ppf(q)
}

/// AS241 tail branch: |Φ⁻¹(r)| for a tail probability r < 0.075.
fn tail_quantile(r: f64) -> f64 {
    let mut r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_879e-1)
            * r
            + 1.0;
        num / den
    };
    value
}

/// φ(α)/(1−Φ(α)): conditional-mean correction of a normal truncated below at α.
pub fn inverse_mills(alpha: f64) -> f64 {
    if alpha == f64::NEG_INFINITY {
        return 0.0;
    }
    let sf = norm_sf(alpha);
    if sf > 1e-300 {
        norm_pdf(alpha) / sf
    } else {
        // asymptotic expansion of the hazard for large α
        let a2 = alpha * alpha;
        alpha * (1.0 + 1.0 / a2 - 2.0 / (a2 * a2))
    }
}

/// Log-density of a Student-t with `dof` degrees of freedom, location 0, scale 1.
pub fn student_t_ln_pdf(x: f64, dof: f64) -> f64 {
    ln_gamma(0.5 * (dof + 1.0))
        - ln_gamma(0.5 * dof)
        - 0.5 * (dof * PI).ln()
        - 0.5 * (dof + 1.0) * (x * x / dof).ln_1p()
}

/// Log-density of the half-normal with standard deviation `lambda` (support x > 0).
pub fn half_normal_ln_pdf(x: f64, lambda: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    LN_2 - LN_SQRT_2PI - lambda.ln() - 0.5 * (x / lambda).powi(2)
}

/// ln(1 + e^x) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// ln(mean(exp(values))) with max-shift stabilisation.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}
