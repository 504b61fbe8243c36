//! Convergence diagnostics and posterior summaries.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Draws of one parameter from `m ≥ 2` chains of equal length `k ≥ 4`.
#[derive(Debug, Clone)]
pub struct ChainMatrix<'a> {
    chains: Vec<&'a [f64]>,
}

impl<'a> ChainMatrix<'a> {
    pub fn new(chains: Vec<&'a [f64]>) -> Result<Self> {
        if chains.len() < 2 {
            return Err(Error::DegenerateChains(format!("need at least 2 chains, got {}", chains.len())));
        }
        let k = chains[0].len();
        if k < 4 {
            return Err(Error::DegenerateChains(format!("need at least 4 draws per chain, got {k}")));
        }
        if chains.iter().any(|c| c.len() != k) {
            return Err(Error::DegenerateChains("chains have unequal lengths".into()));
        }
        if chains.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::DegenerateChains("non-finite draw".into()));
        }
        Ok(Self { chains })
    }

    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn len(&self) -> usize {
        self.chains[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Splits every chain in half, doubling the chain count.
    pub fn split(&self) -> Result<ChainMatrix<'a>> {
        let half = self.len() / 2;
        let offset = self.len() - 2 * half;
        let chains = self
            .chains
            .iter()
            .flat_map(|c| [&c[offset..offset + half], &c[offset + half..]])
            .collect();
        ChainMatrix::new(chains)
    }

    fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.len() as f64;
        let means: Vec<f64> = self.chains.iter().map(|c| c.iter().sum::<f64>() / k).collect();
        let vars = self
            .chains
            .iter()
            .zip(&means)
            .map(|(c, m)| c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0))
            .collect();
        (means, vars)
    }

    /// (W, B/k, V̂) of the potential scale reduction.
    fn variance_components(&self) -> Result<(f64, f64, f64)> {
        let (means, vars) = self.moments();
        let m = self.n_chains() as f64;
        let k = self.len() as f64;
        let w = vars.iter().sum::<f64>() / m;
        let grand = means.iter().sum::<f64>() / m;
        let b_over_k = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
        let scale = grand.abs().max(1.0);
        if !(w > (f64::EPSILON * scale).powi(2)) {
            return Err(Error::DegenerateChains("zero within-chain variance".into()));
        }
        Ok((w, b_over_k, (k - 1.0) / k * w + b_over_k))
    }
}

/// Classic potential scale reduction `R = √(((k−1)/k·W + B/k) / W)`.
pub fn gelman_rubin(cm: &ChainMatrix) -> Result<f64> {
    let (w, _, v) = cm.variance_components()?;
    Ok((v / w).sqrt())
}

/// Gelman–Rubin on half-chains.
pub fn split_gelman_rubin(cm: &ChainMatrix) -> Result<f64> {
    gelman_rubin(&cm.split()?)
}

/// Autocovariances at lags `0..n` (biased, divided by `n`), via FFT.
fn autocovariance(x: &[f64], fft: &Arc<dyn rustfft::Fft<f64>>, ifft: &Arc<dyn rustfft::Fft<f64>>) -> Vec<f64> {
    let n = x.len();
    let size = fft.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    fft.process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    ifft.process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Multi-chain effective sample size with Geyer's initial monotone sequence.
pub fn ess(cm: &ChainMatrix) -> Result<f64> {
    let (w, _, var_plus) = cm.variance_components()?;
    let m = cm.n_chains();
    let k = cm.len();
    let size = (2 * k).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let kf = k as f64;
    let acov: Vec<Vec<f64>> = cm.chains.iter().map(|c| autocovariance(c, &fft, &ifft)).collect();
    let rho = |lag: usize| {
        let mean_acov = acov.iter().map(|a| a[lag]).sum::<f64>() / m as f64;
        // per-chain autocovariances rescaled to the unbiased lag-0 variance
        1.0 - (w - mean_acov * kf / (kf - 1.0)) / var_plus
    };

    // Geyer: sum consecutive pairs Γ_j = ρ_{2j} + ρ_{2j+1} while positive,
    // enforcing monotone decrease.
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < k {
        let mut gamma = rho(lag) + rho(lag + 1);
        if gamma <= 0.0 {
            break;
        }
        gamma = gamma.min(prev);
        sum += gamma;
        prev = gamma;
        lag += 2;
    }
    // 2Σ_{τ≥0}Γ − 1 = 1 + 2Σ_{τ≥1}ρ_τ
    let tau = (2.0 * sum - 1.0).max(1.0 / (m * k) as f64);
    let total = (m * k) as f64;
    Ok((total / tau).min(total))
}

/// Empirical quantile with linear interpolation of order statistics
/// (`h = (n − 1)p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantiles(draws: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub probs: Vec<f64>,
    pub quantiles: Vec<f64>,
}

/// Per-parameter mean, sd and quantiles over pooled draws.
pub fn summarize(names: &[String], pooled: &[Vec<f64>], probs: &[f64]) -> Result<Vec<ParameterSummary>> {
    names
        .iter()
        .zip(pooled)
        .map(|(name, draws)| {
            if draws.is_empty() {
                return Err(Error::DegenerateChains(format!("no retained draws for {name}")));
            }
            let n = draws.len() as f64;
            let mean = draws.iter().sum::<f64>() / n;
            let sd = if draws.len() > 1 {
                (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(ParameterSummary {
                name: name.clone(),
                mean,
                sd,
                probs: probs.to_vec(),
                quantiles: quantiles(draws, probs),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = stream(seed, Domain::Chain, 0);
        (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn ar1(seed: u64, n: usize, phi: f64) -> Vec<f64> {
        let mut rng = stream(seed, Domain::Chain, 1);
        let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect()
    }

    /// Direct evaluation of the PSRF formula.
    fn psrf_oracle(chains: &[Vec<f64>]) -> f64 {
        let m = chains.len() as f64;
        let k = chains[0].len() as f64;
        let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / k).collect();
        let w = chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (k - 1.0))
            .sum::<f64>()
            / m;
        let gm = means.iter().sum::<f64>() / m;
        let b = k / (m - 1.0) * means.iter().map(|mu| (mu - gm) * (mu - gm)).sum::<f64>();
        (((k - 1.0) / k * w + b / k) / w).sqrt()
    }

    #[test]
    fn psrf_examples() {
        let a = normals(1, 10_000, 0.0);
        let b = normals(2, 10_000, 0.0);
        assert!(gelman_rubin(&ChainMatrix::new(vec![&a, &b]).unwrap()).unwrap() < 1.01);
        let c = normals(3, 10_000, 10.0);
        let chains = [a.clone(), c.clone()];
        let r = gelman_rubin(&ChainMatrix::new(vec![&a, &c]).unwrap()).unwrap();
        assert!(r > 3.0);
        assert!((r - psrf_oracle(&chains)).abs() < 1e-12);
        // analytic: W ≈ 1, B/k ≈ 50 ⟹ R ≈ √51
        assert!((r - 51f64.sqrt()).abs() < 0.2, "{r}");
        let toy = [1.0, 2.0, 3.0, 4.0];
        let r = gelman_rubin(&ChainMatrix::new(vec![&toy, &toy]).unwrap()).unwrap();
        assert!((r - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(split_gelman_rubin(&ChainMatrix::new(vec![&a, &b]).unwrap()).unwrap() < 1.01);
    }

    #[test]
    fn degenerate_inputs_are_errors() {
        let flat = [2.0; 10];
        let cm = ChainMatrix::new(vec![&flat, &flat]).unwrap();
        assert!(matches!(gelman_rubin(&cm), Err(Error::DegenerateChains(_))));
        assert!(matches!(ess(&cm), Err(Error::DegenerateChains(_))));
        assert!(ChainMatrix::new(vec![&flat[..]]).is_err());
        assert!(ChainMatrix::new(vec![&flat[..3], &flat[..3]]).is_err());
        assert!(ChainMatrix::new(vec![&flat[..5], &flat[..6]]).is_err());
    }

    #[test]
    fn ess_of_independent_draws_is_near_total() {
        let a = normals(4, 10_000, 0.0);
        let b = normals(5, 10_000, 0.0);
        let e = ess(&ChainMatrix::new(vec![&a, &b]).unwrap()).unwrap();
        assert!((e / 20_000.0 - 1.0).abs() < 0.1, "{e}");
        assert!(e <= 20_000.0);
    }

    #[test]
    fn ess_of_ar1_matches_analytic_ratio() {
        let a = ar1(6, 100_000, 0.9);
        let b = ar1(7, 100_000, 0.9);
        let e = ess(&ChainMatrix::new(vec![&a, &b]).unwrap()).unwrap();
        let ratio = e / 200_000.0;
        assert!((ratio - 0.1 / 1.9).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn shuffling_does_not_lower_ess() {
        let mut a = ar1(8, 20_000, 0.8);
        let mut b = ar1(9, 20_000, 0.8);
        let ordered = ess(&ChainMatrix::new(vec![&a, &b]).unwrap()).unwrap();
        let mut rng = stream(10, Domain::Chain, 2);
        a.shuffle(&mut rng);
        b.shuffle(&mut rng);
        let shuffled = ess(&ChainMatrix::new(vec![&a, &b]).unwrap()).unwrap();
        assert!(shuffled > ordered);
    }

    #[test]
    fn quantile_examples() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantiles(&d, &[0.5]), vec![50.5]);
        assert_eq!(quantiles(&[3.0], &[0.025, 0.5, 0.975]), vec![3.0; 3]);
        let z = normals(11, 1_000_000, 0.0);
        let q = quantiles(&z, &[0.025, 0.975]);
        assert!((q[0] + 1.96).abs() < 0.01 && (q[1] - 1.96).abs() < 0.01, "{q:?}");
        let s = summarize(&["a".into()], &[d], &[0.5]).unwrap();
        assert_eq!(s[0].mean, 50.5);
    }

    proptest! {
        #[test]
        fn psrf_is_affine_invariant(seed in 0u64..1000, a in prop_oneof![-50.0..-0.01f64, 0.01..50.0f64], b in -100.0..100.0f64) {
            let x = normals(seed, 200, 0.0);
            let y = normals(seed + 1, 200, 0.3);
            let r0 = gelman_rubin(&ChainMatrix::new(vec![&x, &y]).unwrap()).unwrap();
            let xt: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let yt: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let r1 = gelman_rubin(&ChainMatrix::new(vec![&xt, &yt]).unwrap()).unwrap();
            prop_assert!((r0 - r1).abs() < 1e-9 * r0);
        }

        #[test]
        fn ess_never_exceeds_draw_count(seed in 0u64..1000, phi in -0.9..0.95f64) {
            let x = ar1(seed, 300, phi);
            let y = ar1(seed + 7, 300, phi);
            let e = ess(&ChainMatrix::new(vec![&x, &y]).unwrap()).unwrap();
            prop_assert!(e > 0.0 && e <= 600.0);
        }
    }
}
