//! Weight normalization and resampling kernels.

use crate::error::PompError;
use crate::rng::SimRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Returned when every weight is zero; the caller attaches the time index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroWeights;

impl ZeroWeights {
    pub fn at(self, time_index: usize) -> PompError {
        PompError::FilteringFailure { time_index }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub is_normalized: bool,
}

impl WeightVector {
    pub fn raw(w: Vec<f64>) -> Self {
        WeightVector { w, is_normalized: false }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Normalize nonnegative raw weights. Returns the normalized weights and
/// `log(J^-1 sum w)`, the step's conditional log-likelihood contribution.
pub fn normalize_weights(w: &WeightVector) -> Result<(WeightVector, f64), ZeroWeights> {
    debug_assert!(w.w.iter().all(|v| v.is_finite() && *v >= 0.0));
    let logw: Vec<f64> = w.w.iter().map(|v| v.ln()).collect();
    normalize_log_weights(&logw)
}

/// Normalize weights given on the log scale, using a max shift so that very
/// small densities do not underflow.
pub fn normalize_log_weights(logw: &[f64]) -> Result<(WeightVector, f64), ZeroWeights> {
    let mut out = vec![0.0; logw.len()];
    let log_mean = normalize_log_weights_into(logw, &mut out)?;
    Ok((WeightVector { w: out, is_normalized: true }, log_mean))
}

/// As [`normalize_log_weights`], writing into a caller buffer.
pub fn normalize_log_weights_into(logw: &[f64], out: &mut [f64]) -> Result<f64, ZeroWeights> {
    debug_assert_eq!(logw.len(), out.len());
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logw.is_empty() || max == f64::NEG_INFINITY {
        return Err(ZeroWeights);
    }
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logw) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(max + (sum / logw.len() as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampler {
    #[default]
    Systematic,
    Multinomial,
}

impl Resampler {
    pub fn resample(self, w: &[f64], count: usize, rng: &mut SimRng) -> Vec<usize> {
        match self {
            Resampler::Systematic => systematic_resample(w, count, rng),
            Resampler::Multinomial => multinomial_resample(w, count, rng),
        }
    }
}

fn last_positive(w: &[f64]) -> usize {
    w.iter().rposition(|&v| v > 0.0).unwrap_or(w.len() - 1)
}

/// Sorted, 0-based indices chosen by walking the cumulative weights with
/// the ordered points `u_k`.
fn select_sorted(w: &[f64], points: impl Iterator<Item = f64>, count: usize) -> Vec<usize> {
    let fallback = last_positive(w);
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    let mut cum = w[0];
    for u in points {
        while u >= cum && i + 1 < w.len() {
            i += 1;
            cum += w[i];
        }
        // Rounding can leave the cumulative sum just short of 1.
        out.push(if u >= cum || w[i] == 0.0 { fallback } else { i });
    }
    out
}

/// Systematic (low-variance) resampling of `count` indices from normalized
/// weights `w`. Each index `m` appears `floor(count*w_m)` or `ceil(count*w_m)`
/// times; output is sorted.
pub fn systematic_resample(w: &[f64], count: usize, rng: &mut SimRng) -> Vec<usize> {
    assert!(!w.is_empty(), "cannot resample from an empty weight vector");
    let u0: f64 = rng.gen();
    let step = 1.0 / count as f64;
    select_sorted(w, (0..count).map(|k| (k as f64 + u0) * step), count)
}

/// Multinomial resampling: `count` i.i.d. categorical draws, returned sorted.
pub fn multinomial_resample(w: &[f64], count: usize, rng: &mut SimRng) -> Vec<usize> {
    assert!(!w.is_empty(), "cannot resample from an empty weight vector");
    let mut u: Vec<f64> = (0..count).map(|_| rng.gen::<f64>()).collect();
    u.sort_by(|a, b| a.total_cmp(b));
    select_sorted(w, u.into_iter(), count)
}

/// Effective sample size of normalized weights, `1 / sum w^2`.
pub fn weight_ess(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|v| v * v).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn counts(idx: &[usize], m: usize) -> Vec<usize> {
        let mut c = vec![0; m];
        for &i in idx {
            c[i] += 1;
        }
        c
    }

    #[test]
    fn uniform_weights() {
        let (w, lm) = normalize_weights(&WeightVector::raw(vec![1.0; 4])).unwrap();
        assert_eq!(w.w, vec![0.25; 4]);
        assert!(w.is_normalized);
        assert_eq!(lm, 0.0);
    }

    #[test]
    fn degenerate_weights() {
        let (w, lm) = normalize_weights(&WeightVector::raw(vec![2.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(w.w, vec![1.0, 0.0, 0.0, 0.0]);
        assert!((lm - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_fail() {
        assert_eq!(normalize_weights(&WeightVector::raw(vec![0.0; 3])), Err(ZeroWeights));
        assert!(matches!(ZeroWeights.at(4), PompError::FilteringFailure { time_index: 4 }));
    }

    #[test]
    fn log_weights_do_not_underflow() {
        let (w, lm) = normalize_log_weights(&[-1000.0, -1000.0 + 2f64.ln()]).unwrap();
        assert!((w.w[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((lm - (-1000.0 + 1.5f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn point_mass() {
        let mut rng = RngStream::new(3).generator();
        for r in [Resampler::Systematic, Resampler::Multinomial] {
            assert_eq!(r.resample(&[0.0, 1.0, 0.0], 3, &mut rng), vec![1, 1, 1]);
        }
    }

    #[test]
    fn uniform_systematic_is_permutation() {
        let mut rng = RngStream::new(5).generator();
        for _ in 0..100 {
            assert_eq!(systematic_resample(&[0.25; 4], 4, &mut rng), vec![0, 1, 2, 3]);
        }
    }

    #[test]
    fn expected_count_fractions() {
        // Monte Carlo check of E[count_m] = J w_m over 10^4 seeds.
        let w = [0.5, 0.3, 0.2];
        let j = 1000;
        let reps = 10_000;
        for r in [Resampler::Systematic, Resampler::Multinomial] {
            let mut tot = [0usize; 3];
            for s in 0..reps {
                let mut rng = RngStream::new(s).substream("resample-check").generator();
                let c = counts(&r.resample(&w, j, &mut rng), 3);
                for k in 0..3 {
                    tot[k] += c[k];
                }
            }
            for k in 0..3 {
                let frac = tot[k] as f64 / (j * reps as usize) as f64;
                assert!((frac - w[k]).abs() < 0.01, "{r:?} index {k}: {frac}");
            }
        }
    }

    #[test]
    fn never_selects_zero_weight() {
        let w = [0.0, 0.5, 0.0, 0.5, 0.0];
        for s in 0..200 {
            let mut rng = RngStream::new(s).generator();
            for r in [Resampler::Systematic, Resampler::Multinomial] {
                let idx = r.resample(&w, 7, &mut rng);
                assert!(idx.iter().all(|&i| i == 1 || i == 3));
            }
        }
    }

    proptest! {
        #[test]
        fn systematic_counts_within_one(raw in prop::collection::vec(0.0f64..10.0, 1..40), seed in any::<u64>(), j in 1usize..300) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-6);
            let (w, _) = normalize_weights(&WeightVector::raw(raw)).unwrap();
            let mut rng = RngStream::new(seed).generator();
            let idx = systematic_resample(&w.w, j, &mut rng);
            prop_assert_eq!(idx.len(), j);
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            let c = counts(&idx, w.len());
            for (m, &cm) in c.iter().enumerate() {
                let expect = j as f64 * w.w[m];
                prop_assert!((cm as f64 - expect).abs() < 1.0 + 1e-9, "m={} count={} expect={}", m, cm, expect);
            }
        }

        #[test]
        fn normalization_is_scale_invariant(raw in prop::collection::vec(0.0f64..10.0, 1..40), c in 1e-3f64..1e3) {
            prop_assume!(raw.iter().sum::<f64>() > 1e-6);
            let (a, la) = normalize_weights(&WeightVector::raw(raw.clone())).unwrap();
            let (b, lb) = normalize_weights(&WeightVector::raw(raw.iter().map(|v| v * c).collect())).unwrap();
            for (x, y) in a.w.iter().zip(&b.w) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((lb - la - c.ln()).abs() < 1e-9);
            prop_assert!((a.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
