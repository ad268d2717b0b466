use crate::error::{PompError, Result};

/// Effective sample size `M / (1 + 2 sum_k rho_k)`, truncating the
/// autocorrelation sum with Geyer's initial positive sequence: pairs
/// `rho_{2k} + rho_{2k+1}` are added while they stay positive.
///
/// A constant series has no defined autocorrelation; it returns 0 with a
/// warning.
pub fn ess(series: &[f64]) -> Result<f64> {
    let m = series.len();
    if m < 10 {
        return Err(PompError::InvalidArgument(format!("ESS needs at least 10 values, got {m}")));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(PompError::InvalidArgument("ESS input has non-finite values".into()));
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    let dev: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = dev.iter().map(|d| d * d).sum::<f64>() / m as f64;
    if c0 <= f64::EPSILON * mean.abs().max(1.0) * f64::EPSILON {
        log::warn!("degenerate chain: constant series has effective sample size 0");
        return Ok(0.0);
    }
    let rho = |k: usize| -> f64 {
        if k == 0 {
            return 1.0;
        }
        dev[..m - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / (m as f64 * c0)
    };
    let mut sum_gamma = 0.0;
    let mut k = 0;
    while 2 * k + 1 < m {
        let gamma = rho(2 * k) + rho(2 * k + 1);
        if gamma <= 0.0 {
            break;
        }
        sum_gamma += gamma;
        k += 1;
    }
    let tau = (2.0 * sum_gamma - 1.0).max(1.0 / m as f64);
    Ok(m as f64 / tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut g = RngStream::new(seed).generator();
        (0..n).map(|_| StandardNormal.sample(&mut g)).collect()
    }

    #[test]
    fn iid_series_is_nearly_independent() {
        let e = ess(&normals(1, 10_000)).unwrap();
        assert!((e / 10_000.0 - 1.0).abs() < 0.1, "{e}");
    }

    #[test]
    fn ar1_matches_closed_form() {
        let z = normals(2, 100_000);
        let mut x = vec![0.0; z.len()];
        for t in 1..z.len() {
            x[t] = 0.5 * x[t - 1] + z[t];
        }
        let r = ess(&x).unwrap() / x.len() as f64;
        assert!((r * 3.0 - 1.0).abs() < 0.1, "{r}");
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert_eq!(ess(&[2.5; 50]).unwrap(), 0.0);
        assert!(ess(&[1.0; 5]).is_err());
    }
}
