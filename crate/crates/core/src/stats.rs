//! Sample statistics: means with standard errors and the delta method for
//! smooth functions of several jointly sampled means.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A Monte-Carlo estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Estimate<F: Scalar> {
    pub value: F,
    pub se: F,
}

impl<F: Scalar> Estimate<F> {
    pub fn new(value: F, se: F) -> Self {
        Self { value, se }
    }

    pub fn exact(value: F) -> Self {
        Self { value, se: F::zero() }
    }

    /// Symmetric normal-approximation confidence interval.
    pub fn ci(&self, z: F) -> (F, F) {
        (self.value - z * self.se, self.value + z * self.se)
    }

    /// True when the 95% interval lies strictly on one side of zero.
    pub fn excludes_zero_95(&self) -> bool {
        let (lo, hi) = self.ci(F::lit(1.959_963_984_540_054));
        lo > F::zero() || hi < F::zero()
    }
}

/// Standard error of the difference of two independent estimates.
pub fn combined_se<F: Scalar>(a: F, b: F) -> F {
    (a * a + b * b).sqrt()
}

/// Sample mean and standard error of the mean.
pub fn mean_se<F: Scalar>(xs: &[F]) -> Result<Estimate<F>> {
    if xs.is_empty() {
        return Err(Error::EmptySample("mean of empty sample".into()));
    }
    let n = F::from_count(xs.len());
    let mean = xs.iter().copied().sum::<F>() / n;
    if xs.len() == 1 {
        return Ok(Estimate::new(mean, F::zero()));
    }
    let ss: F = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    let var = ss / (n - F::one());
    Ok(Estimate::new(mean, (var / n).sqrt()))
}

/// Column means of an `n × k` sample matrix and the covariance matrix of
/// those means. Functions of the means get delta-method standard errors.
#[derive(Debug, Clone)]
pub struct MomentSample<F: Scalar> {
    pub n: usize,
    pub means: Vec<F>,
    /// Row-major `k × k` covariance of the column means.
    pub cov: Vec<F>,
}

impl<F: Scalar> MomentSample<F> {
    /// `rows` is row-major with `k` columns per path.
    pub fn from_rows(rows: &[F], k: usize) -> Result<Self> {
        if k == 0 || rows.len() % k != 0 {
            return Err(Error::InvalidParameter(format!(
                "sample matrix of length {} is not a multiple of {k} columns",
                rows.len()
            )));
        }
        let n = rows.len() / k;
        if n < 2 {
            return Err(Error::EmptySample("need at least two sample rows".into()));
        }
        let nf = F::from_count(n);
        let mut means = vec![F::zero(); k];
        for row in rows.chunks_exact(k) {
            for (m, &v) in means.iter_mut().zip(row) {
                *m = *m + v;
            }
        }
        for m in means.iter_mut() {
            *m = *m / nf;
        }
        let mut cov = vec![F::zero(); k * k];
        let mut centered = vec![F::zero(); k];
        for row in rows.chunks_exact(k) {
            for j in 0..k {
                centered[j] = row[j] - means[j];
            }
            for i in 0..k {
                let ci = centered[i];
                for j in i..k {
                    cov[i * k + j] = cov[i * k + j] + ci * centered[j];
                }
            }
        }
        let denom = (nf - F::one()) * nf;
        for i in 0..k {
            for j in i..k {
                let v = cov[i * k + j] / denom;
                cov[i * k + j] = v;
                cov[j * k + i] = v;
            }
        }
        Ok(Self { n, means, cov })
    }

    /// Streams `n` rows produced by `fill(i, row)` without storing them.
    /// Rows are processed in fixed-size chunks merged in index order, so the
    /// result does not depend on the thread count.
    pub fn accumulate<G>(n: usize, k: usize, fill: G) -> Result<Self>
    where
        G: Fn(usize, &mut [F]) -> Result<()> + Sync,
    {
        const CHUNK: usize = 2048;
        if k == 0 {
            return Err(Error::InvalidParameter("need at least one column".into()));
        }
        if n < 2 {
            return Err(Error::EmptySample("need at least two sample rows".into()));
        }
        let n_chunks = n.div_ceil(CHUNK);
        let parts: Vec<(usize, Vec<F>, Vec<F>)> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut rows = vec![F::zero(); (hi - lo) * k];
                for (i, row) in (lo..hi).zip(rows.chunks_exact_mut(k)) {
                    fill(i, row)?;
                }
                let (mean, comoment) = chunk_moments(&rows, k);
                Ok((hi - lo, mean, comoment))
            })
            .collect::<Result<_>>()?;
        let mut it = parts.into_iter();
        let (mut count, mut mean, mut m2) = it.next().expect("n >= 2");
        let mut delta = vec![F::zero(); k];
        for (nb, mb, m2b) in it {
            let total = count + nb;
            let (na_f, nb_f, tot_f) = (F::from_count(count), F::from_count(nb), F::from_count(total));
            for j in 0..k {
                delta[j] = mb[j] - mean[j];
            }
            let w = na_f * nb_f / tot_f;
            for i in 0..k {
                for j in 0..k {
                    m2[i * k + j] = m2[i * k + j] + m2b[i * k + j] + delta[i] * delta[j] * w;
                }
            }
            for j in 0..k {
                mean[j] = mean[j] + delta[j] * nb_f / tot_f;
            }
            count = total;
        }
        let nf = F::from_count(n);
        let denom = (nf - F::one()) * nf;
        let cov = m2.into_iter().map(|v| v / denom).collect();
        Ok(Self { n, means: mean, cov })
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    /// Mean of one column with its standard error.
    pub fn column(&self, j: usize) -> Estimate<F> {
        let k = self.k();
        Estimate::new(self.means[j], self.cov[j * k + j].max(F::zero()).sqrt())
    }

    /// Delta-method estimate of `f(means)`. The gradient is taken by central
    /// differences on the means; only the standard error depends on it.
    pub fn estimate<G>(&self, f: G) -> Estimate<F>
    where
        G: Fn(&[F]) -> F,
    {
        let k = self.k();
        let value = f(&self.means);
        let rel = F::epsilon().cbrt();
        let mut grad = vec![F::zero(); k];
        let mut probe = self.means.clone();
        for j in 0..k {
            let base = self.means[j];
            let scale = self.cov[j * k + j].max(F::zero()).sqrt().max(base.abs());
            let h = if scale > F::zero() { rel * scale } else { rel };
            probe[j] = base + h;
            let up = f(&probe);
            probe[j] = base - h;
            let down = f(&probe);
            probe[j] = base;
            grad[j] = (up - down) / (h + h);
        }
        let mut var = F::zero();
        for i in 0..k {
            if grad[i] == F::zero() {
                continue;
            }
            for j in 0..k {
                var = var + grad[i] * self.cov[i * k + j] * grad[j];
            }
        }
        Estimate::new(value, var.max(F::zero()).sqrt())
    }
}

fn chunk_moments<F: Scalar>(rows: &[F], k: usize) -> (Vec<F>, Vec<F>) {
    let nf = F::from_count(rows.len() / k);
    let mut mean = vec![F::zero(); k];
    for row in rows.chunks_exact(k) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    for m in mean.iter_mut() {
        *m = *m / nf;
    }
    let mut m2 = vec![F::zero(); k * k];
    let mut centered = vec![F::zero(); k];
    for row in rows.chunks_exact(k) {
        for j in 0..k {
            centered[j] = row[j] - mean[j];
        }
        for i in 0..k {
            for j in i..k {
                m2[i * k + j] = m2[i * k + j] + centered[i] * centered[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            m2[i * k + j] = m2[j * k + i];
        }
    }
    (mean, m2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn mean_se_of_known_sample() {
        let e = mean_se(&[1.0_f64, 2.0, 3.0, 4.0]).unwrap();
        assert_relative_eq!(e.value, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert_relative_eq!(e.se, (5.0_f64 / 12.0).sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn empty_sample_is_error() {
        assert!(mean_se::<f64>(&[]).is_err());
    }

    #[test]
    fn delta_method_of_single_column_matches_column_se() {
        let rows: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let m = MomentSample::from_rows(&rows, 1).unwrap();
        let direct = m.column(0);
        let via = m.estimate(|v| v[0]);
        assert_relative_eq!(direct.se, via.se, max_relative = 1e-6);
        let scaled = m.estimate(|v| 3.0 * v[0]);
        assert_relative_eq!(scaled.se, 3.0 * direct.se, max_relative = 1e-6);
    }

    #[test]
    fn difference_of_identical_columns_has_zero_se() {
        let rows: Vec<f64> = (0..50).flat_map(|i| [i as f64, i as f64]).collect();
        let m = MomentSample::from_rows(&rows, 2).unwrap();
        let d = m.estimate(|v| v[0] - v[1]);
        assert_eq!(d.value, 0.0);
        assert!(d.se < 1e-9);
    }

    #[test]
    fn streaming_matches_stored_rows() {
        let k = 3;
        let n = 5000;
        let row = |i: usize| {
            let x = (i as f64 * 0.37).sin();
            [x, x * x + 1.0, (i % 7) as f64]
        };
        let rows: Vec<f64> = (0..n).flat_map(row).collect();
        let a = MomentSample::from_rows(&rows, k).unwrap();
        let b = MomentSample::accumulate(n, k, |i, r| {
            r.copy_from_slice(&row(i));
            Ok(())
        })
        .unwrap();
        for j in 0..k {
            assert!((a.means[j] - b.means[j]).abs() < 1e-12);
        }
        for (x, y) in a.cov.iter().zip(&b.cov) {
            assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
        }
    }
}
