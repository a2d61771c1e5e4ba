//! Error metrics, median-of-means aggregation, and the asymptotic
//! conversion table between the four estimator guarantees.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need at least {need} trials, got {got}")]
    TooFewTrials { need: usize, got: usize },
    #[error("group count {0} must be odd")]
    EvenGroupCount(usize),
    #[error("group count {k} exceeds the {n} available estimates")]
    TooManyGroups { k: usize, n: usize },
    #[error("estimate vectors have inconsistent lengths")]
    RaggedEstimates,
    #[error("delta = {0} must lie in (0, 1)")]
    BadDelta(f64),
    #[error("no conversion between identical metrics")]
    IdentityConversion,
}

/// The four error guarantees compared in the conversion table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorMetric {
    /// `max_a sqrt(mean (u~_a - u_a)^2) <= eps`.
    MaxRms,
    /// `sqrt(sum_a mean (u~_a - u_a)^2) <= eps`.
    TotalRms,
    /// `P(||u~ - u||_2 <= eps) >= 1 - delta`.
    Prob2Norm(f64),
    /// `P(||u~ - u||_inf <= eps) >= 1 - delta`.
    ProbInfNorm(f64),
}

impl ErrorMetric {
    fn validate(&self) -> Result<(), EstimatorError> {
        match self {
            ErrorMetric::Prob2Norm(d) | ErrorMetric::ProbInfNorm(d) if !(*d > 0.0 && *d < 1.0) => {
                Err(EstimatorError::BadDelta(*d))
            }
            _ => Ok(()),
        }
    }

    fn kind(&self) -> u8 {
        match self {
            ErrorMetric::MaxRms => 0,
            ErrorMetric::TotalRms => 1,
            ErrorMetric::Prob2Norm(_) => 2,
            ErrorMetric::ProbInfNorm(_) => 3,
        }
    }
}

/// A batch of estimate vectors for one hidden truth, for empirical metrics.
#[derive(Debug, Clone)]
pub struct TrialEnsemble {
    estimates: Vec<Vec<f64>>,
    truth: Vec<f64>,
    seeds: Vec<u64>,
}

impl TrialEnsemble {
    pub fn new(estimates: Vec<Vec<f64>>, truth: Vec<f64>) -> Result<Self, EstimatorError> {
        let seeds = (0..estimates.len() as u64).collect();
        Self::with_seeds(estimates, truth, seeds)
    }

    /// As [`TrialEnsemble::new`] with the per-trial seeds recorded.
    pub fn with_seeds(
        estimates: Vec<Vec<f64>>,
        truth: Vec<f64>,
        seeds: Vec<u64>,
    ) -> Result<Self, EstimatorError> {
        if estimates.len() < 2 {
            return Err(EstimatorError::TooFewTrials {
                need: 2,
                got: estimates.len(),
            });
        }
        if estimates.iter().any(|e| e.len() != truth.len()) || seeds.len() != estimates.len() {
            return Err(EstimatorError::RaggedEstimates);
        }
        Ok(TrialEnsemble { estimates, truth, seeds })
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn n_trials(&self) -> usize {
        self.estimates.len()
    }

    pub fn n_params(&self) -> usize {
        self.truth.len()
    }
}

/// Empirical value of an error metric over the ensemble.
///
/// The probabilistic metrics report the empirical `1 - delta` quantile of the
/// stated norm over trials.
pub fn empirical_error(e: &TrialEnsemble, metric: ErrorMetric) -> Result<f64, EstimatorError> {
    metric.validate()?;
    let np = e.n_params();
    let nt = e.n_trials() as f64;
    match metric {
        ErrorMetric::MaxRms => {
            let mut worst = 0.0f64;
            for a in 0..np {
                let ms: f64 = e
                    .estimates
                    .iter()
                    .map(|est| (est[a] - e.truth[a]).powi(2))
                    .sum::<f64>()
                    / nt;
                worst = worst.max(ms.sqrt());
            }
            Ok(worst)
        }
        ErrorMetric::TotalRms => {
            let mut total = 0.0f64;
            for a in 0..np {
                total += e
                    .estimates
                    .iter()
                    .map(|est| (est[a] - e.truth[a]).powi(2))
                    .sum::<f64>()
                    / nt;
            }
            Ok(total.sqrt())
        }
        ErrorMetric::Prob2Norm(delta) => Ok(quantile(
            e.estimates
                .iter()
                .map(|est| {
                    est.iter()
                        .zip(&e.truth)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect(),
            1.0 - delta,
        )),
        ErrorMetric::ProbInfNorm(delta) => Ok(quantile(
            e.estimates
                .iter()
                .map(|est| {
                    est.iter()
                        .zip(&e.truth)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .collect(),
            1.0 - delta,
        )),
    }
}

fn quantile(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((values.len() as f64 * q).ceil() as usize).clamp(1, values.len()) - 1;
    values[idx]
}

/// Term-wise median of group means over `k` contiguous groups (in input
/// order). `k = 1` is the plain mean; `k` must be odd and at most the number
/// of estimates.
pub fn median_of_means(estimates: &[Vec<f64>], k: usize) -> Result<Vec<f64>, EstimatorError> {
    let n = estimates.len();
    if n == 0 {
        return Err(EstimatorError::TooFewTrials { need: 1, got: 0 });
    }
    if k % 2 == 0 {
        return Err(EstimatorError::EvenGroupCount(k));
    }
    if k > n {
        return Err(EstimatorError::TooManyGroups { k, n });
    }
    let np = estimates[0].len();
    if estimates.iter().any(|e| e.len() != np) {
        return Err(EstimatorError::RaggedEstimates);
    }
    // Contiguous groups whose sizes differ by at most one.
    let base = n / k;
    let extra = n % k;
    let mut group_means: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut start = 0;
    for g in 0..k {
        let len = base + usize::from(g < extra);
        let block = &estimates[start..start + len];
        start += len;
        let mut mean = vec![0.0f64; np];
        for est in block {
            for (m, v) in mean.iter_mut().zip(est) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= len as f64;
        }
        group_means.push(mean);
    }
    let mut out = vec![0.0f64; np];
    let mut column = vec![0.0f64; k];
    for (a, slot) in out.iter_mut().enumerate() {
        for (g, gm) in group_means.iter().enumerate() {
            column[g] = gm[a];
        }
        column.sort_by(|x, y| x.partial_cmp(y).unwrap());
        *slot = column[k / 2];
    }
    Ok(out)
}

/// Result of a conversion-table lookup; entries are asymptotic forms with
/// all constants set to one, for reporting only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conversion {
    pub time: f64,
    pub epsilon: f64,
    pub delta: Option<f64>,
}

/// Cost of converting an estimator with guarantee `from` (error `eps`, cost
/// `time`) into one with guarantee `to`. Probabilistic metrics carry their
/// `delta` inside the variant.
pub fn convert_cost(
    from: ErrorMetric,
    to: ErrorMetric,
    time: f64,
    eps: f64,
    n_params: usize,
) -> Result<Conversion, EstimatorError> {
    from.validate()?;
    to.validate()?;
    if from.kind() == to.kind() {
        return Err(EstimatorError::IdentityConversion);
    }
    let np = n_params as f64;
    let sqrt_np = np.sqrt();
    let ln_np = np.ln().max(1.0);
    let ln_inv_eps = (1.0 / eps).ln().max(1.0);
    let ln_inv = |d: f64| (1.0 / d).ln().max(1.0);

    use ErrorMetric::*;
    let conv = match (from, to) {
        (MaxRms, TotalRms) => Conversion { time, epsilon: sqrt_np * eps, delta: None },
        (TotalRms, MaxRms) => Conversion { time, epsilon: eps, delta: None },
        (MaxRms, Prob2Norm(d)) => Conversion {
            time: time * ln_np * ln_inv(d),
            epsilon: sqrt_np * eps,
            delta: Some(d),
        },
        (MaxRms, ProbInfNorm(d)) => Conversion {
            time: time * ln_np * ln_inv(d),
            epsilon: eps,
            delta: Some(d),
        },
        (TotalRms, Prob2Norm(d)) => Conversion {
            time: time * ln_inv(d),
            epsilon: eps,
            delta: Some(d),
        },
        (TotalRms, ProbInfNorm(d)) => Conversion {
            time: time * ln_inv(d),
            epsilon: eps,
            delta: Some(d),
        },
        (Prob2Norm(d), MaxRms) => Conversion {
            time: time * ln_inv_eps / ln_inv(d),
            epsilon: eps,
            delta: None,
        },
        (ProbInfNorm(d), MaxRms) => Conversion {
            time: time * ln_inv_eps / ln_inv(d),
            epsilon: eps,
            delta: None,
        },
        (Prob2Norm(d), TotalRms) => Conversion {
            time: time * ln_np * ln_inv_eps / ln_inv(d),
            epsilon: eps,
            delta: None,
        },
        (ProbInfNorm(d), TotalRms) => Conversion {
            time: time * ln_np * ln_inv_eps / ln_inv(d),
            epsilon: sqrt_np * eps,
            delta: None,
        },
        (Prob2Norm(d), ProbInfNorm(_)) => Conversion { time, epsilon: eps, delta: Some(d) },
        (ProbInfNorm(d), Prob2Norm(_)) => Conversion {
            time,
            epsilon: sqrt_np * eps,
            delta: Some(d),
        },
        _ => unreachable!("identical kinds rejected above"),
    };
    Ok(conv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empirical_error_examples() {
        // Exact trials -> 0 under every metric.
        let e = TrialEnsemble::new(vec![vec![0.3, -0.2]; 4], vec![0.3, -0.2]).unwrap();
        for m in [
            ErrorMetric::MaxRms,
            ErrorMetric::TotalRms,
            ErrorMetric::Prob2Norm(0.1),
            ErrorMetric::ProbInfNorm(0.1),
        ] {
            assert_eq!(empirical_error(&e, m).unwrap(), 0.0);
        }

        // Errors (0.1, 0) and (0, 0.1): MaxRms = 0.1/sqrt(2), TotalRms = 0.1.
        let e = TrialEnsemble::new(vec![vec![0.1, 0.0], vec![0.0, 0.1]], vec![0.0, 0.0]).unwrap();
        assert_relative_eq!(
            empirical_error(&e, ErrorMetric::MaxRms).unwrap(),
            0.1 / 2.0f64.sqrt(),
            epsilon = 1e-12
        );
        assert_relative_eq!(empirical_error(&e, ErrorMetric::TotalRms).unwrap(), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn chain_inequality_on_random_ensembles() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let np = 1 + rng.gen_range(0..6usize);
            let truth: Vec<f64> = (0..np).map(|_| rng.gen::<f64>() - 0.5).collect();
            let ests: Vec<Vec<f64>> = (0..8)
                .map(|_| truth.iter().map(|t| t + 0.2 * (rng.gen::<f64>() - 0.5)).collect())
                .collect();
            let e = TrialEnsemble::new(ests, truth).unwrap();
            let max_rms = empirical_error(&e, ErrorMetric::MaxRms).unwrap();
            let total_rms = empirical_error(&e, ErrorMetric::TotalRms).unwrap();
            assert!(max_rms <= total_rms + 1e-15);
            assert!(total_rms <= (np as f64).sqrt() * max_rms + 1e-15);
        }
    }

    #[test]
    fn vector_norm_chain_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let np = 1 + rng.gen_range(0..8usize);
            let x: Vec<f64> = (0..np).map(|_| rng.gen::<f64>() - 0.5).collect();
            let two: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(two / (np as f64).sqrt() <= inf + 1e-15);
            assert!(inf <= two + 1e-15);
        }
    }

    #[test]
    fn median_of_means_basics() {
        // k = 1 is the plain mean.
        let ests = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(median_of_means(&ests, 1).unwrap(), vec![2.0]);

        // Constant inputs give the constant.
        let ests = vec![vec![0.7, -0.1]; 9];
        let got = median_of_means(&ests, 3).unwrap();
        assert_relative_eq!(got[0], 0.7, epsilon = 1e-15);
        assert_relative_eq!(got[1], -0.1, epsilon = 1e-15);

        // One wild group out of three is ignored by the median.
        let ests = vec![vec![1.0], vec![1.0], vec![100.0], vec![100.0], vec![1.0], vec![1.0]];
        assert_eq!(median_of_means(&ests, 3).unwrap(), vec![1.0]);

        assert!(matches!(
            median_of_means(&ests, 2),
            Err(EstimatorError::EvenGroupCount(2))
        ));
        assert!(matches!(
            median_of_means(&ests, 7),
            Err(EstimatorError::TooManyGroups { .. })
        ));
    }

    #[test]
    fn median_of_means_permutation_equivariant_across_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ests: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..4).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let direct = median_of_means(&ests, 5).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Vec<f64>> = ests
            .iter()
            .map(|e| perm.iter().map(|&i| e[i]).collect())
            .collect();
        let via = median_of_means(&permuted, 5).unwrap();
        for (slot, &src) in perm.iter().enumerate() {
            assert_eq!(via[slot], direct[src]);
        }
    }

    /// Exact upper tail P[Bin(k, p) >= m].
    pub fn binomial_tail(k: usize, p: f64, m: usize) -> f64 {
        let mut total = 0.0f64;
        for j in m..=k {
            let mut log_c = 0.0f64;
            for i in 0..j {
                log_c += ((k - i) as f64).ln() - ((i + 1) as f64).ln();
            }
            total += (log_c + j as f64 * p.ln() + (k - j) as f64 * (1.0 - p).ln()).exp();
        }
        total
    }

    #[test]
    fn boosting_matches_exact_binomial_tail() {
        // Per-copy failure p, K groups: the median fails iff >= (K+1)/2 copies fail.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (p, k) in [(0.1f64, 15usize), (0.2, 31)] {
            let m = k / 2 + 1;
            let exact = binomial_tail(k, p, m);
            let resamples = 100_000usize;
            let mut failures = 0usize;
            for _ in 0..resamples {
                let bad = (0..k).filter(|_| rng.gen::<f64>() < p).count();
                if bad >= m {
                    failures += 1;
                }
            }
            let emp = failures as f64 / resamples as f64;
            let sigma = (exact * (1.0 - exact) / resamples as f64).sqrt();
            assert!(
                (emp - exact).abs() <= 3.0 * sigma.max(1e-9),
                "p={p} k={k}: emp {emp} vs exact {exact} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn conversion_table_entries() {
        use ErrorMetric::*;
        // MaxRms -> TotalRms: eps' = sqrt(Np) eps, T' = T.
        let c = convert_cost(MaxRms, TotalRms, 10.0, 0.1, 9).unwrap();
        assert_relative_eq!(c.epsilon, 0.3, epsilon = 1e-12);
        assert_relative_eq!(c.time, 10.0, epsilon = 1e-12);

        // Prob2 -> ProbInf: identity row of the table.
        let c = convert_cost(Prob2Norm(0.05), ProbInfNorm(0.05), 10.0, 0.1, 9).unwrap();
        assert_eq!(c, Conversion { time: 10.0, epsilon: 0.1, delta: Some(0.05) });

        // Np = 1 collapses the norm conversions to identities.
        let c = convert_cost(MaxRms, TotalRms, 5.0, 0.2, 1).unwrap();
        assert_relative_eq!(c.epsilon, 0.2, epsilon = 1e-12);

        assert!(matches!(
            convert_cost(MaxRms, MaxRms, 1.0, 0.1, 4),
            Err(EstimatorError::IdentityConversion)
        ));
    }
}
