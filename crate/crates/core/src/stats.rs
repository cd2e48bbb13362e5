//! Order-independent aggregation of Monte Carlo replicates.

/// Pairwise (cascade) summation: the result depends only on the order of
/// `values`, never on how the replicates were scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (left, right) = values.split_at(values.len() / 2);
    pairwise_sum(left) + pairwise_sum(right)
}

/// Sample mean, unbiased sample variance and replicate count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMoments {
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

impl SampleMoments {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                variance: f64::NAN,
                count,
            };
        }
        if values.iter().all(|&v| v == values[0]) {
            return Self {
                mean: values[0],
                variance: 0.0,
                count,
            };
        }
        let mean = pairwise_sum(values) / count as f64;
        let variance = if count > 1 {
            let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            pairwise_sum(&sq) / (count - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            variance,
            count,
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            (self.variance / self.count as f64).sqrt()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_exact_values() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }

    #[test]
    fn constant_sample_has_zero_variance() {
        let m = SampleMoments::of(&[0.1; 4000]);
        assert_eq!(m.mean, 0.1);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.std_error(), 0.0);
    }

    #[test]
    fn moments_of_small_sample() {
        let m = SampleMoments::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-15);
    }
}
