use statrs::distribution::{ContinuousCDF, Normal};

use super::MetricError;

/// Largest pooled sample size for which the null distribution is enumerated.
pub const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    pub u_a: f64,
    pub u_b: f64,
    /// One-sided p value for the alternative that `a` tends to exceed `b`.
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled values.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney U test, one-sided "greater". Exact by enumerating every
/// assignment of the pooled midranks when `n_a + n_b <= 12`, otherwise the
/// normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFiniteSample);
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let offset = (na * (na + 1)) as f64 / 2.0;
    let r_a: f64 = ranks[..na].iter().sum();
    let u_a = r_a - offset;
    let u_b = (na * nb) as f64 - u_a;

    if n <= EXACT_LIMIT {
        let (mut hits, mut total) = (0u64, 0u64);
        for set in 0u32..(1 << n) {
            if set.count_ones() as usize != na {
                continue;
            }
            let r: f64 = (0..n).filter(|&i| set >> i & 1 == 1).map(|i| ranks[i]).sum();
            total += 1;
            // midranks are multiples of 1/2, so this comparison is exact
            if r - offset >= u_a {
                hits += 1;
            }
        }
        return Ok(MannWhitney {
            u_a,
            u_b,
            p_value: hits as f64 / total as f64,
            exact: true,
        });
    }

    let mean = (na * nb) as f64 / 2.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_sum = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_sum += t * t * t - t;
        i = j + 1;
    }
    let nf = n as f64;
    let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_sum / (nf * (nf - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let z = (u_a - mean - 0.5) / var.sqrt();
        Normal::new(0.0, 1.0).expect("standard normal").sf(z)
    };
    Ok(MannWhitney {
        u_a,
        u_b,
        p_value,
        exact: false,
    })
}
