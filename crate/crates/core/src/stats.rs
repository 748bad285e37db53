//! Paired-classifier statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discordant pairs at or above this count use the chi-square test.
pub const CHI2_MIN_DISCORDANT: u64 = 20;

pub const ALPHA: f64 = 0.05;

/// Counts indexed by (A correct, B correct): `n10` is A right and B wrong.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn swapped(&self) -> Self {
        Self {
            n00: self.n00,
            n01: self.n10,
            n10: self.n01,
            n11: self.n11,
        }
    }
}

pub fn contingency(preds_a: &[usize], preds_b: &[usize], truth: &[usize]) -> Result<ContingencyTable> {
    if preds_a.len() != truth.len() || preds_b.len() != truth.len() {
        return Err(Error::Consistency(format!(
            "prediction lengths {} and {} differ from {} labels",
            preds_a.len(),
            preds_b.len(),
            truth.len()
        )));
    }
    let mut t = ContingencyTable::default();
    for ((a, b), y) in preds_a.iter().zip(preds_b).zip(truth) {
        match (a == y, b == y) {
            (false, false) => t.n00 += 1,
            (false, true) => t.n01 += 1,
            (true, false) => t.n10 += 1,
            (true, true) => t.n11 += 1,
        }
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    Chi2Cc,
    ExactBinomial,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Continuity-corrected chi-square statistic (reported for both methods).
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
    pub significant: bool,
}

pub fn mcnemar(t: &ContingencyTable) -> McNemarResult {
    let (b, c) = (t.n01, t.n10);
    let n = b + c;
    if n == 0 {
        return McNemarResult {
            statistic: 0.0,
            p_value: 1.0,
            method: McNemarMethod::ExactBinomial,
            significant: false,
        };
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let statistic = diff * diff / n as f64;
    let (p_value, method) = if n >= CHI2_MIN_DISCORDANT {
        (chi2_df1_sf(statistic), McNemarMethod::Chi2Cc)
    } else {
        (binomial_two_sided(b.min(c), n), McNemarMethod::ExactBinomial)
    };
    let p_value = p_value.clamp(0.0, 1.0);
    McNemarResult {
        statistic,
        p_value,
        method,
        significant: p_value < ALPHA,
    }
}

/// `min(1, 2·P(X ≤ k))` for `X ~ Binomial(n, 1/2)`.
pub fn binomial_two_sided(k: u64, n: u64) -> f64 {
    let ln_half_n = -(n as f64) * std::f64::consts::LN_2;
    let mut ln_coef = 0.0;
    let mut cdf = 0.0;
    for i in 0..=k.min(n) {
        if i > 0 {
            ln_coef += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        cdf += (ln_coef + ln_half_n).exp();
    }
    (2.0 * cdf).min(1.0)
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi2_df1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5, x / 2.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9.
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let front = (a * x.ln() - x - ln_gamma(a)).exp();
    if x < a + 1.0 {
        // Series for P(a, x).
        let (mut term, mut sum, mut ap) = (1.0 / a, 1.0 / a, a);
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        1.0 - sum * front
    } else {
        // Modified Lentz continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        front * h
    }
}

/// Test-set predictions of one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPredictions {
    pub labels: Vec<usize>,
    pub strong: Vec<usize>,
    pub mean: Vec<usize>,
}

impl RunPredictions {
    fn protocol(&self, name: &str) -> &[usize] {
        match name {
            "strong" => &self.strong,
            _ => &self.mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolComparison {
    pub protocol: String,
    pub acc_a: f64,
    pub acc_b: f64,
    /// `acc_a − acc_b`.
    pub delta: f64,
    pub mcnemar: McNemarResult,
}

fn accuracy(t: &ContingencyTable) -> (f64, f64) {
    let n = t.total() as f64;
    ((t.n10 + t.n11) as f64 / n, (t.n01 + t.n11) as f64 / n)
}

/// Per-protocol accuracy deltas and McNemar tests of run A against run B.
pub fn compare_runs(a: &RunPredictions, b: &RunPredictions) -> Result<Vec<ProtocolComparison>> {
    if a.labels != b.labels {
        return Err(Error::Consistency(format!(
            "runs were evaluated on different test sets ({} vs {} samples{})",
            a.labels.len(),
            b.labels.len(),
            if a.labels.len() == b.labels.len() { ", labels differ" } else { "" }
        )));
    }
    if a.labels.is_empty() {
        return Err(Error::Consistency("empty test set".into()));
    }
    ["strong", "mean"]
        .iter()
        .map(|&name| {
            let t = contingency(a.protocol(name), b.protocol(name), &a.labels)?;
            let (acc_a, acc_b) = accuracy(&t);
            Ok(ProtocolComparison {
                protocol: name.to_string(),
                acc_a,
                acc_b,
                delta: acc_a - acc_b,
                mcnemar: mcnemar(&t),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;

    fn table(n01: u64, n10: u64) -> ContingencyTable {
        ContingencyTable { n00: 7, n01, n10, n11: 40 }
    }

    #[test]
    fn chi_square_branch() {
        let r = mcnemar(&table(15, 5));
        assert_eq!(r.method, McNemarMethod::Chi2Cc);
        assert!((r.statistic - 4.05).abs() < 1e-12);
        assert!((r.p_value - 0.044_171_344_908_442_614).abs() < 1e-10);
        assert!(r.significant);
    }

    #[test]
    fn exact_branch() {
        let r = mcnemar(&table(3, 1));
        assert_eq!(r.method, McNemarMethod::ExactBinomial);
        assert!((r.p_value - 0.625).abs() < 1e-12);
        assert!((binomial_two_sided(5, 20) - 0.041_389_465_332_031_25).abs() < 1e-15);
    }

    #[test]
    fn symmetric_discordance_is_never_significant() {
        for n in 1..200 {
            let r = mcnemar(&table(n, n));
            assert!(r.p_value > 0.05, "n={n} p={}", r.p_value);
            assert!((r.statistic - 1.0 / (2 * n) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn no_discordance_gives_unit_p() {
        let r = mcnemar(&table(0, 0));
        assert_eq!((r.statistic, r.p_value, r.significant), (0.0, 1.0, false));
    }

    #[test]
    fn swap_symmetry() {
        for (b, c) in [(15, 5), (3, 1), (40, 22), (0, 9)] {
            assert_eq!(mcnemar(&table(b, c)), mcnemar(&table(b, c).swapped()));
        }
    }

    #[test]
    fn chi2_tail_matches_erfc() {
        let mut x: f64 = 0.0;
        while x <= 40.0 {
            let want = erfc((x / 2.0).sqrt());
            let got = chi2_df1_sf(x);
            assert!((got - want).abs() < 1e-10, "x={x}: {got} vs {want}");
            x += 0.01;
        }
    }

    #[test]
    fn contingency_counts() {
        let y = [0, 1, 2, 0];
        let same = contingency(&y, &y, &y).unwrap();
        assert_eq!((same.n01, same.n10, same.n11), (0, 0, 4));
        let wrong = [1, 2, 0, 1];
        let t = contingency(&y, &wrong, &y).unwrap();
        assert_eq!((t.n10, t.n00, t.n01, t.n11), (4, 0, 0, 0));
        assert!(matches!(contingency(&y, &y[..3], &y), Err(Error::Consistency(_))));
    }

    #[test]
    fn identical_runs_have_zero_delta() {
        let r = RunPredictions {
            labels: vec![0, 1, 1, 0],
            strong: vec![0, 1, 0, 0],
            mean: vec![1, 1, 1, 0],
        };
        for c in compare_runs(&r, &r).unwrap() {
            assert_eq!(c.delta, 0.0);
            assert_eq!(c.mcnemar.p_value, 1.0);
        }
        let other = RunPredictions {
            labels: vec![0, 1, 1, 1],
            ..r.clone()
        };
        assert!(matches!(compare_runs(&r, &other), Err(Error::Consistency(_))));
    }
}
