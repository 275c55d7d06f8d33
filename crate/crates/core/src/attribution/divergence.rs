//! Divergences between class distributions and their bounded similarity maps.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::verbalizer::ClassDistribution;

/// Additive smoothing applied to the second argument of KL.
pub const KL_EPSILON: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Jsd,
    Kl,
    L1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jsd, Metric::Kl, Metric::L1];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Jsd => "jsd",
            Metric::Kl => "kl",
            Metric::L1 => "l1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsd" => Ok(Metric::Jsd),
            "kl" => Ok(Metric::Kl),
            "l1" => Ok(Metric::L1),
            other => Err(Error::Contract(format!("unknown metric `{other}`"))),
        }
    }
}

fn check_lengths(p: &ClassDistribution, q: &ClassDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::Contract(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// `a * ln(a / b)` with the `0 * ln 0 = 0` convention.
fn xlogy_ratio(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * (a / b).ln()
    }
}

/// Jensen-Shannon divergence in nats.
pub fn jsd_nat(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    check_lengths(p, q)?;
    let mut acc = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        acc += 0.5 * xlogy_ratio(a, m) + 0.5 * xlogy_ratio(b, m);
    }
    let jsd = acc.max(0.0);
    if p.len() == 2 {
        debug_assert!(jsd <= LN_2 + 1e-12, "binary JSD {jsd} exceeds ln 2");
    }
    Ok(jsd)
}

/// `KL(p || q)` in nats, with `q` smoothed by [`KL_EPSILON`] and renormalized.
pub fn kl_nat(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    check_lengths(p, q)?;
    let norm = 1.0 + KL_EPSILON * q.len() as f64;
    let acc: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(&a, &b)| xlogy_ratio(a, (b + KL_EPSILON) / norm))
        .sum();
    Ok(acc.max(0.0))
}

pub fn l1(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    check_lengths(p, q)?;
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// Bounded similarity in `[0, 1]` between the full-input and coalition distributions.
///
/// JSD and KL are scaled by `ln 2` and clamped; L1 is halved.
pub fn similarity(metric: Metric, p_full: &ClassDistribution, p_s: &ClassDistribution) -> Result<f64> {
    let sim = match metric {
        Metric::Jsd => 1.0 - (jsd_nat(p_full, p_s)? / LN_2).min(1.0),
        Metric::Kl => 1.0 - (kl_nat(p_full, p_s)? / LN_2).min(1.0),
        Metric::L1 => 1.0 - l1(p_full, p_s)? / 2.0,
    };
    Ok(sim.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    // Reference values computed with mpmath at 50 digits.
    const JSD_09_05: f64 = 0.101_749_225_079_196_69;
    const SIM_09_05: f64 = 0.853_206_897_563_948;
    const KL_05_09: f64 = 0.510_825_623_765_990_7;

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd_nat(&d(&[0.5, 0.5]), &d(&[0.5, 0.5])).unwrap(), 0.0);
        assert!((jsd_nat(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap() - LN_2).abs() < 1e-15);
        assert!((jsd_nat(&d(&[0.9, 0.1]), &d(&[0.5, 0.5])).unwrap() - JSD_09_05).abs() < 1e-15);
    }

    #[test]
    fn kl_examples() {
        assert!(kl_nat(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap() < 1e-9);
        assert!((kl_nat(&d(&[1.0, 0.0]), &d(&[0.5, 0.5])).unwrap() - LN_2).abs() < 1e-9);
        assert!((kl_nat(&d(&[0.5, 0.5]), &d(&[0.9, 0.1])).unwrap() - KL_05_09).abs() < 1e-9);
        // zero in q stays finite
        assert!(kl_nat(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap().is_finite());
    }

    #[test]
    fn l1_examples() {
        assert_eq!(l1(&d(&[0.2, 0.8]), &d(&[0.2, 0.8])).unwrap(), 0.0);
        assert_eq!(l1(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 2.0);
        assert!((l1(&d(&[0.9, 0.1]), &d(&[0.5, 0.5])).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn similarity_examples() {
        let p = d(&[0.9, 0.1]);
        for m in Metric::ALL {
            assert!((similarity(m, &p, &p).unwrap() - 1.0).abs() < 1e-12, "{m}");
        }
        assert_eq!(similarity(Metric::Jsd, &d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((similarity(Metric::Jsd, &p, &d(&[0.5, 0.5])).unwrap() - SIM_09_05).abs() < 1e-15);
        assert_eq!(similarity(Metric::L1, &d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        let e = jsd_nat(&d(&[0.5, 0.5]), &d(&[0.2, 0.3, 0.5])).unwrap_err();
        assert!(matches!(e, Error::Contract(_)));
        assert!(kl_nat(&d(&[0.5, 0.5]), &d(&[0.2, 0.3, 0.5])).is_err());
        assert!(l1(&d(&[0.5, 0.5]), &d(&[0.2, 0.3, 0.5])).is_err());
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("JSD".parse::<Metric>().unwrap(), Metric::Jsd);
        assert_eq!("l1".parse::<Metric>().unwrap(), Metric::L1);
        assert!("cosine".parse::<Metric>().is_err());
    }
}
