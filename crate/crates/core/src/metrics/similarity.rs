// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold-free similarities between AP vectors, and embedding cosine.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ap::ApVector;
use crate::error::{Error, Result};

/// Additive smoothing applied to AP values before normalizing to a
/// distribution.
pub const KL_EPSILON: f64 = 1e-12;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn cosine<I>(pairs: I) -> Result<f64>
where
    I: Iterator<Item = (f64, f64)>,
{
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in pairs {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Cosine similarity of raw AP values.
pub fn ap_cosine(a: &ApVector, b: &ApVector) -> Result<f64> {
    check_len(a.len(), b.len())?;
    cosine(a.scores.iter().zip(&b.scores).map(|(&x, &y)| (f64::from(x), f64::from(y))))
}

/// How AP values are re-centred before the negative-adjusted cosine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegAdjForm {
    /// `|AP - 0.5|`: distance from chance in either direction.
    #[default]
    AbsDeviation,
    /// `|AP| - 0.5`: literal reading; values below 0.5 become negative.
    AbsMinusHalf,
}

impl NegAdjForm {
    pub fn apply(self, ap: f64) -> f64 {
        match self {
            NegAdjForm::AbsDeviation => (ap - 0.5).abs(),
            NegAdjForm::AbsMinusHalf => ap.abs() - 0.5,
        }
    }
}

impl fmt::Display for NegAdjForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegAdjForm::AbsDeviation => "abs-deviation",
            NegAdjForm::AbsMinusHalf => "abs-minus-half",
        })
    }
}

impl FromStr for NegAdjForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs-deviation" => Ok(NegAdjForm::AbsDeviation),
            "abs-minus-half" => Ok(NegAdjForm::AbsMinusHalf),
            other => Err(Error::InvalidArgument(format!("unknown negadj form {other:?}"))),
        }
    }
}

/// Cosine after transforming every AP value with `form`.
pub fn negadj_cosine(a: &ApVector, b: &ApVector, form: NegAdjForm) -> Result<f64> {
    check_len(a.len(), b.len())?;
    cosine(
        a.scores
            .iter()
            .zip(&b.scores)
            .map(|(&x, &y)| (form.apply(f64::from(x)), form.apply(f64::from(y)))),
    )
}

fn normalized(values: &[f32]) -> Vec<f64> {
    let total: f64 = values.iter().map(|&v| f64::from(v) + KL_EPSILON).sum();
    values.iter().map(|&v| (f64::from(v) + KL_EPSILON) / total).collect()
}

/// `KL(p||q) + KL(q||p)` in nats, where `p` and `q` are the
/// epsilon-smoothed, sum-normalized AP vectors.
pub fn symmetric_kl(a: &ApVector, b: &ApVector) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty AP vectors".into()));
    }
    let p = normalized(&a.scores);
    let q = normalized(&b.scores);
    // (p - q) * ln(p / q) sums both directions at once and is >= 0 termwise
    let d: f64 = p.iter().zip(&q).map(|(&pi, &qi)| (pi - qi) * (pi / qi).ln()).sum();
    Ok(d.max(0.0))
}

/// Standard cosine; embeddings may be negative so the range is [-1, 1].
pub fn embedding_cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    check_len(u.len(), v.len())?;
    cosine(u.iter().zip(v).map(|(&x, &y)| (f64::from(x), f64::from(y))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NeuronBlock, NeuronMap, Pooling, Sublayer};
    use crate::rng::SeedPath;
    use rand::Rng;
    use std::sync::Arc;

    pub(crate) fn apv(scores: Vec<f32>) -> ApVector {
        let map = Arc::new(
            NeuronMap::new(vec![NeuronBlock {
                layer: 0,
                sublayer: Sublayer::Mlp,
                units: scores.len() as u32,
            }])
            .unwrap(),
        );
        ApVector::new("c", "k", Pooling::Max, map, scores, 1, 1).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = apv(vec![0.3, 0.7, 0.1]);
        assert!((ap_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let x = apv(vec![1.0, 0.0]);
        let y = apv(vec![0.0, 1.0]);
        assert_eq!(ap_cosine(&x, &y).unwrap(), 0.0);
        assert!(matches!(ap_cosine(&apv(vec![0.0, 0.0]), &x), Err(Error::ZeroVector)));
    }

    #[test]
    fn negadj_examples() {
        let a = apv(vec![0.9, 0.5]);
        let b = apv(vec![0.5, 0.1]);
        assert_eq!(negadj_cosine(&a, &b, NegAdjForm::AbsDeviation).unwrap(), 0.0);
        assert!((negadj_cosine(&a, &a, NegAdjForm::AbsDeviation).unwrap() - 1.0).abs() < 1e-12);
        let chance = apv(vec![0.5, 0.5]);
        assert!(matches!(negadj_cosine(&chance, &a, NegAdjForm::AbsDeviation), Err(Error::ZeroVector)));
    }

    #[test]
    fn negadj_matches_transform_then_cosine() {
        let mut rng = SeedPath::root(13).rng();
        let a = apv((0..500).map(|_| rng.random::<f32>()).collect());
        let b = apv((0..500).map(|_| rng.random::<f32>()).collect());
        let ta: Vec<f32> = a.scores.iter().map(|&x| (f64::from(x) - 0.5).abs() as f32).collect();
        let tb: Vec<f32> = b.scores.iter().map(|&x| (f64::from(x) - 0.5).abs() as f32).collect();
        let two_step = ap_cosine(&apv(ta), &apv(tb)).unwrap();
        // f32 rounding of the transformed values bounds the agreement
        assert!((negadj_cosine(&a, &b, NegAdjForm::AbsDeviation).unwrap() - two_step).abs() < 1e-6);
    }

    #[test]
    fn negadj_form_parses() {
        assert_eq!("abs-minus-half".parse::<NegAdjForm>().unwrap(), NegAdjForm::AbsMinusHalf);
        assert_eq!(NegAdjForm::AbsMinusHalf.apply(0.2), -0.3);
        assert!("abs".parse::<NegAdjForm>().is_err());
    }

    #[test]
    fn kl_examples() {
        let a = apv(vec![0.2, 0.9, 0.4]);
        assert_eq!(symmetric_kl(&a, &a).unwrap(), 0.0);
        let p = apv(vec![1.0, 0.0]);
        let q = apv(vec![0.0, 1.0]);
        // direct summation at eps = 1e-12
        let eps = 1e-12f64;
        let z = 1.0 + 2.0 * eps;
        let (p1, p2) = ((1.0 + eps) / z, eps / z);
        let (q1, q2) = (eps / z, (1.0 + eps) / z);
        let kl_pq = p1 * (p1 / q1).ln() + p2 * (p2 / q2).ln();
        let kl_qp = q1 * (q1 / p1).ln() + q2 * (q2 / p2).ln();
        let got = symmetric_kl(&p, &q).unwrap();
        assert!((got - (kl_pq + kl_qp)).abs() < 1e-10, "{got}");
        assert!((got - 2.0 * (1.0f64 / eps).ln()).abs() < 1e-6);
    }

    #[test]
    fn embedding_examples() {
        let u = [0.3f32, -1.2, 2.0];
        let v: Vec<f32> = u.iter().map(|x| -x).collect();
        assert!((embedding_cosine(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((embedding_cosine(&u, &v).unwrap() + 1.0).abs() < 1e-15);
        assert!(embedding_cosine(&u, &[1.0, 2.0]).is_err());
        assert!(embedding_cosine(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn embedding_matches_naive_loop() {
        let mut rng = SeedPath::root(12).rng();
        let u: Vec<f32> = (0..128).map(|_| rng.random::<f32>() - 0.5).collect();
        let v: Vec<f32> = (0..128).map(|_| rng.random::<f32>() - 0.5).collect();
        let mut dot = 0.0f64;
        let mut nu = 0.0f64;
        let mut nv = 0.0f64;
        for i in 0..128 {
            dot += f64::from(u[i]) * f64::from(v[i]);
            nu += f64::from(u[i]) * f64::from(u[i]);
            nv += f64::from(v[i]) * f64::from(v[i]);
        }
        let want = dot / (nu.sqrt() * nv.sqrt());
        assert!((embedding_cosine(&u, &v).unwrap() - want).abs() < 1e-12);
    }
}
