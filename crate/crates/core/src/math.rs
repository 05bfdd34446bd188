//! Vector and distribution primitives.
//!
//! Every reduction sums left to right in index order so results are
//! bit-reproducible across runs and platforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σ p = 1` when validating a [`Distribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// A fixed-dimension vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidVector("dimension must be at least 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVector(format!(
                "entry {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        dot_unchecked(&self.0, &self.0).sqrt()
    }

    /// Multiplies every entry by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * c).collect())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A discrete probability distribution over answer options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {i} is {} (must be finite and non-negative)",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDistribution("no outcomes".into()));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the most probable outcome; the smallest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

/// Inner product `Σ aᵢbᵢ`.
pub fn dot(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    Ok(dot_unchecked(&a.0, &b.0))
}

/// Cosine similarity. Both inputs must have non-zero norm.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let na = a.norm();
    if na == 0.0 {
        return Err(Error::ZeroNorm("left operand".into()));
    }
    let nb = b.norm();
    if nb == 0.0 {
        return Err(Error::ZeroNorm("right operand".into()));
    }
    Ok(dot_unchecked(&a.0, &b.0) / (na * nb))
}

/// Elementwise arithmetic mean.
///
/// Uses the running-mean recurrence `m ← m + (x − m)/i`, so pooling `k`
/// copies of one vector returns that vector bit-exactly.
pub fn mean_pool(vs: &[Embedding]) -> Result<Embedding> {
    let first = vs
        .first()
        .ok_or(Error::EmptyInput("mean_pool of no vectors"))?;
    let mut mean = first.0.clone();
    for (i, v) in vs.iter().enumerate().skip(1) {
        check_dim(mean.len(), v.dim())?;
        let count = (i + 1) as f64;
        for (m, x) in mean.iter_mut().zip(&v.0) {
            *m += (x - *m) / count;
        }
    }
    Ok(Embedding(mean))
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(d: &Distribution) -> f64 {
    let mut h = 0.0;
    for &p in &d.0 {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h.max(0.0)
}

/// Entropy of a raw probability vector, validating it first.
pub fn entropy_of(probs: &[f64]) -> Result<f64> {
    Distribution::new(probs.to_vec()).map(|d| entropy(&d))
}

/// `softmax(logits / tau)`, computed with the max-shift for stability.
pub fn softmax(logits: &[f64], tau: f64) -> Result<Distribution> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax of no logits"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidParameter("non-finite logit".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Distribution::new(exps.into_iter().map(|e| e / total).collect())
}
