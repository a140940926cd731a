//! Diagonal-Gaussian algebra used by the posterior aggregation layer.

use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// Log-variance values are clamped to this range before exponentiation.
pub const LOG_VARIANCE_CLAMP: f64 = 20.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::dim(format!(
                "mean has {} entries but variance has {}",
                mean.len(),
                variance.len()
            )));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::numeric(format!("non-finite mean at dimension {i}")));
        }
        if let Some(i) = variance.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::numeric(format!(
                "variance at dimension {i} is {} (must be positive and finite)",
                variance[i]
            )));
        }
        Ok(DiagonalGaussian { mean, variance })
    }

    /// `N(0, I)` of dimension `d`.
    pub fn standard(d: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; d],
            variance: vec![1.0; d],
        }
    }

    /// Builds a Gaussian from encoder heads; log-variance is clamped to
    /// `±LOG_VARIANCE_CLAMP` first.
    pub fn from_log_variance(mean: Vec<f64>, log_variance: &[f64]) -> Result<Self> {
        let variance = log_variance
            .iter()
            .map(|lv| lv.clamp(-LOG_VARIANCE_CLAMP, LOG_VARIANCE_CLAMP).exp())
            .collect();
        DiagonalGaussian::new(mean, variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    /// `KL(self ‖ N(0, I)) = ½ Σ (σ² + μ² − 1 − ln σ²)`.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| v + m * m - 1.0 - v.ln())
            .sum::<f64>()
    }

    /// `mean + √variance ⊙ eps` for a caller-supplied standard-normal vector.
    pub fn transform_noise(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .zip(eps)
            .map(|((m, v), e)| m + v.sqrt() * e)
            .collect()
    }

    /// Reparameterized draw `z = μ + σ ⊙ ε`, `ε ~ N(0, I)` from `rng`.
    pub fn reparameterize(&self, rng: &mut RngStream) -> Vec<f64> {
        let eps = rng.normals(self.dim());
        self.transform_noise(&eps)
    }
}

/// Free-function form of [`DiagonalGaussian::kl_to_standard_normal`].
pub fn kl_to_standard_normal(g: &DiagonalGaussian) -> f64 {
    g.kl_to_standard_normal()
}

/// Precision-weighted product of Gaussian experts, optionally including the
/// standard-normal prior as an extra factor.
pub fn product_of_gaussians(
    experts: &[DiagonalGaussian],
    include_prior: bool,
) -> Result<DiagonalGaussian> {
    product_of_gaussians_scaled(experts, 1.0, include_prior)
}

/// As [`product_of_gaussians`], with every expert precision multiplied by
/// `precision_scale` (the prior keeps unit precision).
pub fn product_of_gaussians_scaled(
    experts: &[DiagonalGaussian],
    precision_scale: f64,
    include_prior: bool,
) -> Result<DiagonalGaussian> {
    if experts.is_empty() {
        if include_prior {
            return Err(Error::arg(
                "product with only the prior needs a dimension; use DiagonalGaussian::standard",
            ));
        }
        return Err(Error::arg("product of an empty expert list without prior"));
    }
    let d = experts[0].dim();
    if let Some(e) = experts.iter().find(|e| e.dim() != d) {
        return Err(Error::dim(format!(
            "experts have dimensions {d} and {}",
            e.dim()
        )));
    }
    if experts.len() == 1 && !include_prior && precision_scale == 1.0 {
        return Ok(experts[0].clone());
    }
    let mut precision = vec![if include_prior { 1.0 } else { 0.0 }; d];
    let mut weighted_mean = vec![0.0; d];
    for e in experts {
        for j in 0..d {
            let p = precision_scale / e.variance[j];
            precision[j] += p;
            weighted_mean[j] += p * e.mean[j];
        }
    }
    let variance: Vec<f64> = precision.iter().map(|p| 1.0 / p).collect();
    let mean = weighted_mean
        .iter()
        .zip(&variance)
        .map(|(wm, v)| wm * v)
        .collect();
    DiagonalGaussian::new(mean, variance)
}

/// Finite mixture of equal-dimension diagonal Gaussians.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    components: Vec<DiagonalGaussian>,
    weights: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(components: Vec<DiagonalGaussian>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::arg("mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::dim(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::dim("mixture components differ in dimension"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::arg("mixture weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(GaussianMixture {
            components,
            weights,
        })
    }

    /// Equal weights `1/K`.
    pub fn uniform(components: Vec<DiagonalGaussian>) -> Result<Self> {
        let k = components.len();
        GaussianMixture::new(components, vec![1.0 / k as f64; k])
    }

    pub fn components(&self) -> &[DiagonalGaussian] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// `Σ wₖ μₖ`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (c, w) in self.components.iter().zip(&self.weights) {
            for (o, m) in out.iter_mut().zip(c.mean()) {
                *o += w * m;
            }
        }
        out
    }

    /// Picks component `k` with probability `wₖ`.
    pub fn pick_component(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    /// Draws a component, then reparameterizes it.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let k = self.pick_component(rng);
        self.components[k].reparameterize(rng)
    }

    /// `Σ wₖ KL(componentₖ ‖ N(0, I))`, an upper bound on the mixture KL.
    pub fn kl_bound(&self) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| w * c.kl_to_standard_normal())
            .sum()
    }
}

/// Mixture mean; sampling goes through [`GaussianMixture::sample`].
pub fn mixture_stats(m: &GaussianMixture) -> Vec<f64> {
    m.mean()
}

pub fn kl_mixture_bound(m: &GaussianMixture) -> f64 {
    m.kl_bound()
}
