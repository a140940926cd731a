//! Negative ELBO and its hand-derived gradient.
//!
//! Per subject the loss is `Σₘ ‖xₘ − x̂ₘ‖² + KL`, averaged over the batch.
//! `x̂` decodes one reparameterized draw from a single mixture component
//! chosen per subject; the KL term is the closed form for a single Gaussian
//! and the convexity bound `Σ wₖ KLₖ` for mixtures.

use super::network::{decoder_backward, decoder_forward, encoder_backward, encoder_forward};
use super::MvnModel;
use crate::aggregation::{aggregate_with, component_specs, ComponentSpec};
use crate::distributions::DiagonalGaussian;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet, RngStream};

/// Sampling noise for one batch: the mixture component used for each
/// subject's reconstruction and the standard-normal draw behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct ElboNoise {
    pub component: Vec<usize>,
    pub eps: Matrix,
}

impl ElboNoise {
    pub fn draw(model: &MvnModel, n: usize, rng: &mut RngStream) -> Result<Self> {
        let k = component_specs(model.n_modalities(), model.strategy, model.mopoe_include_empty)?.len();
        let mut component = Vec::with_capacity(n);
        let mut eps = Matrix::zeros(n, model.latent_dim);
        for s in 0..n {
            component.push(if k > 1 { rng.below(k) } else { 0 });
            for v in eps.row_mut(s) {
                *v = rng.normal();
            }
        }
        Ok(ElboNoise { component, eps })
    }
}

/// Batch-averaged loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub reconstruction: Vec<f64>,
    pub kl: f64,
}

fn check_finite(terms: &LossTerms, model: &MvnModel) -> Result<()> {
    for (m, r) in terms.reconstruction.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite reconstruction term for modality {}",
                model.modalities[m].name
            )));
        }
    }
    if !terms.kl.is_finite() {
        return Err(Error::numeric("non-finite KL term"));
    }
    if !terms.total.is_finite() {
        return Err(Error::numeric("non-finite total loss"));
    }
    Ok(())
}

fn check_batch(model: &MvnModel, xs: &[Matrix], cov: &Matrix) -> Result<usize> {
    if xs.len() != model.n_modalities() {
        return Err(Error::arg(format!(
            "expected {} modality matrices, got {}",
            model.n_modalities(),
            xs.len()
        )));
    }
    let n = cov.rows();
    if let Some(x) = xs.iter().find(|x| x.rows() != n) {
        return Err(Error::arg(format!(
            "batch rows are not aligned ({} vs {n} covariate rows)",
            x.rows()
        )));
    }
    if n == 0 {
        return Err(Error::arg("empty batch"));
    }
    Ok(n)
}

/// Loss with noise drawn from `rng`.
pub fn elbo_loss(model: &MvnModel, xs: &[Matrix], cov: &Matrix, rng: &mut RngStream) -> Result<LossTerms> {
    let n = check_batch(model, xs, cov)?;
    let noise = ElboNoise::draw(model, n, rng)?;
    elbo_with_noise(model, xs, cov, &noise)
}

/// Loss for fixed noise.
pub fn elbo_with_noise(model: &MvnModel, xs: &[Matrix], cov: &Matrix, noise: &ElboNoise) -> Result<LossTerms> {
    Ok(forward_backward(model, xs, cov, noise, false)?.0)
}

/// Loss and parameter gradient for fixed noise.
pub fn elbo_loss_and_grad(
    model: &MvnModel,
    xs: &[Matrix],
    cov: &Matrix,
    noise: &ElboNoise,
) -> Result<(LossTerms, ParamSet)> {
    let (terms, grads) = forward_backward(model, xs, cov, noise, true)?;
    Ok((terms, grads.expect("gradient requested")))
}

/// Gradient of the loss w.r.t. one joint-posterior component.
struct ComponentGrad {
    mean: Vec<f64>,
    var: Vec<f64>,
}

fn forward_backward(
    model: &MvnModel,
    xs: &[Matrix],
    cov: &Matrix,
    noise: &ElboNoise,
    want_grad: bool,
) -> Result<(LossTerms, Option<ParamSet>)> {
    let n = check_batch(model, xs, cov)?;
    let d = model.latent_dim;
    let n_mod = model.n_modalities();
    if noise.component.len() != n || noise.eps.shape() != (n, d) {
        return Err(Error::arg("noise does not match the batch"));
    }
    let specs = component_specs(n_mod, model.strategy, model.mopoe_include_empty)?;
    let k = specs.len();
    let weight = 1.0 / k as f64;
    let inv_n = 1.0 / n as f64;

    let encoders = (0..n_mod)
        .map(|m| encoder_forward(model, m, &xs[m], cov))
        .collect::<Result<Vec<_>>>()?;

    let mut z = Matrix::zeros(n, d);
    let mut kl_total = 0.0;
    let mut posteriors = Vec::with_capacity(n);
    for s in 0..n {
        let unimodal = encoders
            .iter()
            .map(|e| e.posterior(s))
            .collect::<Result<Vec<_>>>()?;
        let joint = aggregate_with(&unimodal, model.strategy, model.mopoe_include_empty)?;
        kl_total += joint.kl();
        let comps: Vec<DiagonalGaussian> = joint.components().into_iter().cloned().collect();
        let c = noise.component[s];
        let chosen = comps
            .get(c)
            .ok_or_else(|| Error::arg(format!("noise selects component {c} of {k}")))?;
        z.row_mut(s)
            .copy_from_slice(&chosen.transform_noise(noise.eps.row(s)));
        posteriors.push((unimodal, comps));
    }

    let decoders = (0..n_mod)
        .map(|m| decoder_forward(model, m, &z, cov))
        .collect::<Result<Vec<_>>>()?;
    let reconstruction: Vec<f64> = decoders
        .iter()
        .zip(xs)
        .map(|(dec, x)| {
            dec.output
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * inv_n
        })
        .collect();
    let kl = kl_total * inv_n;
    let terms = LossTerms {
        total: reconstruction.iter().sum::<f64>() + kl,
        reconstruction,
        kl,
    };
    check_finite(&terms, model)?;
    if !want_grad {
        return Ok((terms, None));
    }

    let mut grads = model.params.zeros_like();

    // decoders → latent sample
    let mut d_z = Matrix::zeros(n, d);
    for (m, dec) in decoders.iter().enumerate() {
        let mut d_out = dec.output.clone();
        for (g, x) in d_out.data_mut().iter_mut().zip(xs[m].data()) {
            *g = 2.0 * (*g - x) * inv_n;
        }
        d_z.add_assign(&decoder_backward(model, &mut grads, m, dec, &d_out)?)?;
    }

    // latent sample and KL → components → unimodal experts
    let mut d_mean = vec![Matrix::zeros(n, d); n_mod];
    let mut d_logvar = vec![Matrix::zeros(n, d); n_mod];
    for (s, (unimodal, comps)) in posteriors.iter().enumerate() {
        let kl_weight = if k > 1 { weight } else { 1.0 };
        let mut comp_grads: Vec<ComponentGrad> = comps
            .iter()
            .map(|c| ComponentGrad {
                mean: c.mean().iter().map(|mu| kl_weight * mu * inv_n).collect(),
                var: c
                    .variance()
                    .iter()
                    .map(|v| kl_weight * 0.5 * (1.0 - 1.0 / v) * inv_n)
                    .collect(),
            })
            .collect();
        let c = noise.component[s];
        for j in 0..d {
            let g = d_z.get(s, j);
            comp_grads[c].mean[j] += g;
            comp_grads[c].var[j] += g * noise.eps.get(s, j) / (2.0 * comps[c].variance()[j].sqrt());
        }
        for ((spec, comp), cg) in specs.iter().zip(comps).zip(&comp_grads) {
            component_to_experts(spec, comp, cg, unimodal, s, &mut d_mean, &mut d_logvar);
        }
    }

    for (m, enc) in encoders.iter().enumerate() {
        encoder_backward(model, &mut grads, m, enc, &d_mean[m], &d_logvar[m])?;
    }
    Ok((terms, Some(grads)))
}

/// Chain rule through a precision-weighted product.
///
/// With `P = [prior] + Σ a·pᵢ`, `var = 1/P`, `μ = var·Σ a·pᵢ μᵢ` and
/// `pᵢ = exp(−lvᵢ)`:
/// `∂μ/∂μᵢ = a·pᵢ·var`, `∂μ/∂pᵢ = a(μᵢ − μ)·var`, `∂var/∂pᵢ = −a·var²`,
/// `∂pᵢ/∂lvᵢ = −pᵢ`.
fn component_to_experts(
    spec: &ComponentSpec,
    comp: &DiagonalGaussian,
    grad: &ComponentGrad,
    unimodal: &[DiagonalGaussian],
    row: usize,
    d_mean: &mut [Matrix],
    d_logvar: &mut [Matrix],
) {
    let a = spec.precision_scale;
    for &i in &spec.subset {
        let expert = &unimodal[i];
        for j in 0..comp.dim() {
            let var = comp.variance()[j];
            let mu = comp.mean()[j];
            let p_i = 1.0 / expert.variance()[j];
            let d_mu_i = grad.mean[j] * a * p_i * var;
            let d_p_i = grad.mean[j] * a * (expert.mean()[j] - mu) * var - grad.var[j] * a * var * var;
            let cur = d_mean[i].get(row, j);
            d_mean[i].set(row, j, cur + d_mu_i);
            let cur = d_logvar[i].get(row, j);
            d_logvar[i].set(row, j, cur - d_p_i * p_i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::AggregationStrategy;
    use crate::model::ModalityConfig;
    use crate::numeric::grad_check;

    fn toy_model(strategy: AggregationStrategy, seed: u64) -> MvnModel {
        MvnModel::new(
            vec![
                ModalityConfig::new("a", 4, vec![5, 3]).unwrap(),
                ModalityConfig::new("b", 3, vec![4, 3]).unwrap(),
            ],
            2,
            2,
            strategy,
            seed,
        )
        .unwrap()
    }

    fn toy_batch(n: usize, seed: u64) -> (Vec<Matrix>, Matrix) {
        let mut rng = RngStream::new(seed, "batch");
        let a = Matrix::from_vec(n, 4, rng.normals(n * 4)).unwrap();
        let b = Matrix::from_vec(n, 3, rng.normals(n * 3)).unwrap();
        let mut cov = Matrix::zeros(n, 2);
        for s in 0..n {
            cov.set(s, s % 2, 1.0);
        }
        (vec![a, b], cov)
    }

    #[test]
    fn gradients_match_finite_differences_for_every_strategy() {
        for strategy in AggregationStrategy::ALL {
            let model = toy_model(strategy, 17);
            let (xs, cov) = toy_batch(5, 2);
            let noise = ElboNoise::draw(&model, 5, &mut RngStream::new(3, "noise")).unwrap();
            let (_, grads) = elbo_loss_and_grad(&model, &xs, &cov, &noise).unwrap();
            let loss = |p: &ParamSet| {
                let m = model.clone().with_params(p.clone()).unwrap();
                elbo_with_noise(&m, &xs, &cov, &noise).unwrap().total
            };
            let report = grad_check(loss, &model.params, &grads, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{strategy}: {report:?}");
        }
    }

    #[test]
    fn zero_posterior_and_perfect_reconstruction_gives_zero() {
        let model = MvnModel::zeroed(
            vec![ModalityConfig::new("a", 3, vec![2]).unwrap()],
            2,
            1,
            AggregationStrategy::Moe,
        )
        .unwrap();
        let xs = vec![Matrix::zeros(4, 3)];
        let cov = Matrix::zeros(4, 1);
        let noise = ElboNoise::draw(&model, 4, &mut RngStream::new(0, "n")).unwrap();
        let t = elbo_with_noise(&model, &xs, &cov, &noise).unwrap();
        assert_eq!(t.total, 0.0);
        assert_eq!(t.kl, 0.0);
    }

    #[test]
    fn unit_shift_posterior_costs_half_per_dimension() {
        // mean head bias 1, decoder zero, data zero: KL = d/2, recon = 0
        let mut model = MvnModel::zeroed(
            vec![ModalityConfig::new("a", 3, vec![2]).unwrap()],
            4,
            1,
            AggregationStrategy::Moe,
        )
        .unwrap();
        model
            .params
            .get_mut("m0.enc.mu.b")
            .unwrap()
            .data_mut()
            .fill(1.0);
        let xs = vec![Matrix::zeros(3, 3)];
        let cov = Matrix::zeros(3, 1);
        let t = elbo_loss(&model, &xs, &cov, &mut RngStream::new(1, "n")).unwrap();
        assert!((t.total - 4.0 * 0.5).abs() < 1e-15);
        assert_eq!(t.reconstruction, vec![0.0]);
    }

    #[test]
    fn misaligned_batch_rejected() {
        let model = toy_model(AggregationStrategy::Poe, 1);
        let (mut xs, cov) = toy_batch(4, 1);
        xs[1] = Matrix::zeros(3, 3);
        assert!(elbo_loss(&model, &xs, &cov, &mut RngStream::new(0, "n")).is_err());
    }
}
