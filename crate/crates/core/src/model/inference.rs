use super::network::{decoder_forward, encoder_forward};
use super::MvnModel;
use crate::aggregation::{aggregate_with, joint_latent_point, JointPosterior, LatentMode};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, RngStream};

/// Joint posterior for every row.
pub fn joint_posteriors(model: &MvnModel, xs: &[Matrix], cov: &Matrix) -> Result<Vec<JointPosterior>> {
    if xs.len() != model.n_modalities() {
        return Err(Error::arg(format!(
            "expected {} modality matrices, got {}",
            model.n_modalities(),
            xs.len()
        )));
    }
    let encoders = xs
        .iter()
        .enumerate()
        .map(|(m, x)| encoder_forward(model, m, x, cov))
        .collect::<Result<Vec<_>>>()?;
    (0..cov.rows())
        .map(|s| {
            let unimodal = encoders
                .iter()
                .map(|e| e.posterior(s))
                .collect::<Result<Vec<_>>>()?;
            aggregate_with(&unimodal, model.strategy, model.mopoe_include_empty)
        })
        .collect()
}

/// One latent point per row (n × latent_dim). Sample mode draws subject
/// `s` from the `subject<s>` sub-stream of `rng`.
pub fn joint_latent_points(
    model: &MvnModel,
    xs: &[Matrix],
    cov: &Matrix,
    mode: LatentMode,
    rng: &RngStream,
) -> Result<Matrix> {
    let posteriors = joint_posteriors(model, xs, cov)?;
    let mut z = Matrix::zeros(posteriors.len(), model.latent_dim);
    for (s, jp) in posteriors.iter().enumerate() {
        let mut sub = rng.substream(&format!("subject{s}"));
        z.row_mut(s)
            .copy_from_slice(&joint_latent_point(jp, mode, &mut sub));
    }
    Ok(z)
}

/// Per-row squared reconstruction error of every feature, modalities
/// concatenated in order (n × total features).
pub fn reconstruction_errors(
    model: &MvnModel,
    xs: &[Matrix],
    cov: &Matrix,
    mode: LatentMode,
    rng: &RngStream,
) -> Result<Matrix> {
    let z = joint_latent_points(model, xs, cov, mode, rng)?;
    squared_errors_from_latent(model, xs, &z, cov)
}

pub(crate) fn squared_errors_from_latent(
    model: &MvnModel,
    xs: &[Matrix],
    z: &Matrix,
    cov: &Matrix,
) -> Result<Matrix> {
    let mut out: Option<Matrix> = None;
    for (m, x) in xs.iter().enumerate() {
        let recon = decoder_forward(model, m, z, cov)?.output;
        let mut err = recon;
        for (e, v) in err.data_mut().iter_mut().zip(x.data()) {
            *e = (*e - v) * (*e - v);
        }
        out = Some(match out {
            None => err,
            Some(prev) => prev.hcat(&err)?,
        });
    }
    out.ok_or_else(|| Error::arg("model has no modalities"))
}

/// Decodes `z` with every dimension outside `selected` (0-based) and every
/// covariate set to zero. Returns one reconstruction per modality.
pub fn decode_selected_dims(model: &MvnModel, z: &[f64], selected: &[usize]) -> Result<Vec<Vec<f64>>> {
    let masked = mask_latent(model, z, selected)?;
    let z = Matrix::row_vector(&masked);
    let cov = Matrix::zeros(1, model.covariate_dim);
    (0..model.n_modalities())
        .map(|m| Ok(decoder_forward(model, m, &z, &cov)?.output.into_data()))
        .collect()
}

pub(crate) fn mask_latent(model: &MvnModel, z: &[f64], selected: &[usize]) -> Result<Vec<f64>> {
    if z.len() != model.latent_dim {
        return Err(Error::arg(format!(
            "latent vector has {} entries, model uses {}",
            z.len(),
            model.latent_dim
        )));
    }
    if let Some(&bad) = selected.iter().find(|&&j| j >= model.latent_dim) {
        return Err(Error::arg(format!(
            "selected latent dimension {bad} is out of range for latent size {}",
            model.latent_dim
        )));
    }
    let mut masked = vec![0.0; z.len()];
    for &j in selected {
        masked[j] = z[j];
    }
    Ok(masked)
}
