use super::elbo::{elbo_loss_and_grad, ElboNoise};
use super::MvnModel;
use crate::error::{Error, Result};
use crate::numeric::{AdamState, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            lr: 1e-5,
            batch_size: 64,
            seed: 0,
            latent_dim: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if self.latent_dim == 0 {
            return Err(Error::arg("latent dimension must be positive"));
        }
        Ok(())
    }
}

/// Per-epoch subject-averaged loss terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub total: Vec<f64>,
    /// `reconstruction[epoch][modality]`
    pub reconstruction: Vec<Vec<f64>>,
    pub kl: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }
}

/// Mini-batch Adam on the negative ELBO.
///
/// Each epoch shuffles the rows with the `(seed, "train/epoch<e>")` stream
/// and draws sampling noise from `(seed, "train/noise")`. The last short
/// batch is kept; epoch losses weight each batch by its size.
pub fn train(model: &MvnModel, xs: &[Matrix], cov: &Matrix, cfg: &TrainConfig) -> Result<(MvnModel, LossTrace)> {
    cfg.validate()?;
    if cfg.latent_dim != model.latent_dim {
        return Err(Error::arg(format!(
            "training config latent dimension {} does not match model {}",
            cfg.latent_dim, model.latent_dim
        )));
    }
    let n = cov.rows();
    if n == 0 {
        return Err(Error::arg("cannot train on an empty cohort"));
    }
    if xs.len() != model.n_modalities() || xs.iter().any(|x| x.rows() != n) {
        return Err(Error::arg("training matrices are not aligned with the covariates"));
    }

    let mut model = model.clone();
    let mut trace = LossTrace::default();
    if cfg.epochs == 0 {
        return Ok((model, trace));
    }
    let mut adam = AdamState::new(&model.params, cfg.lr);
    let root = RngStream::new(cfg.seed, "train");
    let mut noise_rng = root.substream("noise");

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        root.substream(&format!("epoch{epoch}")).shuffle(&mut order);

        let mut total = 0.0;
        let mut kl = 0.0;
        let mut recon = vec![0.0; model.n_modalities()];
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<Matrix> = xs.iter().map(|x| x.select_rows(batch)).collect();
            let bc = cov.select_rows(batch);
            let noise = ElboNoise::draw(&model, batch.len(), &mut noise_rng)?;
            let (terms, grads) = elbo_loss_and_grad(&model, &bx, &bc, &noise).map_err(|e| {
                Error::Training {
                    epoch,
                    message: e.to_string(),
                }
            })?;
            let w = batch.len() as f64 / n as f64;
            total += w * terms.total;
            kl += w * terms.kl;
            for (r, t) in recon.iter_mut().zip(&terms.reconstruction) {
                *r += w * t;
            }
            adam.step(&mut model.params, &grads).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        }
        trace.total.push(total);
        trace.kl.push(kl);
        trace.reconstruction.push(recon);
    }
    Ok((model, trace))
}
