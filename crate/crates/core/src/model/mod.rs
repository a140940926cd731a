//! Conditional multimodal VAE: modality-specific encoders and decoders
//! around a shared latent space, trained on the negative ELBO.
//!
//! Encoders see `[features | covariates]` and emit a mean head and a
//! log-variance head from a shared trunk of leaky-ReLU layers. Decoders see
//! `[z | covariates]`, mirror the encoder's hidden sizes and end in a linear
//! layer. Gradients are derived by hand for this fixed architecture and are
//! checked against finite differences in the test suite.

mod checkpoint;
mod elbo;
mod inference;
mod network;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use elbo::{elbo_loss, elbo_loss_and_grad, elbo_with_noise, ElboNoise, LossTerms};
pub use inference::{
    decode_selected_dims, joint_latent_points, joint_posteriors, reconstruction_errors,
};
pub(crate) use inference::{mask_latent, squared_errors_from_latent};
pub use network::{decode, encode, LEAKY_SLOPE};
pub use train::{train, LossTrace, TrainConfig};

use crate::aggregation::AggregationStrategy;
use crate::error::{Error, Result};
use crate::numeric::{ParamSet, RngStream};

/// Architecture of one input modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityConfig {
    pub name: String,
    pub input_dim: usize,
    /// Encoder hidden sizes; the decoder uses them in reverse.
    pub hidden_dims: Vec<usize>,
}

impl ModalityConfig {
    pub fn new(name: impl Into<String>, input_dim: usize, hidden_dims: Vec<usize>) -> Result<Self> {
        let cfg = ModalityConfig {
            name: name.into(),
            input_dim,
            hidden_dims,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 90 regions with hidden sizes `[64, 32]`.
    pub fn regional(name: impl Into<String>) -> Self {
        ModalityConfig {
            name: name.into(),
            input_dim: 90,
            hidden_dims: vec![64, 32],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::arg(format!("modality {} has no input features", self.name)));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::arg(format!(
                "modality {} needs non-empty, positive hidden sizes",
                self.name
            )));
        }
        Ok(())
    }
}

/// Multimodal VAE: architecture, aggregation strategy and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MvnModel {
    pub modalities: Vec<ModalityConfig>,
    pub latent_dim: usize,
    pub covariate_dim: usize,
    pub strategy: AggregationStrategy,
    /// Whether the MoPoE mixture carries the prior as its empty-subset
    /// component.
    pub mopoe_include_empty: bool,
    pub params: ParamSet,
}

impl MvnModel {
    /// Glorot-initialized model; every block draws from its own sub-stream
    /// of `(seed, "init")`.
    pub fn new(
        modalities: Vec<ModalityConfig>,
        latent_dim: usize,
        covariate_dim: usize,
        strategy: AggregationStrategy,
        seed: u64,
    ) -> Result<Self> {
        let mut model = MvnModel::zeroed(modalities, latent_dim, covariate_dim, strategy)?;
        let rng = RngStream::new(seed, "init");
        for (name, block) in model.params.iter_mut() {
            if name.ends_with(".w") {
                *block = ParamSet::glorot_block(&rng, name, block.rows(), block.cols());
            }
        }
        Ok(model)
    }

    /// Model with every weight and bias set to zero.
    pub fn zeroed(
        modalities: Vec<ModalityConfig>,
        latent_dim: usize,
        covariate_dim: usize,
        strategy: AggregationStrategy,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::arg("model needs at least one modality"));
        }
        if latent_dim == 0 {
            return Err(Error::arg("latent dimension must be positive"));
        }
        for m in &modalities {
            m.validate()?;
        }
        let params = network::zero_params(&modalities, latent_dim, covariate_dim)?;
        Ok(MvnModel {
            modalities,
            latent_dim,
            covariate_dim,
            strategy,
            mopoe_include_empty: true,
            params,
        })
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// Total feature count across modalities.
    pub fn total_features(&self) -> usize {
        self.modalities.iter().map(|m| m.input_dim).sum()
    }

    /// Replaces the parameters after checking names and shapes.
    pub fn with_params(mut self, params: ParamSet) -> Result<Self> {
        self.params.check_congruent(&params)?;
        self.params = params;
        Ok(self)
    }
}
