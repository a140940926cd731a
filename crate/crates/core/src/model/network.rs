use super::MvnModel;
use crate::distributions::{DiagonalGaussian, LOG_VARIANCE_CLAMP};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamSet};

/// Negative-side slope of the hidden-layer activation.
pub const LEAKY_SLOPE: f64 = 0.01;

pub(crate) fn enc_layer(m: usize, l: usize) -> String {
    format!("m{m}.enc.{l}")
}

pub(crate) fn enc_mu(m: usize) -> String {
    format!("m{m}.enc.mu")
}

pub(crate) fn enc_lv(m: usize) -> String {
    format!("m{m}.enc.lv")
}

pub(crate) fn dec_layer(m: usize, l: usize) -> String {
    format!("m{m}.dec.{l}")
}

fn insert_layer(p: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    p.insert(format!("{prefix}.w"), Matrix::zeros(fan_in, fan_out))?;
    p.insert(format!("{prefix}.b"), Matrix::zeros(1, fan_out))
}

pub(crate) fn zero_params(
    modalities: &[super::ModalityConfig],
    latent_dim: usize,
    covariate_dim: usize,
) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    for (m, cfg) in modalities.iter().enumerate() {
        let mut fan_in = cfg.input_dim + covariate_dim;
        for (l, &h) in cfg.hidden_dims.iter().enumerate() {
            insert_layer(&mut p, &enc_layer(m, l), fan_in, h)?;
            fan_in = h;
        }
        insert_layer(&mut p, &enc_mu(m), fan_in, latent_dim)?;
        insert_layer(&mut p, &enc_lv(m), fan_in, latent_dim)?;

        let mut fan_in = latent_dim + covariate_dim;
        for (l, &h) in cfg.hidden_dims.iter().rev().enumerate() {
            insert_layer(&mut p, &dec_layer(m, l), fan_in, h)?;
            fan_in = h;
        }
        insert_layer(&mut p, &dec_layer(m, cfg.hidden_dims.len()), fan_in, cfg.input_dim)?;
    }
    Ok(p)
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn dense(params: &ParamSet, prefix: &str, input: &Matrix) -> Result<Matrix> {
    let mut out = input.matmul(params.get(&format!("{prefix}.w"))?)?;
    out.add_row_broadcast(params.get(&format!("{prefix}.b"))?)?;
    Ok(out)
}

/// Accumulates weight and bias gradients of a dense layer and returns the
/// gradient with respect to its input.
fn dense_backward(
    params: &ParamSet,
    grads: &mut ParamSet,
    prefix: &str,
    input: &Matrix,
    d_out: &Matrix,
) -> Result<Matrix> {
    let wname = format!("{prefix}.w");
    let bname = format!("{prefix}.b");
    grads.get_mut(&wname)?.add_assign(&input.t_matmul(d_out)?)?;
    grads.get_mut(&bname)?.add_assign(&d_out.column_sums())?;
    d_out.matmul_t(params.get(&wname)?)
}

/// Forward activations of a leaky-ReLU stack.
pub(crate) struct StackCache {
    prefixes: Vec<String>,
    /// Input of each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

impl StackCache {
    fn output(&self) -> Matrix {
        let last = self.pre.last().expect("non-empty stack");
        let mut out = last.clone();
        out.data_mut().iter_mut().for_each(|v| *v = leaky(*v));
        out
    }
}

fn stack_forward(params: &ParamSet, prefixes: Vec<String>, input: Matrix) -> Result<StackCache> {
    let mut inputs = Vec::with_capacity(prefixes.len());
    let mut pre = Vec::with_capacity(prefixes.len());
    let mut a = input;
    for prefix in &prefixes {
        let z = dense(params, prefix, &a)?;
        let mut next = z.clone();
        next.data_mut().iter_mut().for_each(|v| *v = leaky(*v));
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    Ok(StackCache {
        prefixes,
        inputs,
        pre,
    })
}

/// Backpropagates `d_out` (gradient w.r.t. the stack output) and returns the
/// gradient w.r.t. the stack input.
fn stack_backward(
    params: &ParamSet,
    grads: &mut ParamSet,
    cache: &StackCache,
    d_out: Matrix,
) -> Result<Matrix> {
    let mut d = d_out;
    for l in (0..cache.prefixes.len()).rev() {
        for (g, z) in d.data_mut().iter_mut().zip(cache.pre[l].data()) {
            if *z <= 0.0 {
                *g *= LEAKY_SLOPE;
            }
        }
        d = dense_backward(params, grads, &cache.prefixes[l], &cache.inputs[l], &d)?;
    }
    Ok(d)
}

/// Encoder forward state for one modality over a batch.
pub(crate) struct EncoderCache {
    trunk: StackCache,
    hidden: Matrix,
    pub mean: Matrix,
    pub log_var_raw: Matrix,
}

impl EncoderCache {
    pub fn posterior(&self, row: usize) -> Result<DiagonalGaussian> {
        DiagonalGaussian::from_log_variance(self.mean.row(row).to_vec(), self.log_var_raw.row(row))
    }
}

fn check_batch(model: &MvnModel, modality: usize, x: &Matrix, cov: &Matrix) -> Result<()> {
    let cfg = model
        .modalities
        .get(modality)
        .ok_or_else(|| Error::arg(format!("no modality {modality}")))?;
    if x.cols() != cfg.input_dim {
        return Err(Error::arg(format!(
            "modality {} expects {} features, got {}",
            cfg.name,
            cfg.input_dim,
            x.cols()
        )));
    }
    if cov.cols() != model.covariate_dim || cov.rows() != x.rows() {
        return Err(Error::arg(format!(
            "covariates are {}x{}, expected {}x{}",
            cov.rows(),
            cov.cols(),
            x.rows(),
            model.covariate_dim
        )));
    }
    Ok(())
}

pub(crate) fn encoder_forward(
    model: &MvnModel,
    modality: usize,
    x: &Matrix,
    cov: &Matrix,
) -> Result<EncoderCache> {
    check_batch(model, modality, x, cov)?;
    let depth = model.modalities[modality].hidden_dims.len();
    let prefixes = (0..depth).map(|l| enc_layer(modality, l)).collect();
    let trunk = stack_forward(&model.params, prefixes, x.hcat(cov)?)?;
    let hidden = trunk.output();
    let mean = dense(&model.params, &enc_mu(modality), &hidden)?;
    let log_var_raw = dense(&model.params, &enc_lv(modality), &hidden)?;
    if !mean.is_finite() || !log_var_raw.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite encoder output for modality {}",
            model.modalities[modality].name
        )));
    }
    Ok(EncoderCache {
        trunk,
        hidden,
        mean,
        log_var_raw,
    })
}

/// `d_mean` and `d_log_var` are gradients w.r.t. the clamped log-variance;
/// entries outside the clamp window receive zero gradient.
pub(crate) fn encoder_backward(
    model: &MvnModel,
    grads: &mut ParamSet,
    modality: usize,
    cache: &EncoderCache,
    d_mean: &Matrix,
    d_log_var: &Matrix,
) -> Result<()> {
    let mut d_raw = d_log_var.clone();
    for (g, lv) in d_raw.data_mut().iter_mut().zip(cache.log_var_raw.data()) {
        if lv.abs() >= LOG_VARIANCE_CLAMP {
            *g = 0.0;
        }
    }
    let mut d_hidden =
        dense_backward(&model.params, grads, &enc_mu(modality), &cache.hidden, d_mean)?;
    d_hidden.add_assign(&dense_backward(
        &model.params,
        grads,
        &enc_lv(modality),
        &cache.hidden,
        &d_raw,
    )?)?;
    stack_backward(&model.params, grads, &cache.trunk, d_hidden)?;
    Ok(())
}

pub(crate) struct DecoderCache {
    trunk: StackCache,
    hidden: Matrix,
    pub output: Matrix,
}

pub(crate) fn decoder_forward(
    model: &MvnModel,
    modality: usize,
    z: &Matrix,
    cov: &Matrix,
) -> Result<DecoderCache> {
    let cfg = model
        .modalities
        .get(modality)
        .ok_or_else(|| Error::arg(format!("no modality {modality}")))?;
    if z.cols() != model.latent_dim || cov.cols() != model.covariate_dim || cov.rows() != z.rows()
    {
        return Err(Error::arg(format!(
            "decoder expects latent width {} and covariate width {}, got {} and {}",
            model.latent_dim,
            model.covariate_dim,
            z.cols(),
            cov.cols()
        )));
    }
    let depth = cfg.hidden_dims.len();
    let prefixes = (0..depth).map(|l| dec_layer(modality, l)).collect();
    let trunk = stack_forward(&model.params, prefixes, z.hcat(cov)?)?;
    let hidden = trunk.output();
    let output = dense(&model.params, &dec_layer(modality, depth), &hidden)?;
    if !output.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite decoder output for modality {}",
            cfg.name
        )));
    }
    Ok(DecoderCache {
        trunk,
        hidden,
        output,
    })
}

/// Returns the gradient w.r.t. the latent block of the decoder input.
pub(crate) fn decoder_backward(
    model: &MvnModel,
    grads: &mut ParamSet,
    modality: usize,
    cache: &DecoderCache,
    d_output: &Matrix,
) -> Result<Matrix> {
    let depth = model.modalities[modality].hidden_dims.len();
    let d_hidden = dense_backward(
        &model.params,
        grads,
        &dec_layer(modality, depth),
        &cache.hidden,
        d_output,
    )?;
    let d_input = stack_backward(&model.params, grads, &cache.trunk, d_hidden)?;
    Ok(d_input.column_block(0, model.latent_dim))
}

/// Unimodal posterior `q(z | x_m, c)` for one subject.
pub fn encode(model: &MvnModel, modality: usize, x: &[f64], cov: &[f64]) -> Result<DiagonalGaussian> {
    let cache = encoder_forward(model, modality, &Matrix::row_vector(x), &Matrix::row_vector(cov))?;
    cache.posterior(0)
}

/// Mean reconstruction of one modality from a latent vector and covariates.
pub fn decode(model: &MvnModel, modality: usize, z: &[f64], cov: &[f64]) -> Result<Vec<f64>> {
    let cache = decoder_forward(model, modality, &Matrix::row_vector(z), &Matrix::row_vector(cov))?;
    Ok(cache.output.into_data())
}
