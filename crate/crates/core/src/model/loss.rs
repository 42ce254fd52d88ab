//! ELBO terms and their gradients.
//!
//! The reconstruction term is the mean squared error between the decoder
//! output and the encoder input, both in the compressed magnitude domain.

use super::{compressed, net, sample_standard_normal, ModelParams};
use crate::dataset::TrainingExample;
use crate::dsp::MagnitudeSpectrogram;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Closed-form `KL(N(mu, exp(logvar)) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter().zip(logvar).map(|(&m, &lv)| -0.5 * (1.0 + lv - m * m - lv.exp())).sum()
}

/// Mean over all bins of `(pred - target)^2`.
pub fn recon_loss(pred: &MagnitudeSpectrogram, target: &MagnitudeSpectrogram) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    Ok(mse(pred.data(), target.data()))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// `h = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::Shape(format!(
            "mu, logvar and eps lengths differ: {}, {}, {}",
            mu.len(),
            logvar.len(),
            eps.len()
        )));
    }
    Ok(mu.iter().zip(logvar).zip(eps).map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e).collect())
}

/// Loss value with its parts and the latent code that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboTerms {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
    pub eps: Vec<f64>,
    pub h: Vec<f64>,
}

/// Example already mapped to the compressed domain.
#[derive(Debug, Clone)]
pub(crate) struct PreparedExample {
    pub enc_input: Vec<f64>,
    pub dec_stereo: Vec<f64>,
    pub target: Vec<f64>,
}

impl PreparedExample {
    pub fn new(params: &ModelParams, ex: &TrainingExample) -> Result<Self> {
        params.check_input(&ex.enc_input, 5)?;
        params.check_input(&ex.target, 5)?;
        params.check_input(&ex.dec_stereo, 2)?;
        Ok(Self {
            enc_input: compressed(&ex.enc_input),
            dec_stereo: compressed(&ex.dec_stereo),
            target: compressed(&ex.target),
        })
    }
}

/// Loss for fixed noise `eps`; accumulates parameter gradients into `grads`
/// when given.
pub(crate) fn elbo_prepared(
    params: &ModelParams,
    ex: &PreparedExample,
    beta: f64,
    eps: &[f64],
    grads: Option<&mut [Vec<f64>]>,
) -> ElboTerms {
    let enc = net::encoder_forward(params, &ex.enc_input);
    let h: Vec<f64> = enc.mu.iter().zip(&enc.logvar).zip(eps).map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e).collect();
    let dec = net::decoder_forward(params, &ex.dec_stereo, &h);
    let recon = mse(&dec.output, &ex.target);
    let kl = kl_divergence(&enc.mu, &enc.logvar);
    if let Some(grads) = grads {
        let scale = 2.0 / dec.output.len() as f64;
        let dout: Vec<f64> = dec.output.iter().zip(&ex.target).map(|(p, t)| scale * (p - t)).collect();
        let dh = net::decoder_backward(params, grads, &dec, &dout);
        let dmu: Vec<f64> = dh.iter().zip(&enc.mu).map(|(&g, &m)| g + beta * m).collect();
        let dlogvar: Vec<f64> = dh
            .iter()
            .zip(&enc.logvar)
            .zip(eps)
            .map(|((&g, &lv), &e)| g * e * 0.5 * (0.5 * lv).exp() + beta * 0.5 * (lv.exp() - 1.0))
            .collect();
        net::encoder_backward(params, grads, &enc, &dmu, &dlogvar);
    }
    ElboTerms { loss: recon + beta * kl, recon, kl, mu: enc.mu, logvar: enc.logvar, eps: eps.to_vec(), h }
}

pub(crate) fn zero_grads(params: &ModelParams) -> Vec<Vec<f64>> {
    params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect()
}

/// Reconstruction plus `beta` times KL, with `eps` drawn from `rng`.
pub fn elbo_loss(params: &ModelParams, example: &TrainingExample, beta: f64, rng: &mut Rng) -> Result<ElboTerms> {
    check_beta(beta)?;
    let ex = PreparedExample::new(params, example)?;
    let eps = sample_standard_normal(params.config().latent_dim, rng);
    Ok(elbo_prepared(params, &ex, beta, &eps, None))
}

/// Loss and its gradient with respect to every parameter tensor, for fixed
/// noise `eps`.
pub fn elbo_loss_and_grad(
    params: &ModelParams,
    example: &TrainingExample,
    beta: f64,
    eps: &[f64],
) -> Result<(ElboTerms, Vec<Vec<f64>>)> {
    check_beta(beta)?;
    if eps.len() != params.config().latent_dim {
        return Err(Error::Shape(format!("eps has {} dims, model expects {}", eps.len(), params.config().latent_dim)));
    }
    let ex = PreparedExample::new(params, example)?;
    let mut grads = zero_grads(params);
    let terms = elbo_prepared(params, &ex, beta, eps, Some(&mut grads));
    Ok((terms, grads))
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidInput(format!("beta must be finite and nonnegative, got {beta}")));
    }
    Ok(())
}
