//! Parameter initialization and the Adam optimizer.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

pub fn parameter_count<T: Real>(params: &[Parameter<T>]) -> usize {
    params.iter().map(|p| p.value.numel()).sum()
}

/// Zero-mean Gaussian samples truncated to the open interval `(-2σ, 2σ)` by
/// resampling.
pub fn init_weights<T: Real>(shape: &[usize], sigma: f64, rng: &mut Rng) -> Result<Tensor<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid_arg!("init standard deviation must be positive, got {sigma}"));
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    while data.len() < numel {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() < 2.0 {
            data.push(T::lit(z * sigma));
        }
    }
    Tensor::new(shape, data)
}

pub fn init_bias<T: Real>(shape: &[usize]) -> Tensor<T> {
    Tensor::zeros(shape)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0002,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam state: one first/second moment buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Parameter<T>]) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// Applies one update. Every parameter needs a gradient of its own shape.
    pub fn step(&mut self, params: &mut [Parameter<T>], grads: &[Option<Tensor<T>>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::InvalidState(format!(
                "optimizer tracks {} parameters, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            match g {
                None => {
                    return Err(Error::InvalidState(format!(
                        "missing gradient for parameter {}",
                        p.name
                    )))
                }
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(Error::InvalidState(format!(
                        "gradient shape {:?} does not match parameter {} {:?}",
                        g.shape(),
                        p.name,
                        p.value.shape()
                    )))
                }
                Some(_) => {}
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (inv_bc1, inv_bc2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));
        let (alpha, eps) = (T::lit(c.alpha), T::lit(c.eps));

        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = g.as_ref().expect("checked above");
            for (((theta, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi * inv_bc1;
                let v_hat = *vi * inv_bc2;
                *theta -= alpha * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
