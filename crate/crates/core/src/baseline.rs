//! Fully connected autoencoder baseline:
//! bilinear 128→32, FC(32², 128), ReLU, FC(128, 32²), bilinear 32→128.

use crate::autodiff::{Graph, Var};
use crate::error::{invalid_arg, Error, Result};
use crate::net::InitConfig;
use crate::optim::{init_bias, init_weights, Parameter};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

pub const LATENT_SIDE: usize = 32;
pub const BOTTLENECK: usize = 128;

#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderNet<T> {
    patch_size: usize,
    params: Vec<Parameter<T>>,
}

fn shapes(latent: usize) -> [(&'static str, Vec<usize>); 4] {
    let n = latent * latent;
    [
        ("encoder.weight", vec![BOTTLENECK, n]),
        ("encoder.bias", vec![BOTTLENECK]),
        ("decoder.weight", vec![n, BOTTLENECK]),
        ("decoder.bias", vec![n]),
    ]
}

impl<T: Real> AutoencoderNet<T> {
    pub fn build(patch_size: usize, init: InitConfig, rng: &mut Rng) -> Result<Self> {
        if patch_size == 0 {
            return Err(invalid_arg!("patch size must be positive"));
        }
        let mut params = Vec::new();
        for (name, shape) in shapes(LATENT_SIDE) {
            let value = if name.ends_with(".bias") {
                init_bias(&shape)
            } else {
                init_weights(&shape, init.sigma, rng)?
            };
            params.push(Parameter::new(name, value));
        }
        Ok(Self { patch_size, params })
    }

    pub fn from_parameters(patch_size: usize, params: Vec<Parameter<T>>) -> Result<Self> {
        let expected = shapes(LATENT_SIDE);
        if params.len() != expected.len()
            || params
                .iter()
                .zip(&expected)
                .any(|(p, (name, shape))| p.name != *name || p.value.shape() != shape.as_slice())
        {
            return Err(Error::InvalidSpec(
                "autoencoder parameters do not match the fixed architecture".into(),
            ));
        }
        Ok(Self { patch_size, params })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        crate::optim::parameter_count(&self.params)
    }

    pub fn forward(&self, graph: &mut Graph<T>, params: &[Var], x: Var) -> Result<Var> {
        let [b, c, h, w] = graph.value(x).dims4()?;
        if c != 1 || h != self.patch_size || w != self.patch_size {
            return Err(invalid_arg!(
                "autoencoder expects [B, 1, {0}, {0}], got {1:?}",
                self.patch_size,
                graph.value(x).shape()
            ));
        }
        let &[enc_w, enc_b, dec_w, dec_b] = params else {
            return Err(invalid_arg!("autoencoder needs four parameter handles"));
        };
        let n = LATENT_SIDE * LATENT_SIDE;
        let small = graph.resize(x, (LATENT_SIDE, LATENT_SIDE))?;
        let flat = graph.reshape(small, &[b, n])?;
        let hidden = graph.linear(flat, enc_w, enc_b)?;
        let hidden = graph.relu(hidden);
        let decoded = graph.linear(hidden, dec_w, dec_b)?;
        let decoded = graph.reshape(decoded, &[b, 1, LATENT_SIDE, LATENT_SIDE])?;
        graph.resize(decoded, (h, w))
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut graph = Graph::new();
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| graph.constant(p.value.clone()))
            .collect();
        let x = graph.constant(x.clone());
        let y = self.forward(&mut graph, &params, x)?;
        Ok(graph.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn parameter_count_matches_closed_form() {
        let net = AutoencoderNet::<f32>::build(128, InitConfig::default(), &mut seeded(0)).unwrap();
        let closed_form = 32 * 32 * 128 + 128 + 128 * 32 * 32 + 32 * 32;
        assert_eq!(closed_form, 263_296);
        assert_eq!(net.parameter_count(), closed_form);
    }

    #[test]
    fn zero_weights_reconstruct_zeros() {
        let mut net = AutoencoderNet::<f32>::build(128, InitConfig::default(), &mut seeded(0)).unwrap();
        for p in net.parameters_mut() {
            p.value.data_mut().fill(0.0);
        }
        let x = Tensor::from_fn(&[2, 1, 128, 128], |i| ((i % 13) as f32) / 13.0);
        let y = net.infer(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 128, 128]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_shapes() {
        let net = AutoencoderNet::<f32>::build(128, InitConfig::default(), &mut seeded(0)).unwrap();
        assert!(net.infer(&Tensor::zeros(&[1, 1, 64, 64])).is_err());
        let mut params = net.parameters().to_vec();
        params.pop();
        assert!(AutoencoderNet::from_parameters(128, params).is_err());
    }
}
