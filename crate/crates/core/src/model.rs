//! A reconstruction model of either kind, as seen by training, scoring and
//! checkpointing.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::baseline::AutoencoderNet;
use crate::error::Result;
use crate::mask::MaskSpec;
use crate::net::{masked_l1_loss, CompletionNet};
use crate::optim::Parameter;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Completion,
    Autoencoder,
}

impl ModelKind {
    pub fn code(self) -> u32 {
        match self {
            ModelKind::Completion => 0,
            ModelKind::Autoencoder => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(ModelKind::Completion),
            1 => Some(ModelKind::Autoencoder),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    Completion(CompletionNet<T>),
    Autoencoder(AutoencoderNet<T>),
}

impl<T: Real> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Completion(_) => ModelKind::Completion,
            Model::Autoencoder(_) => ModelKind::Autoencoder,
        }
    }

    pub fn patch_size(&self) -> usize {
        match self {
            Model::Completion(n) => n.patch_size(),
            Model::Autoencoder(n) => n.patch_size(),
        }
    }

    pub fn mask(&self) -> MaskSpec {
        MaskSpec {
            patch_size: self.patch_size(),
            ..MaskSpec::default()
        }
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        match self {
            Model::Completion(n) => n.parameters(),
            Model::Autoencoder(n) => n.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        match self {
            Model::Completion(n) => n.parameters_mut(),
            Model::Autoencoder(n) => n.parameters_mut(),
        }
    }

    /// Network input for a clean batch: the completion net sees `M̄ ⊙ X`,
    /// the autoencoder sees `X`.
    pub fn prepare_input(&self, clean: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Model::Completion(_) => self.mask().apply(clean),
            Model::Autoencoder(_) => Ok(clean.clone()),
        }
    }

    pub fn forward(&self, graph: &mut Graph<T>, params: &[Var], input: Var) -> Result<Var> {
        match self {
            Model::Completion(n) => n.forward(graph, params, input),
            Model::Autoencoder(n) => n.forward(graph, params, input),
        }
    }

    /// Training objective: masked, λ-weighted L1 for completion; plain L1 for the autoencoder.
    pub fn loss(&self, graph: &mut Graph<T>, clean: Var, output: Var, lambda: f64) -> Result<Var> {
        match self {
            Model::Completion(_) => masked_l1_loss(graph, clean, output, &self.mask(), lambda),
            Model::Autoencoder(_) => graph.mean_abs_diff(output, clean),
        }
    }

    /// Reconstruction of a clean batch `[B, 1, P, P]`.
    pub fn reconstruct(&self, clean: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.prepare_input(clean)?;
        match self {
            Model::Completion(n) => n.infer(&input),
            Model::Autoencoder(n) => n.infer(&input),
        }
    }
}
