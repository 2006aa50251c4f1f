use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, Projection};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Rank-`r` update `scaling · B · A` for one `d × d` projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter<T> {
    /// `r × d`
    pub a: Matrix<T>,
    /// `d × r`
    pub b: Matrix<T>,
    pub scaling: T,
}

impl<T: Scalar> LoraAdapter<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            a: Matrix::zeros(self.a.rows, self.a.cols),
            b: Matrix::zeros(self.b.rows, self.b.cols),
            scaling: self.scaling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerAdapters<T> {
    pub query: Option<LoraAdapter<T>>,
    pub key: Option<LoraAdapter<T>>,
    pub value: Option<LoraAdapter<T>>,
    pub output: Option<LoraAdapter<T>>,
}

impl<T> LayerAdapters<T> {
    pub fn get(&self, p: Projection) -> Option<&LoraAdapter<T>> {
        match p {
            Projection::Query => self.query.as_ref(),
            Projection::Key => self.key.as_ref(),
            Projection::Value => self.value.as_ref(),
            Projection::Output => self.output.as_ref(),
        }
    }

    pub fn get_mut(&mut self, p: Projection) -> Option<&mut LoraAdapter<T>> {
        match p {
            Projection::Query => self.query.as_mut(),
            Projection::Key => self.key.as_mut(),
            Projection::Value => self.value.as_mut(),
            Projection::Output => self.output.as_mut(),
        }
    }

    fn slot(&mut self, p: Projection) -> &mut Option<LoraAdapter<T>> {
        match p {
            Projection::Query => &mut self.query,
            Projection::Key => &mut self.key,
            Projection::Value => &mut self.value,
            Projection::Output => &mut self.output,
        }
    }
}

/// Adapters for every layer. The same type doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraSet<T> {
    pub layers: Vec<LayerAdapters<T>>,
}

const PROJECTIONS: [Projection; 4] =
    [Projection::Query, Projection::Key, Projection::Value, Projection::Output];

impl<T: Scalar> LoraSet<T> {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let r = config.lora_rank;
        let scaling = T::of(config.lora_scaling());
        let std = 1.0 / (d as f64).sqrt();
        let layers = (0..config.n_layers)
            .map(|_| {
                let mut layer = LayerAdapters { query: None, key: None, value: None, output: None };
                for p in PROJECTIONS {
                    if config.lora_targets.contains(&p) {
                        *layer.slot(p) = Some(LoraAdapter {
                            a: Matrix::gaussian(r, d, std, &mut rng),
                            b: Matrix::zeros(d, r),
                            scaling,
                        });
                    }
                }
                layer
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerAdapters {
                    query: l.query.as_ref().map(LoraAdapter::zeros_like),
                    key: l.key.as_ref().map(LoraAdapter::zeros_like),
                    value: l.value.as_ref().map(LoraAdapter::zeros_like),
                    output: l.output.as_ref().map(LoraAdapter::zeros_like),
                })
                .collect(),
        }
    }

    /// Every trainable tensor in a fixed order (layer, projection, A then B).
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for p in PROJECTIONS {
                if let Some(ad) = layer.get(p) {
                    out.push(&ad.a);
                    out.push(&ad.b);
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for slot in [&mut layer.query, &mut layer.key, &mut layer.value, &mut layer.output] {
                if let Some(ad) = slot.as_mut() {
                    out.push(&mut ad.a);
                    out.push(&mut ad.b);
                }
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.add_assign(src);
        }
    }

    pub fn scale(&mut self, factor: T) {
        for m in self.tensors_mut() {
            m.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|m| m.data.len()).sum()
    }

    pub fn all_b_zero(&self) -> bool {
        self.layers.iter().all(|l| {
            PROJECTIONS
                .iter()
                .filter_map(|&p| l.get(p))
                .all(|ad| ad.b.data.iter().all(|v| *v == T::zero()))
        })
    }
}
