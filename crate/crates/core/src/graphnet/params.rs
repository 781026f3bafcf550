use std::collections::HashMap;

use rand::Rng;

use super::{GraphError, ModelConfig};
use crate::numerics::{AffineLayer, Tensor};

/// Indices of one affine layer's weight and bias inside [`ModelParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRef {
    pub weight: usize,
    pub bias: usize,
}

/// All learnable tensors of a model, named and ordered by
/// [`ModelConfig::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases drawn from `rng` in layout
    /// order.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.layout() {
            let t = if name.ends_with(".weight") {
                let layer = AffineLayer::glorot(shape[1], shape[0], rng);
                layer.into_parts().0
            } else {
                Tensor::zeros(shape)
            };
            names.push(name);
            tensors.push(t);
        }
        Self::assemble(config.clone(), names, tensors)
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let (names, tensors) = config
            .layout()
            .into_iter()
            .map(|(n, s)| (n, Tensor::zeros(s)))
            .unzip();
        Self::assemble(config.clone(), names, tensors)
    }

    /// Builds from explicit tensors, checking them against the layout.
    pub fn from_tensors(
        config: ModelConfig,
        entries: Vec<(String, Tensor)>,
    ) -> Result<Self, GraphError> {
        let layout = config.layout();
        if layout.len() != entries.len() {
            return Err(GraphError::LayoutMismatch(format!(
                "expected {} tensors for variant {}, got {}",
                layout.len(),
                config.variant,
                entries.len()
            )));
        }
        for ((name, shape), (got_name, t)) in layout.iter().zip(&entries) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(GraphError::LayoutMismatch(format!(
                    "expected `{name}` {shape:?}, got `{got_name}` {:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = entries.into_iter().unzip();
        Ok(Self::assemble(config, names, tensors))
    }

    fn assemble(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            config,
            names,
            tensors,
            index,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn layer(&self, name: &str) -> Option<LayerRef> {
        Some(LayerRef {
            weight: *self.index.get(&format!("{name}.weight"))?,
            bias: *self.index.get(&format!("{name}.bias"))?,
        })
    }

    pub(crate) fn require(&self, name: &str) -> Result<LayerRef, GraphError> {
        self.layer(name)
            .ok_or_else(|| GraphError::LayoutMismatch(format!("missing layer `{name}`")))
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Sets every tensor of layer `name` to zero.
    pub fn zero_layer(&mut self, name: &str) {
        for suffix in ["weight", "bias"] {
            if let Some(t) = self.get_mut(&format!("{name}.{suffix}")) {
                t.fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphnet::Variant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_matches_layout_and_is_seeded() {
        let cfg = ModelConfig::toy(Variant::Full, 6, 5, 3);
        let a = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let b = ModelParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.names().len(), cfg.layout().len());
        assert!(a.get("readout.out.bias").unwrap().values().iter().all(|&v| v == 0.0));
        assert!(a.layer("visual.f_edge").is_some());
        assert!(a.layer("combined.f_edge").is_none());
    }

    #[test]
    fn from_tensors_rejects_wrong_layout() {
        let cfg = ModelConfig::toy(Variant::VisualOnly, 4, 4, 2);
        let p = ModelParams::zeros(&cfg);
        let entries: Vec<_> = p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect();
        assert!(ModelParams::from_tensors(cfg.clone(), entries.clone()).is_ok());
        let full = ModelConfig::toy(Variant::Full, 4, 4, 2);
        assert!(ModelParams::from_tensors(full, entries).is_err());
    }
}
