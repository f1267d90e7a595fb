use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Aux, Layer, LayerSpec, Mode};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Classifier head variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    /// Flatten followed by two dropout/FC-BN-ReLU blocks.
    Fc,
    /// Global average pooling followed by one linear layer.
    Gap,
}

impl Arch {
    pub const ALL: [Arch; 2] = [Arch::Fc, Arch::Gap];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Fc => "fc",
            Arch::Gap => "gap",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arch::Fc => "CNN-FC",
            Arch::Gap => "CNN-GAP",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fc" | "cnn-fc" => Ok(Arch::Fc),
            "gap" | "cnn-gap" => Ok(Arch::Gap),
            other => Err(Error::Parameter(format!("unknown architecture '{other}'"))),
        }
    }
}

/// Channel widths of the five convolutions and the FC hidden size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchConfig {
    pub conv_widths: [usize; 5],
    pub fc_dim: usize,
    pub dropout: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_widths: [64, 192, 384, 256, 256],
            fc_dim: 2048,
            dropout: 0.5,
        }
    }
}

/// Values retained by a forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Tensor>,
    pub aux: Vec<Aux>,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per layer, one tensor per parameter (empty when not requested).
    pub params: Vec<Vec<Tensor>>,
    /// `activations[i]` is the gradient with respect to the output of layer
    /// `i`, for every layer the pass went through.
    pub activations: Vec<Option<Tensor>>,
    pub input: Tensor,
}

/// A layer stack with parameters, running statistics and an optional
/// forward cache.
#[derive(Debug, Clone)]
pub struct NetworkState {
    arch: Arch,
    input_shape: [usize; 3],
    n_classes: usize,
    layers: Vec<Layer>,
    mode: Mode,
    cache: Option<Cache>,
    rng: ChaCha8Rng,
}

fn trunk(widths: [usize; 5]) -> Vec<LayerSpec> {
    let block = |i, o| [LayerSpec::conv3(i, o), LayerSpec::BatchNorm { ch: o }, LayerSpec::ReLU];
    let [c1, c2, c3, c4, c5] = widths;
    let mut specs = Vec::new();
    specs.extend(block(1, c1));
    specs.push(LayerSpec::pool3());
    specs.extend(block(c1, c2));
    specs.push(LayerSpec::pool3());
    specs.extend(block(c2, c3));
    specs.extend(block(c3, c4));
    specs.extend(block(c4, c5));
    specs.push(LayerSpec::pool3());
    specs
}

/// Layer specs for either architecture.
pub fn arch_specs(arch: Arch, n_classes: usize, input_shape: [usize; 3], cfg: &ArchConfig) -> Result<Vec<LayerSpec>> {
    if n_classes == 0 {
        return Err(Error::Parameter("need at least one class".into()));
    }
    if input_shape[0] != 1 {
        return Err(Error::Shape(format!("expected a single input channel, got {}", input_shape[0])));
    }
    if cfg.conv_widths.contains(&0) || cfg.fc_dim == 0 {
        return Err(Error::Parameter("layer widths must be positive".into()));
    }
    let mut specs = trunk(cfg.conv_widths);
    let mut shape = input_shape.to_vec();
    for s in &specs {
        shape = s.output_shape(&shape).map_err(|_| {
            Error::Shape(format!(
                "input {}x{} is too small for three 3x3 stride-2 poolings",
                input_shape[1], input_shape[2]
            ))
        })?;
    }
    let channels = cfg.conv_widths[4];
    match arch {
        Arch::Fc => {
            let flat = shape.iter().product();
            let hidden = cfg.fc_dim;
            specs.extend([
                LayerSpec::Flatten,
                LayerSpec::Dropout { p: cfg.dropout },
                LayerSpec::FullyConnected {
                    inputs: flat,
                    outputs: hidden,
                },
                LayerSpec::BatchNorm { ch: hidden },
                LayerSpec::ReLU,
                LayerSpec::Dropout { p: cfg.dropout },
                LayerSpec::FullyConnected {
                    inputs: hidden,
                    outputs: hidden,
                },
                LayerSpec::BatchNorm { ch: hidden },
                LayerSpec::ReLU,
                LayerSpec::FullyConnected {
                    inputs: hidden,
                    outputs: n_classes,
                },
                LayerSpec::Softmax,
            ]);
        }
        Arch::Gap => specs.extend([
            LayerSpec::GlobalAvgPool,
            LayerSpec::FullyConnected {
                inputs: channels,
                outputs: n_classes,
            },
            LayerSpec::Softmax,
        ]),
    }
    Ok(specs)
}

/// CNN-FC with the full-size widths.
pub fn build_cnn_fc(n_classes: usize, input_shape: [usize; 3]) -> Result<NetworkState> {
    NetworkState::build(Arch::Fc, n_classes, input_shape, &ArchConfig::default(), 0)
}

/// CNN-GAP with the full-size widths.
pub fn build_cnn_gap(n_classes: usize, input_shape: [usize; 3]) -> Result<NetworkState> {
    NetworkState::build(Arch::Gap, n_classes, input_shape, &ArchConfig::default(), 0)
}

impl NetworkState {
    /// Builds and He-initializes a network from `seed`.
    pub fn build(
        arch: Arch,
        n_classes: usize,
        input_shape: [usize; 3],
        cfg: &ArchConfig,
        seed: u64,
    ) -> Result<Self> {
        let specs = arch_specs(arch, n_classes, input_shape, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|s| {
                let mut l = Layer::new(s);
                l.init(&mut rng);
                l
            })
            .collect();
        Ok(Self {
            arch,
            input_shape,
            n_classes,
            layers,
            mode: Mode::Eval,
            cache: None,
            rng,
        })
    }

    /// Reassembles a network from stored layers, validating the chain.
    pub fn from_layers(input_shape: [usize; 3], layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.to_vec();
        for l in &layers {
            shape = l.spec.output_shape(&shape)?;
            for (p, s) in l.params.iter().zip(l.spec.param_shapes()) {
                if p.shape() != s.as_slice() {
                    return Err(Error::Shape(format!(
                        "{} parameter {:?}, expected {s:?}",
                        l.spec.name(),
                        p.shape()
                    )));
                }
            }
        }
        if layers.last().map(|l| l.spec) != Some(LayerSpec::Softmax) {
            return Err(Error::Shape("network must end with softmax".into()));
        }
        let arch = if layers.iter().any(|l| l.spec == LayerSpec::GlobalAvgPool) {
            Arch::Gap
        } else {
            Arch::Fc
        };
        Ok(Self {
            arch,
            input_shape,
            n_classes: shape[0],
            layers,
            mode: Mode::Eval,
            cache: None,
            rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Reseeds the generator that draws dropout masks.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn cache(&self) -> Option<&Cache> {
        self.cache.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.to_vec();
        self.layers
            .iter()
            .map(|l| {
                shape = l.spec.output_shape(&shape).expect("validated at construction");
                shape.clone()
            })
            .collect()
    }

    /// Groups layers into the numbered rows of the architecture tables: a
    /// convolution or FC layer absorbs the BatchNorm, ReLU and Softmax that
    /// follow it; pooling and dropout are rows of their own; flatten is
    /// unnumbered. Returns the index of the last layer of each row.
    pub fn row_ends(&self) -> Vec<usize> {
        let mut ends: Vec<usize> = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match l.spec {
                LayerSpec::BatchNorm { .. } | LayerSpec::ReLU | LayerSpec::Softmax => {
                    if let Some(last) = ends.last_mut() {
                        *last = i;
                    }
                }
                LayerSpec::Flatten => {}
                _ => ends.push(i),
            }
        }
        ends
    }

    /// Layer index whose output is table row `row` (1-based).
    pub fn row_output_index(&self, row: usize) -> Option<usize> {
        row.checked_sub(1).and_then(|r| self.row_ends().get(r).copied())
    }

    /// Index of the layer producing the final pooled feature maps, the
    /// input of global pooling or flattening.
    pub fn trunk_output_index(&self) -> usize {
        self.layers
            .iter()
            .position(|l| matches!(l.spec, LayerSpec::GlobalAvgPool | LayerSpec::Flatten))
            .expect("network has a pooling or flatten stage")
            - 1
    }

    /// Table row number of the final pooled feature maps.
    pub fn trunk_output_row(&self) -> usize {
        let idx = self.trunk_output_index();
        self.row_ends().iter().position(|&e| e == idx).expect("pool ends a row") + 1
    }

    fn check_input(&self, x: &Tensor) -> Result<Tensor> {
        let shape = x.shape();
        if shape == self.input_shape {
            let mut s = vec![1];
            s.extend_from_slice(shape);
            return x.clone().reshape(&s);
        }
        if shape.len() == 4 && shape[1..] == self.input_shape && shape[0] > 0 {
            return Ok(x.clone());
        }
        Err(Error::Shape(format!(
            "input {:?} does not match network input {:?}",
            shape, self.input_shape
        )))
    }

    /// Runs the stack on one input `C x H x W` or a batch `N x C x H x W`
    /// and returns class probabilities `N x classes`. With `retain`, every
    /// intermediate activation is cached for [`backward`](Self::backward)
    /// and class activation maps; otherwise any previous cache is dropped.
    pub fn forward(&mut self, x: &Tensor, retain: bool) -> Result<Tensor> {
        let mut cur = self.check_input(x)?;
        let mut activations = Vec::new();
        let mut auxes = Vec::new();
        for layer in &mut self.layers {
            let (y, aux) = layer.forward(&cur, self.mode, &mut self.rng)?;
            debug_assert!(y.is_finite(), "{} produced non-finite output", layer.spec.name());
            if retain {
                activations.push(std::mem::replace(&mut cur, y));
                auxes.push(aux);
            } else {
                cur = y;
            }
        }
        if retain {
            activations.push(cur.clone());
            self.cache = Some(Cache {
                activations,
                aux: auxes,
            });
        } else {
            self.cache = None;
        }
        Ok(cur)
    }

    /// Pre-softmax scores from the retained pass.
    pub fn logits(&self) -> Result<&Tensor> {
        let cache = self.require_cache()?;
        Ok(&cache.activations[self.layers.len() - 1])
    }

    fn require_cache(&self) -> Result<&Cache> {
        self.cache
            .as_ref()
            .ok_or_else(|| Error::State("no retained forward pass".into()))
    }

    /// Backpropagates a gradient of the loss with respect to the output
    /// probabilities.
    pub fn backward(&self, grad_loss: &Tensor) -> Result<Gradients> {
        self.backward_from(self.layers.len(), grad_loss, true)
    }

    /// Backpropagates a gradient with respect to the pre-softmax logits.
    pub fn backward_from_logits(&self, grad_logits: &Tensor) -> Result<Gradients> {
        self.backward_from(self.layers.len() - 1, grad_logits, true)
    }

    /// Backward through layers `0..top`; `grad` is with respect to the
    /// output of layer `top - 1`.
    pub(crate) fn backward_from(&self, top: usize, grad: &Tensor, param_grads: bool) -> Result<Gradients> {
        let cache = self.require_cache()?;
        if grad.shape() != cache.activations[top].shape() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match output {:?}",
                grad.shape(),
                cache.activations[top].shape()
            )));
        }
        let n = self.layers.len();
        let mut params = vec![Vec::new(); n];
        let mut activations = vec![None; n];
        let mut g = grad.clone();
        for i in (0..top).rev() {
            let (dx, dp) = self.layers[i].backward(
                &cache.activations[i],
                &cache.activations[i + 1],
                &cache.aux[i],
                &g,
                param_grads,
            )?;
            params[i] = dp;
            activations[i] = Some(std::mem::replace(&mut g, dx));
        }
        Ok(Gradients {
            params,
            activations,
            input: g,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ArchConfig {
        ArchConfig {
            conv_widths: [2, 3, 4, 3, 3],
            fc_dim: 8,
            dropout: 0.5,
        }
    }

    #[test]
    fn row_numbering_follows_tables() {
        let fc = NetworkState::build(Arch::Fc, 5, [1, 20, 24], &small_cfg(), 1).unwrap();
        assert_eq!(fc.row_ends().len(), 13);
        assert_eq!(fc.row_output_index(7), Some(16));
        assert_eq!(fc.row_output_index(8), Some(17));
        assert_eq!(fc.trunk_output_index(), 17);
        assert_eq!(fc.trunk_output_row(), 8);
        assert_eq!(fc.row_output_index(13), Some(fc.layers().len() - 1));
        assert_eq!(fc.row_output_index(0), None);
        let gap = NetworkState::build(Arch::Gap, 5, [1, 20, 24], &small_cfg(), 1).unwrap();
        assert_eq!(gap.row_ends().len(), 10);
        assert_eq!(gap.row_output_index(9), Some(18));
    }

    #[test]
    fn too_small_input_is_rejected() {
        assert!(matches!(
            NetworkState::build(Arch::Gap, 3, [1, 8, 8], &small_cfg(), 0),
            Err(Error::Shape(_))
        ));
        assert!(NetworkState::build(Arch::Gap, 3, [1, 15, 15], &small_cfg(), 0).is_ok());
    }

    #[test]
    fn backward_needs_cache() {
        let mut net = NetworkState::build(Arch::Gap, 3, [1, 16, 16], &small_cfg(), 0).unwrap();
        assert!(matches!(
            net.backward_from_logits(&Tensor::zeros(&[1, 3])),
            Err(Error::State(_))
        ));
        net.forward(&Tensor::zeros(&[1, 16, 16]), true).unwrap();
        assert!(net.backward_from_logits(&Tensor::zeros(&[1, 3])).is_ok());
        net.forward(&Tensor::zeros(&[1, 16, 16]), false).unwrap();
        assert!(net.cache().is_none());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut net = NetworkState::build(Arch::Gap, 3, [1, 16, 16], &small_cfg(), 0).unwrap();
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 16, 17]), false),
            Err(Error::Shape(_))
        ));
    }
}
