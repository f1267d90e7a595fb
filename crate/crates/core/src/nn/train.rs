use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::Mode;
use super::network::NetworkState;
use super::tensor::Tensor;
use crate::dsp::LogMelImage;
use crate::error::{Error, Result};

/// SGD hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Multiply the learning rate by 0.1 from two thirds of the epochs on.
    pub step_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            seed: 0,
            weight_decay: 5e-4,
            step_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Parameter("weight decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.step_decay && epoch * 3 >= self.epochs * 2 {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Mean cross-entropy of a batch of probabilities and the gradient
/// `(p - onehot) / N` with respect to the logits.
pub fn softmax_cross_entropy(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, c] = probs.shape() else {
        return Err(Error::Shape(format!("expected N x C probabilities, got {:?}", probs.shape())));
    };
    if *n != labels.len() {
        return Err(Error::Shape(format!("{n} rows but {} labels", labels.len())));
    }
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (row, &y) in grad.data_mut().chunks_mut(*c).zip(labels) {
        if y >= *c {
            return Err(Error::Config(format!("label {y} outside {c} classes")));
        }
        loss -= row[y].max(f64::MIN_POSITIVE).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= *n as f64);
    }
    Ok((loss / *n as f64, grad))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Index of the largest entry (first on ties).
pub fn predicted_class(probs: &[f64]) -> usize {
    argmax(probs)
}

/// Mini-batch SGD with momentum on cross-entropy.
///
/// Each epoch visits the samples in an order shuffled from `cfg.seed`;
/// dropout masks are drawn from a generator reseeded from the same seed, so
/// two runs from identical networks and data are bit-identical. The update is
/// `v = momentum * v + g + weight_decay * w; w -= lr * v`, with weight decay
/// on conv and FC weight matrices only.
pub fn train(net: &mut NetworkState, data: &[(Tensor, usize)], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("no training samples"));
    }
    if let Some((_, y)) = data.iter().find(|(_, y)| *y >= net.n_classes()) {
        return Err(Error::Config(format!(
            "label {y} outside the network's {} classes",
            net.n_classes()
        )));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    net.reseed(cfg.seed ^ 0x5eed_d40f);
    net.set_mode(Mode::Train);
    let mut velocity: Vec<Vec<Vec<f64>>> = net
        .layers()
        .iter()
        .map(|l| l.params.iter().map(|p| vec![0.0; p.len()]).collect())
        .collect();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| &data[i].0).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data[i].1).collect();
            let x = Tensor::stack(&inputs)?;
            let probs = net.forward(&x, true)?;
            let (loss, grad) = softmax_cross_entropy(&probs, &labels)?;
            loss_sum += loss * batch.len() as f64;
            correct += probs
                .data()
                .chunks(net.n_classes())
                .zip(&labels)
                .filter(|(row, &y)| argmax(row) == y)
                .count();
            let grads = net.backward_from_logits(&grad)?;
            for (li, (layer, lgrads)) in net.layers_mut().iter_mut().zip(&grads.params).enumerate() {
                let spec = layer.spec;
                for (pi, (param, g)) in layer.params.iter_mut().zip(lgrads).enumerate() {
                    let decay = if spec.is_decayed(pi) { cfg.weight_decay } else { 0.0 };
                    let v = &mut velocity[li][pi];
                    for ((w, gv), vv) in param.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *vv = cfg.momentum * *vv + gv + decay * *w;
                        *w -= lr * *vv;
                    }
                }
            }
        }
        net.clear_cache();
        log.epochs.push(EpochLog {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    net.set_mode(Mode::Eval);
    Ok(log)
}

/// Averages segment-level class probabilities into one recording-level
/// vector (eval mode).
pub fn predict_sample(net: &mut NetworkState, segments: &[LogMelImage]) -> Result<Vec<f64>> {
    if segments.is_empty() {
        return Err(Error::EmptyInput("no segments to score"));
    }
    let previous = net.mode();
    net.set_mode(Mode::Eval);
    let inputs: Vec<Tensor> = segments.iter().map(Tensor::from_image).collect();
    let refs: Vec<&Tensor> = inputs.iter().collect();
    let result = net.forward(&Tensor::stack(&refs)?, false);
    net.set_mode(previous);
    let probs = result?;
    let c = net.n_classes();
    let mut mean = vec![0.0; c];
    for row in probs.data().chunks(c) {
        for (m, p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= segments.len() as f64);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_gradient_is_p_minus_onehot() {
        let p = Tensor::new(vec![2, 3], vec![0.2, 0.3, 0.5, 0.1, 0.8, 0.1]).unwrap();
        let (loss, g) = softmax_cross_entropy(&p, &[2, 1]).unwrap();
        assert!((loss - (-(0.5f64.ln()) - 0.8f64.ln()) / 2.0).abs() < 1e-15);
        let expected = [0.1, 0.15, -0.25, 0.05, -0.1, 0.05];
        for (a, b) in g.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(softmax_cross_entropy(&p, &[3, 0]), Err(Error::Config(_))));
    }

    #[test]
    fn lr_schedule_steps_at_two_thirds() {
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(19), 0.01);
        assert!((cfg.lr_at(20) - 0.001).abs() < 1e-18);
        let one = TrainConfig { epochs: 1, ..cfg };
        assert_eq!(one.lr_at(0), 0.01);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { momentum: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
    }
}
