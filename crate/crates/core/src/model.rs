//! The toy classifier, SGD with momentum, and the training loop.
//!
//! Architecture: `conv(3->F, 3x3, pad 1) -> ReLU -> conv(F->2F, 3x3, stride 2,
//! pad 1) -> ReLU -> global average pool -> linear -> softmax cross-entropy`.
//! No batch norm and no convolution bias.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{count_unique_patterns, AnalysisConfig, AnalysisError};
use crate::data::{Dataset, Standardization, SynthConfig};
use crate::lifecycle::{detect_inactive, FilterBank, LifecycleError, LifecycleLog, PolicyConfig};
use crate::report::{EpochSummary, RunRecord};
use crate::rng::{self, RunRng};
use crate::tensor::{ops, Gradients, Graph, ParamId, Precision, Real, Tensor, TensorError};

pub const CONV1: ParamId = ParamId(0);
pub const CONV2: ParamId = ParamId(1);
pub const FC_WEIGHT: ParamId = ParamId(2);
pub const FC_BIAS: ParamId = ParamId(3);

const KERNEL: usize = 3;
const CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("epoch hook failed: {0}")]
    Hook(#[from] LifecycleError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("numerical failure in epoch {epoch}: {detail}")]
    NumericalFailure { epoch: usize, detail: String },
}

/// What an epoch-end hook gets to see and change.
pub struct EpochEnd<'a, T> {
    /// 1-based.
    pub epoch: usize,
    pub total_epochs: usize,
    pub bank: &'a mut FilterBank<T>,
    pub rng: &'a mut RunRng,
    pub log: &'a mut LifecycleLog,
}

/// Called once after every epoch. The only code path besides the optimizer
/// allowed to change weights, and only those of the first layer.
pub trait EpochHook<T: Real> {
    fn on_epoch_end(&mut self, ctx: EpochEnd<'_, T>) -> Result<(), LifecycleError>;
}

impl<T: Real, F> EpochHook<T> for F
where
    F: FnMut(EpochEnd<'_, T>) -> Result<(), LifecycleError>,
{
    fn on_epoch_end(&mut self, ctx: EpochEnd<'_, T>) -> Result<(), LifecycleError> {
        self(ctx)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoHook;

impl<T: Real> EpochHook<T> for NoHook {
    fn on_epoch_end(&mut self, _ctx: EpochEnd<'_, T>) -> Result<(), LifecycleError> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    Raw(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: DataSource,
    /// Drop images with identical R, G and B planes before training.
    pub clean_grayscale: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic(SynthConfig::default()),
            clean_grayscale: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub filters: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Multiplier applied at each milestone.
    pub lr_decay: f64,
    /// Milestones as fractions of `epochs`.
    pub lr_milestones: Vec<f64>,
    /// Standard deviation of the Gaussian weight initialization.
    pub init_std: f64,
    pub policy: PolicyConfig,
    pub precision: Precision,
    pub data: DataConfig,
    pub analysis: AnalysisConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            seed: 0,
            filters: 16,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay: 0.1,
            lr_milestones: vec![0.5, 0.75],
            init_std: 0.1,
            policy: PolicyConfig::default(),
            precision: Precision::F32,
            data: DataConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl TrainConfig {
    /// High learning rate and weight decay; reliably produces dead filters.
    pub fn filter_killer() -> Self {
        TrainConfig {
            lr: 0.5,
            weight_decay: 5e-3,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.filters == 0 {
            return fail("filters must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0,1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail(format!("init_std must be > 0, got {}", self.init_std));
        }
        if self.lr_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return fail("lr_milestones must be fractions in [0,1]".into());
        }
        self.policy.validate()?;
        Ok(())
    }

    /// Step schedule as `(first epoch, lr)` pairs, 1-based epochs.
    pub fn schedule(&self) -> Vec<(usize, f64)> {
        let mut points = vec![(1, self.lr)];
        let mut milestones = self.lr_milestones.clone();
        milestones.sort_by(f64::total_cmp);
        let mut lr = self.lr;
        for m in milestones {
            lr *= self.lr_decay;
            points.push(((m * self.epochs as f64).floor() as usize + 1, lr));
        }
        points
    }
}

/// Learning-rate schedule and per-parameter momentum buffers.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Tensor<T>>,
    pub schedule: Vec<(usize, f64)>,
}

impl<T: Real> OptimState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, shapes: &[&[usize]]) -> Self {
        OptimState {
            lr,
            momentum,
            weight_decay,
            velocity: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            schedule: vec![(1, lr)],
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .rfind(|(start, _)| *start <= epoch)
            .map_or(self.lr, |&(_, lr)| lr)
    }
}

/// `v <- m*v + g + wd*p; p <- p - lr*v`, parameter by parameter.
pub fn sgd_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    opt: &mut OptimState<T>,
) -> Result<(), TensorError> {
    if params.len() != grads.len() || params.len() != opt.velocity.len() {
        return Err(TensorError::Dimension {
            op: "sgd_step",
            detail: format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                opt.velocity.len()
            ),
        });
    }
    let (lr, m, wd) = (T::lit(opt.lr), T::lit(opt.momentum), T::lit(opt.weight_decay));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(opt.velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(TensorError::Dimension {
                op: "sgd_step",
                detail: format!("param {:?}, grad {:?}, velocity {:?}", p.shape(), g.shape(), v.shape()),
            });
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi + gi + wd * *pi;
            *pi = *pi - lr * *vi;
        }
        p.check_finite("sgd_step")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyNet<T> {
    pub conv1: FilterBank<T>,
    pub conv2: Tensor<T>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

impl<T: Real> ToyNet<T> {
    /// All-zero network with `filters` first-layer filters.
    pub fn new(filters: usize, classes: usize) -> Self {
        ToyNet {
            conv1: FilterBank::zeros(filters, CHANNELS, KERNEL),
            conv2: Tensor::zeros(&[2 * filters, filters, KERNEL, KERNEL]),
            fc_weight: Tensor::zeros(&[2 * filters, classes]),
            fc_bias: Tensor::zeros(&[classes]),
        }
    }

    pub fn filters(&self) -> usize {
        self.conv1.len()
    }

    pub fn classes(&self) -> usize {
        self.fc_bias.len()
    }

    /// Parameters in id order.
    pub fn params(&self) -> [&Tensor<T>; 4] {
        [self.conv1.weights(), &self.conv2, &self.fc_weight, &self.fc_bias]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [
            self.conv1.weights_mut(),
            &mut self.conv2,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ]
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|p| p.shape().to_vec()).collect()
    }

    /// Draws conv1, conv2 and the classifier weights, in that order, from
    /// `N(0, std^2)`; the classifier bias starts at zero.
    pub fn init_weights(&mut self, seed: u64, std: f64) {
        let mut rng = rng::stream(seed, rng::INIT_STREAM);
        let normal = Normal::new(0.0, std).expect("std is positive");
        for p in [self.conv1.weights_mut(), &mut self.conv2, &mut self.fc_weight] {
            for w in p.data_mut() {
                *w = T::lit(normal.sample(&mut rng));
            }
        }
        self.fc_bias.data_mut().fill(T::zero());
    }

    /// Records a forward pass and returns the logits node.
    pub fn forward(&self, graph: &mut Graph<T>, input: Tensor<T>) -> Result<crate::tensor::Var, TensorError> {
        let x = graph.constant(input);
        let k1 = graph.param(CONV1, self.conv1.weights().clone());
        let k2 = graph.param(CONV2, self.conv2.clone());
        let w = graph.param(FC_WEIGHT, self.fc_weight.clone());
        let b = graph.param(FC_BIAS, self.fc_bias.clone());
        let h = graph.conv2d(x, k1, 1, 1)?;
        let h = graph.relu(h)?;
        let h = graph.conv2d(h, k2, 2, 1)?;
        let h = graph.relu(h)?;
        let h = graph.global_avg_pool(h)?;
        graph.linear(h, w, b)
    }

    /// Mean cross-entropy, gradients, and the number of correct predictions.
    pub fn loss_and_grads(&self, input: Tensor<T>, labels: &[usize]) -> Result<(T, Gradients<T>, usize), TensorError> {
        let mut graph = Graph::new();
        let logits = self.forward(&mut graph, input)?;
        let correct = ops::argmax_rows(graph.value(logits)?)
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        let loss = graph.softmax_cross_entropy(logits, labels)?;
        let value = graph.value(loss)?.data()[0];
        Ok((value, graph.backward(loss)?, correct))
    }

    pub fn logits(&self, input: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let h = ops::relu(&ops::conv2d_forward(input, self.conv1.weights(), 1, 1)?);
        let h = ops::relu(&ops::conv2d_forward(&h, &self.conv2, 2, 1)?);
        ops::linear(&ops::global_avg_pool(&h)?, &self.fc_weight, &self.fc_bias)
    }

    pub fn predict(&self, input: &Tensor<T>) -> Result<Vec<usize>, TensorError> {
        Ok(ops::argmax_rows(&self.logits(input)?))
    }
}

/// Standardized training inputs.
pub struct TrainSet<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Real> TrainSet<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let s = self.images.shape();
        let len = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * len..(i + 1) * len]);
        }
        let shape = [indices.len(), s[1], s[2], s[3]];
        (
            Tensor::from_fn(&shape, |j| data[j]),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// One shuffled pass over `data` at the optimizer's current learning rate.
pub fn train_epoch<T: Real>(
    net: &mut ToyNet<T>,
    data: &TrainSet<T>,
    opt: &mut OptimState<T>,
    rng: &mut RunRng,
    batch_size: usize,
    epoch: usize,
) -> Result<EpochMetrics, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Config("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (x, y) = data.batch(chunk);
        let (loss, grads, hits) = net.loss_and_grads(x, &y).map_err(|e| numerical(epoch, e))?;
        if !loss.is_finite() {
            return Err(ModelError::NumericalFailure {
                epoch,
                detail: format!("loss is {loss}"),
            });
        }
        loss_sum += loss.as_f64() * chunk.len() as f64;
        correct += hits;
        let zero: Vec<Tensor<T>> = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        let g: Vec<&Tensor<T>> = [CONV1, CONV2, FC_WEIGHT, FC_BIAS]
            .iter()
            .zip(&zero)
            .map(|(id, z)| grads.get(*id).unwrap_or(z))
            .collect();
        sgd_step(&mut net.params_mut(), &g, opt).map_err(|e| numerical(epoch, e))?;
    }
    Ok(EpochMetrics {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

fn numerical(epoch: usize, e: TensorError) -> ModelError {
    match e {
        TensorError::NonFinite { .. } => ModelError::NumericalFailure {
            epoch,
            detail: e.to_string(),
        },
        other => ModelError::Tensor(other),
    }
}

pub fn accuracy<T: Real>(net: &ToyNet<T>, images: &Tensor<T>, labels: &[usize]) -> Result<f64, TensorError> {
    if labels.is_empty() {
        return Ok(f64::NAN);
    }
    let s = images.shape();
    let len = s[1] * s[2] * s[3];
    let mut correct = 0;
    for (chunk, ys) in images.data().chunks(256 * len).zip(labels.chunks(256)) {
        let x = Tensor::from_fn(&[ys.len(), s[1], s[2], s[3]], |j| chunk[j]);
        correct += net.predict(&x)?.iter().zip(ys).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / labels.len() as f64)
}

pub struct TrainOutcome<T> {
    pub net: ToyNet<T>,
    pub log: LifecycleLog,
    pub record: RunRecord,
}

/// Trains from scratch, calling `hook` after every epoch.
///
/// Data order in epoch `e` comes from its own stream derived from
/// `(seed, e)`, and the hook draws from a separate stream, so hook activity
/// never changes which batches are seen. Filters the hook modifies get their
/// momentum reset.
pub fn run_training<T: Real>(
    config: &TrainConfig,
    dataset: &Dataset,
    hook: &mut dyn EpochHook<T>,
) -> Result<TrainOutcome<T>, ModelError> {
    config.validate()?;
    let standardization = Standardization::fit(dataset);
    let train_idx = dataset.train_indices();
    let eval_idx = dataset.eval_indices();
    let train = TrainSet {
        images: standardization.apply(dataset, &train_idx),
        labels: train_idx.iter().map(|&i| dataset.labels[i]).collect(),
    };
    let mut net = ToyNet::<T>::new(config.filters, dataset.classes);
    net.init_weights(config.seed, config.init_std);
    let shapes = net.param_shapes();
    let shape_refs: Vec<&[usize]> = shapes.iter().map(|s| s.as_slice()).collect();
    let mut opt = OptimState::new(config.lr, config.momentum, config.weight_decay, &shape_refs);
    opt.schedule = config.schedule();
    let mut hook_rng = rng::stream(config.seed, config.policy.stream);
    let mut log = LifecycleLog::new();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        opt.lr = opt.lr_at(epoch);
        let mut shuffle = rng::shuffle_stream(config.seed, epoch);
        let metrics = train_epoch(&mut net, &train, &mut opt, &mut shuffle, config.batch_size, epoch)?;
        let inactive = detect_inactive(&net.conv1, config.policy.theta).len();
        epochs.push(EpochSummary {
            epoch,
            train_loss: metrics.loss,
            train_accuracy: metrics.accuracy,
            lr: opt.lr,
            inactive,
        });

        let before = net.conv1.clone();
        hook.on_epoch_end(EpochEnd {
            epoch,
            total_epochs: config.epochs,
            bank: &mut net.conv1,
            rng: &mut hook_rng,
            log: &mut log,
        })?;
        net.conv1.weights().check_finite("epoch hook")?;
        let flen = net.conv1.filter_len();
        for i in 0..net.conv1.len() {
            if net.conv1.filter(i) != before.filter(i) {
                opt.velocity[CONV1.0].data_mut()[i * flen..(i + 1) * flen].fill(T::zero());
            }
        }
    }

    let eval_images: Tensor<T> = standardization.apply(dataset, &eval_idx);
    let eval_labels: Vec<usize> = eval_idx.iter().map(|&i| dataset.labels[i]).collect();
    let eval_accuracy = accuracy(&net, &eval_images, &eval_labels)?;
    let bank64 = net.conv1.cast::<f64>();
    let all = count_unique_patterns(&bank64, config.policy.theta, &config.analysis, false)?;
    let active = count_unique_patterns(&bank64, config.policy.theta, &config.analysis, true)?;

    let record = RunRecord {
        seed: config.seed,
        policy: config.policy.kind,
        config_digest: config.digest(),
        dataset_digest: dataset.digest(),
        precision: T::PRECISION,
        final_inactive: detect_inactive(&net.conv1, config.policy.theta).len(),
        eval_accuracy: (!eval_labels.is_empty()).then_some(eval_accuracy),
        unique_patterns: all.n_clusters,
        unique_patterns_active: active.n_clusters,
        reactivations: log.events.len(),
        stuck_violations: log.stuck_violations().len(),
        standardization,
        epochs,
    };
    Ok(TrainOutcome { net, log, record })
}
