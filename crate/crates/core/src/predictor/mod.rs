//! Learned hardware-performance predictor.
//!
//! Three graph-convolution layers over the architecture graph (sum
//! aggregation with self-loops, no degree normalization) feed a three-layer
//! perceptron through the global-node readout concatenated with a device
//! one-hot. Training minimizes mean absolute percentage error with decoupled
//! weight decay and a reduce-on-plateau learning rate. Targets are fitted in
//! log space by default: the network output approximates
//! `ln(target / target_scale)` and predictions exponentiate it back.

mod weights_io;

pub use weights_io::{load_weights, save_weights, WeightsMeta, WEIGHTS_MAGIC};

use ndarray::{Array1, Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arch_graph::{build_arch_graph, ArchGraph, FEATURE_DIM};
use crate::device_cost::{LabeledDataset, LabeledSample};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Which readout feeds the perceptron head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    GlobalNode,
    MeanPool,
}

/// Metric a predictor is trained to output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    Latency,
    PeakMemory,
}

impl TargetMetric {
    pub fn label_of(&self, sample: &LabeledSample) -> f64 {
        match self {
            TargetMetric::Latency => sample.record.latency_ms,
            TargetMetric::PeakMemory => sample.record.peak_mem_bytes as f64,
        }
    }
}

/// Structural configuration of the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub gcn_dims: [usize; 3],
    pub mlp_dims: [usize; 3],
    pub num_devices: usize,
    pub leaky_slope: f64,
    pub encoding_version: u32,
    pub readout: Readout,
    pub log_space: bool,
}

impl PredictorConfig {
    /// Full-size configuration.
    pub fn standard(num_devices: usize) -> Self {
        PredictorConfig {
            gcn_dims: [256, 512, 512],
            mlp_dims: [256, 128, 1],
            num_devices,
            leaky_slope: 0.01,
            encoding_version: crate::ENCODING_VERSION,
            readout: Readout::GlobalNode,
            log_space: true,
        }
    }

    /// Desk-scale configuration for tests and quick runs.
    pub fn toy(num_devices: usize) -> Self {
        PredictorConfig {
            gcn_dims: [32, 32, 32],
            mlp_dims: [16, 8, 1],
            ..Self::standard(num_devices)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mlp_dims[2] != 1 {
            return Err(Error::Config(format!(
                "last mlp dim must be 1, got {}",
                self.mlp_dims[2]
            )));
        }
        if self.gcn_dims.iter().chain(self.mlp_dims.iter()).any(|d| *d == 0) {
            return Err(Error::Config("all layer dims must be at least 1".into()));
        }
        if self.num_devices == 0 {
            return Err(Error::Config("num_devices must be at least 1".into()));
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return Err(Error::Config("leaky_slope must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// (rows, cols) of every tensor in storage order; biases are 1-row.
    pub fn tensor_shapes(&self) -> Vec<(String, (usize, usize))> {
        let [d1, d2, d3] = self.gcn_dims;
        let [m1, m2, m3] = self.mlp_dims;
        let head_in = d3 + self.num_devices;
        vec![
            ("gcn1.weight".into(), (FEATURE_DIM, d1)),
            ("gcn1.bias".into(), (1, d1)),
            ("gcn2.weight".into(), (d1, d2)),
            ("gcn2.bias".into(), (1, d2)),
            ("gcn3.weight".into(), (d2, d3)),
            ("gcn3.bias".into(), (1, d3)),
            ("mlp1.weight".into(), (head_in, m1)),
            ("mlp1.bias".into(), (1, m1)),
            ("mlp2.weight".into(), (m1, m2)),
            ("mlp2.bias".into(), (1, m2)),
            ("mlp3.weight".into(), (m2, m3)),
            ("mlp3.bias".into(), (1, m3)),
        ]
    }
}

/// Model parameters: the tensors in the fixed order of
/// [`PredictorConfig::tensor_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T: Scalar> {
    pub config: PredictorConfig,
    /// Scale factor applied after exponentiation in log-space mode.
    pub target_scale: f64,
    tensors: Vec<Array2<T>>,
}

impl<T: Scalar> ModelWeights<T> {
    pub fn tensors(&self) -> &[Array2<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.tensors
    }

    pub fn from_tensors(
        config: PredictorConfig,
        target_scale: f64,
        tensors: Vec<Array2<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = config.tensor_shapes();
        if tensors.len() != shapes.len() {
            return Err(Error::Config(format!(
                "expected {} tensors, got {}",
                shapes.len(),
                tensors.len()
            )));
        }
        for ((name, shape), tensor) in shapes.iter().zip(&tensors) {
            if tensor.dim() != *shape {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    tensor.dim()
                )));
            }
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("tensor {name} has non-finite entries")));
            }
        }
        Ok(ModelWeights {
            config,
            target_scale,
            tensors,
        })
    }

    fn weight(&self, layer: usize) -> &Array2<T> {
        &self.tensors[2 * layer]
    }

    fn bias(&self, layer: usize) -> &Array2<T> {
        &self.tensors[2 * layer + 1]
    }
}

/// Gradients (or optimizer moments) in the same tensor order as the model.
pub type TensorSet<T> = Vec<Array2<T>>;

fn zeros_like<T: Scalar>(w: &ModelWeights<T>) -> TensorSet<T> {
    w.tensors().iter().map(|t| Array2::zeros(t.dim())).collect()
}

/// Initialize weights uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with
/// zero biases. Deterministic for a given seed.
pub fn init_model<T: Scalar>(cfg: &PredictorConfig, seed: u64) -> Result<ModelWeights<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, (rows, cols)) in cfg.tensor_shapes() {
        if name.ends_with(".bias") {
            tensors.push(Array2::zeros((rows, cols)));
        } else {
            let bound = 1.0 / (rows as f64).sqrt();
            let mut tensor = Array2::zeros((rows, cols));
            for value in tensor.iter_mut() {
                *value = T::from_real((rng.gen::<f64>() * 2.0 - 1.0) * bound);
            }
            tensors.push(tensor);
        }
    }
    ModelWeights::from_tensors(cfg.clone(), 1.0, tensors)
}

fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

fn leaky<T: Scalar>(x: T, slope: T) -> T {
    if x > T::zero() {
        x
    } else {
        slope * x
    }
}

fn check_finite<T: Scalar>(values: &Array2<T>, stage: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(stage.to_string()));
    }
    Ok(())
}

struct ForwardTrace<T: Scalar> {
    /// Propagation matrix A + I.
    prop: Array2<T>,
    /// Per GCN layer: input to the weight matmul (P * H_prev) and the
    /// pre-activation.
    gcn_inputs: Vec<Array2<T>>,
    gcn_pres: Vec<Array2<T>>,
    final_h: Array2<T>,
    mlp_inputs: Vec<Array1<T>>,
    mlp_pres: Vec<Array1<T>>,
    raw: T,
}

fn forward_trace<T: Scalar>(
    w: &ModelWeights<T>,
    ag: &ArchGraph<T>,
    device_index: usize,
) -> Result<ForwardTrace<T>> {
    if ag.encoding_version != w.config.encoding_version {
        return Err(Error::InvalidInput(format!(
            "architecture graph encoding v{} does not match model encoding v{}",
            ag.encoding_version, w.config.encoding_version
        )));
    }
    if device_index >= w.config.num_devices {
        return Err(Error::InvalidInput(format!(
            "device index {device_index} out of range for {} devices",
            w.config.num_devices
        )));
    }
    if ag.features.ncols() != FEATURE_DIM {
        return Err(Error::InvalidInput(format!(
            "feature width {} != {FEATURE_DIM}",
            ag.features.ncols()
        )));
    }
    let m = ag.num_nodes();
    let mut prop = Array2::<T>::zeros((m, m));
    for ((i, j), v) in ag.adjacency.indexed_iter() {
        if *v != 0 {
            prop[[i, j]] = T::one();
        }
    }
    for i in 0..m {
        prop[[i, i]] += T::one();
    }

    let slope = T::from_real(w.config.leaky_slope);
    let mut h = ag.features.clone();
    let mut gcn_inputs = Vec::with_capacity(3);
    let mut gcn_pres = Vec::with_capacity(3);
    for layer in 0..3 {
        let x = prop.dot(&h);
        let pre = x.dot(w.weight(layer)) + w.bias(layer);
        check_finite(&pre, &format!("gcn layer {}", layer + 1))?;
        h = pre.mapv(relu);
        gcn_inputs.push(x);
        gcn_pres.push(pre);
    }

    let readout: Array1<T> = match w.config.readout {
        Readout::GlobalNode => h.row(ag.global_index()).to_owned(),
        Readout::MeanPool => {
            let scale = T::from_real(1.0 / m as f64);
            h.t().dot(&Array1::from_elem(m, scale))
        }
    };

    let mut head_input = Array1::<T>::zeros(readout.len() + w.config.num_devices);
    for (i, v) in readout.iter().enumerate() {
        head_input[i] = *v;
    }
    head_input[readout.len() + device_index] = T::one();

    let mut z = head_input;
    let mut mlp_inputs = Vec::with_capacity(3);
    let mut mlp_pres = Vec::with_capacity(3);
    for layer in 0..3 {
        let weight = w.weight(3 + layer);
        let bias = w.bias(3 + layer);
        let pre = z.dot(weight) + bias.row(0);
        if pre.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mlp layer {}", layer + 1)));
        }
        mlp_inputs.push(z);
        z = pre.mapv(|v| leaky(v, slope));
        mlp_pres.push(pre);
    }
    let raw = z[0];

    Ok(ForwardTrace {
        prop,
        gcn_inputs,
        gcn_pres,
        final_h: h,
        mlp_inputs,
        mlp_pres,
        raw,
    })
}

/// Raw network output: leaky-relu of the perceptron over the graph encoding.
pub fn forward<T: Scalar>(
    w: &ModelWeights<T>,
    ag: &ArchGraph<T>,
    device_index: usize,
) -> Result<T> {
    Ok(forward_trace(w, ag, device_index)?.raw)
}

/// Metric-scale prediction: exponentiates the raw output in log-space mode.
pub fn predict<T: Scalar>(
    w: &ModelWeights<T>,
    ag: &ArchGraph<T>,
    device_index: usize,
) -> Result<T> {
    let raw = forward(w, ag, device_index)?;
    if w.config.log_space {
        Ok(raw.exp() * T::from_real(w.target_scale))
    } else {
        Ok(raw)
    }
}

/// Mean absolute percentage error.
pub fn mape_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "mape needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let mut total = T::zero();
    for (p, t) in pred.iter().zip(target) {
        if !(*t > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "mape target must be positive, got {t}"
            )));
        }
        total += ((*p - *t) / *t).abs();
    }
    Ok(total / T::from_real(pred.len() as f64))
}

/// One encodable training sample.
pub struct PreparedSample<T: Scalar> {
    pub key: String,
    pub graph: ArchGraph<T>,
    pub device_index: usize,
    pub target: f64,
}

/// Encode dataset samples for the given metric against a device list.
pub fn prepare_samples<T: Scalar>(
    samples: &[LabeledSample],
    devices: &[String],
    target: TargetMetric,
) -> Result<Vec<PreparedSample<T>>> {
    samples
        .iter()
        .map(|sample| {
            let device_index = devices
                .iter()
                .position(|d| *d == sample.record.device)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("unknown device {}", sample.record.device))
                })?;
            let value = target.label_of(sample);
            if !(value > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "record {} has non-positive target {value}",
                    sample.key
                )));
            }
            Ok(PreparedSample {
                key: sample.key.clone(),
                graph: build_arch_graph(&sample.record.genotype, &sample.record.stats)?,
                device_index,
                target: value,
            })
        })
        .collect()
}

/// Mean MAPE and its gradients over a batch, in model-tensor order.
///
/// The loss is taken on the metric scale, so log-space models backpropagate
/// through the exponentiation.
pub fn mape_gradients<T: Scalar>(
    w: &ModelWeights<T>,
    batch: &[(&ArchGraph<T>, usize, f64)],
) -> Result<(f64, TensorSet<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let slope = T::from_real(w.config.leaky_slope);
    let scale = T::from_real(w.target_scale);
    let mut grads = zeros_like(w);
    let mut loss = 0.0f64;
    let inv_batch = 1.0 / batch.len() as f64;

    for (ag, device_index, target) in batch {
        let trace = forward_trace(w, ag, *device_index)?;
        let target_t = T::from_real(*target);
        let pred = if w.config.log_space {
            trace.raw.exp() * scale
        } else {
            trace.raw
        };
        let err = pred - target_t;
        loss += (err / target_t).abs().to_real() * inv_batch;

        // d loss / d pred, then back through the optional exponentiation.
        let sign = if err > T::zero() {
            T::one()
        } else if err < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        let dpred = sign / target_t * T::from_real(inv_batch);
        let dout = if w.config.log_space {
            dpred * trace.raw.exp() * scale
        } else {
            dpred
        };

        // Perceptron backward.
        let mut dvec: Option<Array1<T>> = None;
        for layer in (0..3).rev() {
            let pre = &trace.mlp_pres[layer];
            let dact: Array1<T> = match &dvec {
                None => {
                    let d = if pre[0] > T::zero() { dout } else { dout * slope };
                    Array1::from_elem(1, d)
                }
                Some(upstream) => Zip::from(upstream)
                    .and(pre)
                    .map_collect(|du, p| if *p > T::zero() { *du } else { *du * slope }),
            };
            let input = &trace.mlp_inputs[layer];
            let gw = &mut grads[2 * (3 + layer)];
            for (i, xin) in input.iter().enumerate() {
                for (j, d) in dact.iter().enumerate() {
                    gw[[i, j]] += *xin * *d;
                }
            }
            let gb = &mut grads[2 * (3 + layer) + 1];
            for (j, d) in dact.iter().enumerate() {
                gb[[0, j]] += *d;
            }
            dvec = Some(w.weight(3 + layer).dot(&dact));
        }
        let dhead = dvec.expect("three mlp layers ran");

        // Split the head gradient: readout part flows into the GCN stack.
        let d3 = trace.final_h.ncols();
        let mut dh = Array2::<T>::zeros(trace.final_h.dim());
        match w.config.readout {
            Readout::GlobalNode => {
                let global = ag.global_index();
                for j in 0..d3 {
                    dh[[global, j]] = dhead[j];
                }
            }
            Readout::MeanPool => {
                let m = trace.final_h.nrows();
                let inv_m = T::from_real(1.0 / m as f64);
                for i in 0..m {
                    for j in 0..d3 {
                        dh[[i, j]] = dhead[j] * inv_m;
                    }
                }
            }
        }

        // GCN backward.
        for layer in (0..3).rev() {
            let pre = &trace.gcn_pres[layer];
            let dpre = Zip::from(&dh)
                .and(pre)
                .map_collect(|du, p| if *p > T::zero() { *du } else { T::zero() });
            let x = &trace.gcn_inputs[layer];
            grads[2 * layer] = &grads[2 * layer] + &x.t().dot(&dpre);
            let gb = &mut grads[2 * layer + 1];
            for j in 0..dpre.ncols() {
                let mut acc = T::zero();
                for i in 0..dpre.nrows() {
                    acc += dpre[[i, j]];
                }
                gb[[0, j]] += acc;
            }
            if layer > 0 {
                dh = trace.prop.t().dot(&dpre).dot(&w.weight(layer).t());
            }
        }
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite("batch loss".into()));
    }
    Ok((loss, grads))
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub target: TargetMetric,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    pub split_fraction: f64,
}

impl TrainConfig {
    pub fn latency_defaults() -> Self {
        TrainConfig {
            target: TargetMetric::Latency,
            epochs: 250,
            batch_size: 32,
            learning_rate: 0.0008,
            weight_decay: 0.0,
            plateau_factor: 0.5,
            plateau_patience: 10,
            seed: 7,
            split_fraction: 0.7,
        }
    }

    pub fn memory_defaults() -> Self {
        TrainConfig {
            target: TargetMetric::PeakMemory,
            batch_size: 16,
            learning_rate: 0.0003,
            ..Self::latency_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::Config("plateau_factor must be in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning rate schedule: when the observed metric fails
/// to improve for `patience` consecutive epochs, multiply the rate by
/// `factor`.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr: initial_lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, metric: f64) {
        if metric < self.best {
            self.best = metric;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.factor;
                self.bad_epochs = 0;
            }
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mape: f64,
    pub val_mape: f64,
    pub learning_rate: f64,
}

pub type TrainHistory = Vec<EpochStats>;

fn split_hash(key: &str) -> f64 {
    let digest = Sha256::digest(key.as_bytes());
    let raw = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
    raw as f64 / 2.0f64.powi(64)
}

/// Deterministically split by hash of the sample key, stable under
/// reordering. Both halves keep the parent's device list so device indices
/// stay aligned.
pub fn hash_split(dataset: &LabeledDataset, fraction: f64) -> (LabeledDataset, LabeledDataset) {
    let mut train = LabeledDataset {
        devices: dataset.devices.clone(),
        ..LabeledDataset::default()
    };
    let mut val = LabeledDataset {
        devices: dataset.devices.clone(),
        ..LabeledDataset::default()
    };
    for sample in &dataset.samples {
        if split_hash(&sample.key) < fraction {
            train.samples.push(sample.clone());
        } else {
            val.samples.push(sample.clone());
        }
    }
    (train, val)
}

struct AdamW<T: Scalar> {
    m: TensorSet<T>,
    v: TensorSet<T>,
    step: i32,
    weight_decay: f64,
}

impl<T: Scalar> AdamW<T> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(w: &ModelWeights<T>, weight_decay: f64) -> Self {
        AdamW {
            m: zeros_like(w),
            v: zeros_like(w),
            step: 0,
            weight_decay,
        }
    }

    fn update(&mut self, w: &mut ModelWeights<T>, grads: &TensorSet<T>, lr: f64) {
        self.step += 1;
        let b1 = T::from_real(Self::BETA1);
        let b2 = T::from_real(Self::BETA2);
        let one = T::one();
        let corr1 = T::from_real(1.0 - Self::BETA1.powi(self.step));
        let corr2 = T::from_real(1.0 - Self::BETA2.powi(self.step));
        let eps = T::from_real(Self::EPS);
        let lr_t = T::from_real(lr);
        let decay = T::from_real(lr * self.weight_decay);
        for (idx, tensor) in w.tensors_mut().iter_mut().enumerate() {
            let grad = &grads[idx];
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            Zip::from(tensor)
                .and(grad)
                .and(m)
                .and(v)
                .for_each(|wv, g, mv, vv| {
                    *mv = b1 * *mv + (one - b1) * *g;
                    *vv = b2 * *vv + (one - b2) * *g * *g;
                    let m_hat = *mv / corr1;
                    let v_hat = *vv / corr2;
                    *wv = *wv - lr_t * (m_hat / (v_hat.sqrt() + eps)) - decay * *wv;
                });
        }
    }
}

fn mean_mape<T: Scalar>(w: &ModelWeights<T>, samples: &[PreparedSample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for sample in samples {
        let pred = predict(w, &sample.graph, sample.device_index)?.to_real();
        total += ((pred - sample.target) / sample.target).abs();
    }
    Ok(total / samples.len() as f64)
}

/// Train the model on the dataset, returning the trained weights and the
/// per-epoch history. Deterministic for a given seed and dataset order.
pub fn train<T: Scalar>(
    w: ModelWeights<T>,
    dataset: &LabeledDataset,
    tc: &TrainConfig,
) -> Result<(ModelWeights<T>, TrainHistory)> {
    tc.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training dataset is empty".into()));
    }
    if dataset.devices.len() > w.config.num_devices {
        return Err(Error::Config(format!(
            "dataset has {} devices but the model supports {}",
            dataset.devices.len(),
            w.config.num_devices
        )));
    }

    let (train_split, val_split) = hash_split(dataset, tc.split_fraction);
    let (train_split, val_split) = if train_split.is_empty() {
        (val_split, train_split)
    } else {
        (train_split, val_split)
    };
    let train_samples = prepare_samples::<T>(&train_split.samples, &dataset.devices, tc.target)?;
    let val_samples = prepare_samples::<T>(&val_split.samples, &dataset.devices, tc.target)?;

    let mut w = w;
    if w.config.log_space {
        // Anchor the scale below every training target so the network only
        // needs non-negative outputs, then calibrate the output bias to the
        // mean log target. Without the calibration the exp-through-MAPE
        // gradient crawls: its magnitude is pred/target while the model
        // underpredicts, and the bias would need thousands of optimizer
        // steps to cross several nats.
        let min_target = train_samples
            .iter()
            .map(|s| s.target)
            .fold(f64::INFINITY, f64::min);
        w.target_scale = min_target / 2.0;
        let mean_log_target = train_samples
            .iter()
            .map(|s| (s.target / w.target_scale).ln())
            .sum::<f64>()
            / train_samples.len() as f64;
        let mut mean_raw = 0.0;
        for sample in &train_samples {
            mean_raw += forward(&w, &sample.graph, sample.device_index)?.to_real();
        }
        mean_raw /= train_samples.len() as f64;
        let shift = T::from_real(mean_log_target - mean_raw);
        let out_bias = w.tensors_mut().last_mut().expect("output bias tensor");
        out_bias.mapv_inplace(|b| b + shift);
    }

    let mut optimizer = AdamW::new(&w, tc.weight_decay);
    let mut scheduler = PlateauScheduler::new(tc.learning_rate, tc.plateau_factor, tc.plateau_patience);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    let mut history = TrainHistory::new();

    for epoch in 0..tc.epochs {
        let lr = scheduler.learning_rate();
        // Fisher-Yates over the index order, seeded once per run.
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(tc.batch_size).enumerate() {
            let batch: Vec<(&ArchGraph<T>, usize, f64)> = chunk
                .iter()
                .map(|i| {
                    let s = &train_samples[*i];
                    (&s.graph, s.device_index, s.target)
                })
                .collect();
            let (loss, grads) = mape_gradients(&w, &batch).map_err(|e| match e {
                Error::NonFinite(stage) => {
                    Error::NonFinite(format!("epoch {epoch} batch {batch_idx}: {stage}"))
                }
                other => other,
            })?;
            epoch_loss += loss * chunk.len() as f64;
            optimizer.update(&mut w, &grads, lr);
        }
        let train_mape = epoch_loss / train_samples.len() as f64;
        let val_mape = if val_samples.is_empty() {
            train_mape
        } else {
            mean_mape(&w, &val_samples)?
        };
        if !train_mape.is_finite() || !val_mape.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch} metrics")));
        }
        history.push(EpochStats {
            epoch,
            train_mape,
            val_mape,
            learning_rate: lr,
        });
        scheduler.observe(val_mape);
    }

    Ok((w, history))
}

/// Copy trained weights into a new model with the recipient's configuration.
pub fn warm_start<T: Scalar>(
    target: &ModelWeights<T>,
    source: &ModelWeights<T>,
) -> Result<ModelWeights<T>> {
    let t = &target.config;
    let s = &source.config;
    if t.gcn_dims != s.gcn_dims || t.mlp_dims != s.mlp_dims || t.num_devices != s.num_devices {
        return Err(Error::Config(format!(
            "warm start shape mismatch: {:?}/{:?} vs {:?}/{:?}",
            t.gcn_dims, t.mlp_dims, s.gcn_dims, s.mlp_dims
        )));
    }
    if t.encoding_version != s.encoding_version {
        return Err(Error::Config(format!(
            "warm start encoding mismatch: v{} vs v{}",
            t.encoding_version, s.encoding_version
        )));
    }
    ModelWeights::from_tensors(t.clone(), source.target_scale, source.tensors.clone())
}

/// Per-bound within-error fraction.
#[derive(Debug, Clone, Serialize)]
pub struct BoundAccuracy {
    pub bound: f64,
    pub fraction: f64,
}

/// Evaluation metrics: overall MAPE plus within-bound fractions.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub mape: f64,
    pub bounds: Vec<BoundAccuracy>,
}

/// Compute MAPE and within-bound fractions from prediction/target pairs.
pub fn error_bound_metrics(preds: &[f64], targets: &[f64], bounds: &[f64]) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::InvalidInput("empty or mismatched evaluation set".into()));
    }
    let mut mape = 0.0;
    let mut within = vec![0usize; bounds.len()];
    for (p, t) in preds.iter().zip(targets) {
        if !(*t > 0.0) {
            return Err(Error::InvalidInput(format!(
                "evaluation target must be positive, got {t}"
            )));
        }
        let rel = ((p - t) / t).abs();
        mape += rel;
        for (slot, bound) in bounds.iter().enumerate() {
            if rel <= *bound {
                within[slot] += 1;
            }
        }
    }
    let n = preds.len() as f64;
    Ok(EvalReport {
        mape: mape / n,
        bounds: bounds
            .iter()
            .zip(within)
            .map(|(bound, count)| BoundAccuracy {
                bound: *bound,
                fraction: count as f64 / n,
            })
            .collect(),
    })
}

/// Evaluate the model on a dataset for the given metric.
pub fn evaluate<T: Scalar>(
    w: &ModelWeights<T>,
    dataset: &LabeledDataset,
    target: TargetMetric,
    bounds: &[f64],
) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("evaluation dataset is empty".into()));
    }
    let samples = prepare_samples::<T>(&dataset.samples, &dataset.devices, target)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for sample in &samples {
        preds.push(predict(w, &sample.graph, sample.device_index)?.to_real());
        targets.push(sample.target);
    }
    error_bound_metrics(&preds, &targets, bounds)
}
