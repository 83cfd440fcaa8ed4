//! Synthetic ground truth: networks, consumer loads, and the three noise
//! sources (technical losses, meter accuracy error, clock-sync error).
//!
//! Every random draw comes from a ChaCha stream keyed by `(seed, source)`, so
//! switching one noise source on or off never shifts the draws of another.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, Layer, LayeredNetwork, NodeId, NodeLabel, Role};
use crate::noise::NoiseStats;
use crate::readings::{ReadingsError, ReadingsMatrix};

/// Upper bounds (Wh) of the three uniform consumer load ranges, each starting at 0.
pub const CONSUMER_LOAD_RANGES_WH: [f64; 3] = [100.0, 300.0, 500.0];

/// Relative distances are drawn uniformly from `1..=MAX_RELATIVE_DISTANCE`.
pub const MAX_RELATIVE_DISTANCE: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid range ({0}, {1})")]
    InvalidRange(usize, usize),
    #[error("need at least one sample")]
    NoSamples,
    #[error("relative distance of node {0} must be positive")]
    NonPositiveDistance(NodeId),
    #[error("no readings row for lowest-layer node {0}")]
    MissingChildRow(NodeId),
    #[error("infeasible load spec (avg {avg_kw} kW, peak {peak_kw} kW): need 0 <= 2*avg - peak <= avg <= peak")]
    InfeasibleLoadSpec { avg_kw: f64, peak_kw: f64 },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid noise config: {0}")]
    InvalidNoiseConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Readings(#[from] ReadingsError),
}

#[derive(Copy, Clone, Debug)]
#[repr(u64)]
enum Stream {
    Topology = 1,
    LoadClass = 2,
    Load = 3,
    Distance = 4,
    MeterError = 5,
    SyncError = 6,
}

fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Noise injection settings, also consumed by the estimators (`α`, `T`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Loss percentages are mapped onto `[low, high]`.
    pub loss_pct_range: (f64, f64),
    /// Meter accuracy class in percent of reading (0.2 or 0.5 for ANSI meters).
    pub accuracy_class_pct: f64,
    /// Minutes per reading.
    pub interval_minutes: f64,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            loss_pct_range: (5.0, 10.0),
            accuracy_class_pct: 0.5,
            interval_minutes: 15.0,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let (lo, hi) = self.loss_pct_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SimError::InvalidNoiseConfig(format!(
                "loss range ({lo}, {hi}) must satisfy 0 <= low <= high"
            )));
        }
        if !(self.accuracy_class_pct > 0.0 && self.accuracy_class_pct.is_finite()) {
            return Err(SimError::InvalidNoiseConfig(format!(
                "accuracy class {} must be positive",
                self.accuracy_class_pct
            )));
        }
        if !(self.interval_minutes >= 1.0 && self.interval_minutes.is_finite()) {
            return Err(SimError::InvalidNoiseConfig(format!(
                "interval {} must be at least one minute",
                self.interval_minutes
            )));
        }
        Ok(())
    }
}

/// Realised per-interval total loss of one layer pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairLoss {
    pub parent_level: u32,
    pub per_interval: Vec<f64>,
}

/// Exactly what was injected: per-node statistics (indexed by `NodeId`) and
/// per-pair loss series.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InjectedNoise {
    pub stats: NoiseStats,
    pub pair_losses: Vec<PairLoss>,
    pub config: Option<NoiseConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub network: LayeredNetwork,
    pub true_readings: ReadingsMatrix,
    pub noisy_readings: ReadingsMatrix,
    pub injected: InjectedNoise,
}

impl GroundTruth {
    /// Ground truth with no noise: measured readings equal the true ones.
    pub fn noise_free(network: LayeredNetwork, true_readings: ReadingsMatrix) -> Self {
        let n = network.node_count();
        let zeros = vec![0.0; n];
        let stats = NoiseStats {
            mu_lambda: zeros.clone(),
            sigma_lambda: zeros.clone(),
            sigma_epsilon: zeros.clone(),
            sigma_delta: zeros.clone(),
            sigma_e: zeros,
            mu_t: 0.0,
            var_lt: 0.0,
        };
        Self {
            network,
            noisy_readings: true_readings.clone(),
            true_readings,
            injected: InjectedNoise {
                stats,
                pair_losses: Vec::new(),
                config: None,
            },
        }
    }

    pub fn n_samples(&self) -> usize {
        self.true_readings.n_samples()
    }
}

/// How many readings to simulate.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SampleCount {
    Fixed(usize),
    /// Multiple of the number of lowest-layer (independent) nodes `n_i`.
    PerIndependent(f64),
    /// Multiple of the total node count `n`.
    PerNode(f64),
}

impl SampleCount {
    pub fn resolve(self, net: &LayeredNetwork) -> usize {
        let base = |m: f64, count: usize| (m * count as f64).ceil().max(1.0) as usize;
        match self {
            SampleCount::Fixed(n) => n,
            SampleCount::PerIndependent(m) => base(m, net.layers()[0].len()),
            SampleCount::PerNode(m) => base(m, net.node_count()),
        }
    }
}

/// Three phase meters (ids 0..3, level 2) over consumers whose per-phase
/// counts are drawn uniformly from `consumers_per_phase`.
pub fn gen_phase_network(
    consumers_per_phase: (usize, usize),
    seed: u64,
) -> Result<LayeredNetwork, SimError> {
    let (lo, hi) = consumers_per_phase;
    if lo == 0 || lo > hi {
        return Err(SimError::InvalidRange(lo, hi));
    }
    let mut rng = rng_for(seed, Stream::Topology);
    let counts: Vec<usize> = (0..3).map(|_| rng.random_range(lo..=hi)).collect();
    let mut assignment: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(phase, &c)| std::iter::repeat_n(phase, c))
        .collect();
    assignment.shuffle(&mut rng);

    let mut labels: Vec<NodeLabel> = ["A", "B", "C"]
        .iter()
        .map(|p| NodeLabel::new(format!("P{p}"), Role::TransformerPhase))
        .collect();
    labels.extend(
        (1..=assignment.len()).map(|k| NodeLabel::new(format!("C{k}"), Role::Consumer)),
    );
    let n = labels.len();
    let layers = vec![
        Layer::new(1, (3..n).map(NodeId).collect()),
        Layer::new(2, (0..3).map(NodeId).collect()),
    ];
    let edges = assignment
        .iter()
        .enumerate()
        .map(|(k, &phase)| (NodeId(phase), NodeId(3 + k)));
    Ok(LayeredNetwork::new(labels, layers, edges)?)
}

/// A random layered forest with `layer_sizes[l]` nodes at level `l + 1`.
///
/// Each node picks a parent in the layer above; the first `|parents|` nodes
/// are dealt round-robin so no parent is childless. Requires non-increasing
/// sizes going up.
pub fn gen_random_layered(layer_sizes: &[usize], seed: u64) -> Result<LayeredNetwork, SimError> {
    if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
        return Err(SimError::InvalidSpec(format!(
            "need at least two non-empty layers, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.windows(2).any(|w| w[1] > w[0]) {
        return Err(SimError::InvalidSpec(
            "every parent needs a child: layer sizes must not grow upwards".into(),
        ));
    }
    let mut rng = rng_for(seed, Stream::Topology);
    // Ids are assigned top layer first.
    let mut start = Vec::with_capacity(layer_sizes.len());
    let mut next = 0;
    for &size in layer_sizes.iter().rev() {
        start.push(next);
        next += size;
    }
    start.reverse();

    let mut labels = vec![NodeLabel::new("", Role::Unspecified); next];
    let mut layers = Vec::new();
    let mut edges = Vec::new();
    for (l, &size) in layer_sizes.iter().enumerate() {
        let ids: Vec<NodeId> = (start[l]..start[l] + size).map(NodeId).collect();
        for (k, id) in ids.iter().enumerate() {
            let role = if l == 0 {
                Role::Consumer
            } else {
                Role::Unspecified
            };
            labels[id.0] = NodeLabel::new(format!("L{}-{}", l + 1, k + 1), role);
        }
        if l + 1 < layer_sizes.len() {
            let n_parents = layer_sizes[l + 1];
            let mut parent_idx: Vec<usize> = (0..size)
                .map(|k| {
                    if k < n_parents {
                        k
                    } else {
                        rng.random_range(0..n_parents)
                    }
                })
                .collect();
            parent_idx.shuffle(&mut rng);
            for (k, p) in parent_idx.into_iter().enumerate() {
                edges.push((NodeId(start[l + 1] + p), ids[k]));
            }
        }
        layers.push(Layer::new(l as u32 + 1, ids));
    }
    Ok(LayeredNetwork::new(labels, layers, edges)?)
}

fn load_classes(consumers: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, Stream::LoadClass);
    (0..consumers)
        .map(|_| CONSUMER_LOAD_RANGES_WH[rng.random_range(0..CONSUMER_LOAD_RANGES_WH.len())])
        .collect()
}

/// The `(0, upper)` range each lowest-layer node draws from under `seed`.
pub fn assigned_load_ranges(net: &LayeredNetwork, seed: u64) -> Vec<(f64, f64)> {
    load_classes(net.layers()[0].len(), seed)
        .into_iter()
        .map(|b| (0.0, b))
        .collect()
}

/// Lowest-layer readings: each consumer picks one of three uniform ranges
/// with equal probability and draws `n_samples` i.i.d. values from it.
pub fn gen_consumer_loads(
    net: &LayeredNetwork,
    n_samples: usize,
    seed: u64,
) -> Result<ReadingsMatrix, SimError> {
    if n_samples == 0 {
        return Err(SimError::NoSamples);
    }
    let consumers = &net.layers()[0].members;
    let uppers = load_classes(consumers.len(), seed);
    let mut rng = rng_for(seed, Stream::Load);
    let mut values = Array2::<f64>::zeros((consumers.len(), n_samples));
    for (mut row, &upper) in values.axis_iter_mut(Axis(0)).zip(&uppers) {
        let dist = Uniform::new_inclusive(0.0, upper).expect("finite range");
        row.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    }
    Ok(ReadingsMatrix::new(values, consumers.clone(), 15.0)?)
}

/// Fills every parent row with the sum of its children, layer by layer.
/// Output rows are in `NodeId` order.
pub fn aggregate_up(
    net: &LayeredNetwork,
    consumer_readings: &ReadingsMatrix,
) -> Result<ReadingsMatrix, SimError> {
    let n_samples = consumer_readings.n_samples();
    let mut values = Array2::<f64>::zeros((net.node_count(), n_samples));
    for &c in &net.layers()[0].members {
        let row = consumer_readings
            .row(c)
            .ok_or(SimError::MissingChildRow(c))?;
        values.row_mut(c.0).assign(&row);
    }
    for level in 2..=net.top_level() {
        for (parent, children) in net.children_by_parent(level) {
            let mut acc = Array1::<f64>::zeros(n_samples);
            for c in children {
                acc += &values.row(c.0);
            }
            values.row_mut(parent.0).assign(&acc);
        }
    }
    Ok(ReadingsMatrix::dense(
        values,
        consumer_readings.interval_minutes(),
    )?)
}

fn population_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Affinely maps `products` onto `[lo, hi]`; a constant input maps to the midpoint.
fn scale_onto(products: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = products.iter().copied().fold(f64::INFINITY, f64::min);
    let max = products.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    products
        .iter()
        .map(|&p| {
            if max > min {
                lo + (hi - lo) * (p - min) / (max - min)
            } else {
                0.5 * (lo + hi)
            }
        })
        .collect()
}

/// Adds technical losses to every parent row, starting from the true readings.
///
/// For each layer pair, child `c` gets a loss percentage from the affine map
/// of `distance[c] * mean(reading_c)` onto `cfg.loss_pct_range`; its loss in
/// interval `j` is that percentage of its (already loss-loaded) reading and is
/// booked on its parent. `distances` is indexed by `NodeId`; top-layer entries
/// are ignored. The result's noisy readings carry losses only.
pub fn inject_losses(
    gt: &GroundTruth,
    cfg: &NoiseConfig,
    distances: &[f64],
) -> Result<GroundTruth, SimError> {
    let net = &gt.network;
    let top = net.top_level();
    for layer in net.layers().iter().filter(|l| l.level < top) {
        for &m in &layer.members {
            match distances.get(m.0) {
                Some(&d) if d > 0.0 && d.is_finite() => {}
                _ => return Err(SimError::NonPositiveDistance(m)),
            }
        }
    }

    let (lo, hi) = cfg.loss_pct_range;
    let truth = gt.true_readings.values();
    let n_samples = truth.ncols();
    let mut loaded = truth.to_owned();
    let mut node_loss = Array2::<f64>::zeros(truth.dim());
    let mut pair_losses = Vec::new();

    for level in 2..=top {
        let children = &net.layer(level - 1).expect("level exists").members;
        let products: Vec<f64> = children
            .iter()
            .map(|&c| {
                let mean = loaded.row(c.0).mean().unwrap_or(0.0);
                distances[c.0] * mean
            })
            .collect();
        let pct = scale_onto(&products, lo, hi);
        let pct_of: std::collections::HashMap<NodeId, f64> =
            children.iter().copied().zip(pct).collect();

        let mut total = vec![0.0; n_samples];
        for (parent, kids) in net.children_by_parent(level) {
            let mut sum = Array1::<f64>::zeros(n_samples);
            let mut loss = Array1::<f64>::zeros(n_samples);
            for c in kids {
                let row = loaded.row(c.0);
                sum += &row;
                loss.scaled_add(pct_of[&c] / 100.0, &row);
            }
            let row = &sum + &loss;
            loaded.row_mut(parent.0).assign(&row);
            for (t, l) in total.iter_mut().zip(loss.iter()) {
                *t += l;
            }
            node_loss.row_mut(parent.0).assign(&loss);
        }
        pair_losses.push(PairLoss {
            parent_level: level,
            per_interval: total,
        });
    }

    let mut stats = gt.injected.stats.clone();
    for (k, row) in node_loss.axis_iter(Axis(0)).enumerate() {
        let (mean, var) = population_var(row.as_slice().expect("standard layout"));
        stats.mu_lambda[k] = mean;
        stats.sigma_lambda[k] = var;
    }
    let overall: Vec<f64> = node_loss.sum_axis(Axis(0)).to_vec();
    let (mu_t, var_lt) = population_var(&overall);
    stats.mu_t = mu_t;
    stats.var_lt = var_lt;
    stats.refresh_total();

    Ok(GroundTruth {
        network: gt.network.clone(),
        true_readings: gt.true_readings.clone(),
        noisy_readings: gt.true_readings.with_values(loaded),
        injected: InjectedNoise {
            stats,
            pair_losses,
            config: Some(cfg.clone()),
        },
    })
}

/// Standard deviation of meter error: `3σ` equals `α` percent of the mean reading.
pub fn meter_error_sigma(row_mean: f64, accuracy_class_pct: f64) -> f64 {
    accuracy_class_pct / 100.0 * row_mean.abs() / 3.0
}

/// Standard deviation of clock-sync error: the reading change caused by a
/// one-second shift of a `T`-minute interval.
pub fn sync_error_sigma(row_mean: f64, interval_minutes: f64) -> f64 {
    row_mean.abs() / (60.0 * interval_minutes)
}

fn add_row_gaussian(
    readings: &ReadingsMatrix,
    sigma_of_mean: impl Fn(f64) -> f64,
    mut rng: ChaCha8Rng,
) -> (ReadingsMatrix, Vec<f64>) {
    let means = readings.row_means();
    let mut out = readings.clone();
    let mut variances = Vec::with_capacity(means.len());
    for (mut row, &mean) in out.values_mut().axis_iter_mut(Axis(0)).zip(means.iter()) {
        let sigma = sigma_of_mean(mean);
        variances.push(sigma * sigma);
        let dist = Normal::new(0.0, sigma).expect("finite sigma");
        row.iter_mut().for_each(|v| *v += dist.sample(&mut rng));
    }
    (out, variances)
}

/// Adds zero-mean Gaussian meter error with `σ_i = (α/100)·mean_i/3` per row.
pub fn inject_meter_error(readings: &ReadingsMatrix, cfg: &NoiseConfig, seed: u64) -> ReadingsMatrix {
    let alpha = cfg.accuracy_class_pct;
    add_row_gaussian(
        readings,
        |m| meter_error_sigma(m, alpha),
        rng_for(seed, Stream::MeterError),
    )
    .0
}

/// Adds zero-mean Gaussian clock-sync error with `σ_i = mean_i/(60·T)` per row.
pub fn inject_sync_error(readings: &ReadingsMatrix, cfg: &NoiseConfig, seed: u64) -> ReadingsMatrix {
    let t = cfg.interval_minutes;
    add_row_gaussian(
        readings,
        |m| sync_error_sigma(m, t),
        rng_for(seed, Stream::SyncError),
    )
    .0
}

/// Relative distances in `1..=MAX_RELATIVE_DISTANCE` for every node (`NodeId`-indexed).
pub fn gen_distances(net: &LayeredNetwork, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, Stream::Distance);
    (0..net.node_count())
        .map(|_| f64::from(rng.random_range(1..=MAX_RELATIVE_DISTANCE)))
        .collect()
}

/// Losses, then meter error, then sync error, all keyed by `cfg.rng_seed`.
/// `gt` must be noise-free.
pub fn apply_noise(gt: &GroundTruth, cfg: &NoiseConfig) -> Result<GroundTruth, SimError> {
    cfg.validate()?;
    let distances = gen_distances(&gt.network, cfg.rng_seed);
    let mut out = inject_losses(gt, cfg, &distances)?;

    let alpha = cfg.accuracy_class_pct;
    let (metered, eps) = add_row_gaussian(
        &out.noisy_readings,
        |m| meter_error_sigma(m, alpha),
        rng_for(cfg.rng_seed, Stream::MeterError),
    );
    let t = cfg.interval_minutes;
    let (synced, delta) = add_row_gaussian(
        &metered,
        |m| sync_error_sigma(m, t),
        rng_for(cfg.rng_seed, Stream::SyncError),
    );
    out.noisy_readings = synced;
    out.injected.stats.sigma_epsilon = eps;
    out.injected.stats.sigma_delta = delta;
    out.injected.stats.refresh_total();
    Ok(out)
}

/// Consumer loads per the uniform three-range model, summed up the network,
/// then optionally corrupted.
pub fn simulate_network(
    network: LayeredNetwork,
    samples: SampleCount,
    noise: Option<&NoiseConfig>,
    seed: u64,
) -> Result<GroundTruth, SimError> {
    let n_samples = samples.resolve(&network);
    let interval = noise.map_or(15.0, |c| c.interval_minutes);
    let loads = gen_consumer_loads(&network, n_samples, seed)?;
    let loads = ReadingsMatrix::new(loads.into_values(), network.layers()[0].members.clone(), interval)?;
    let truth = aggregate_up(&network, &loads)?;
    let gt = GroundTruth::noise_free(network, truth);
    match noise {
        Some(cfg) => apply_noise(&gt, cfg),
        None => Ok(gt),
    }
}

/// The full phase-identification protocol: random three-phase network, loads,
/// and (optionally) all three noise sources.
pub fn simulate_phase(
    consumers_per_phase: (usize, usize),
    samples: SampleCount,
    noise: Option<&NoiseConfig>,
    seed: u64,
) -> Result<GroundTruth, SimError> {
    let net = gen_phase_network(consumers_per_phase, seed)?;
    simulate_network(net, samples, noise, seed)
}

/// A block of identical customers on one transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadGroup {
    pub count: usize,
    /// Three-phase customers get one meter node per phase.
    #[serde(default)]
    pub three_phase: bool,
    pub avg_kw: f64,
    pub peak_kw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub loads: Vec<LoadGroup>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub transformers: Vec<TransformerSpec>,
}

/// Layer-size description of a multi-layer radial network.
///
/// Layers from the top: optional substation, feeders, transformers,
/// consumers. With `three_phase` every substation, feeder and transformer
/// contributes one node per phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub three_phase: bool,
    pub substation: bool,
    pub feeders: Vec<FeederSpec>,
}

#[derive(Copy, Clone, Debug, PartialEq)]
struct LoadParams {
    avg_kw: f64,
    peak_kw: f64,
}

impl LoadParams {
    /// Uniform with the given mean and maximum: `U(2·avg − peak, peak)`.
    fn bounds(self) -> (f64, f64) {
        (2.0 * self.avg_kw - self.peak_kw, self.peak_kw)
    }
}

impl NetworkSpec {
    /// Bus-2-scale default: 4 feeders, 22 transformers, 2004 meter nodes.
    pub fn rbts_bus2() -> Self {
        let residential = |count, avg_kw, peak_kw| LoadGroup {
            count,
            three_phase: false,
            avg_kw,
            peak_kw,
        };
        let lp = |groups: Vec<LoadGroup>| TransformerSpec { loads: groups };
        let res_a = || lp(vec![residential(210, 2.548, 4.128)]);
        let res_b = || lp(vec![residential(200, 2.250, 3.645)]);
        let gov = || {
            lp(vec![LoadGroup {
                count: 1,
                three_phase: true,
                avg_kw: 566.0,
                peak_kw: 916.7,
            }])
        };
        let commercial = |count| lp(vec![residential(count, 45.4, 75.0)]);
        let industrial = |avg_kw, peak_kw| {
            lp(vec![LoadGroup {
                count: 1,
                three_phase: true,
                avg_kw,
                peak_kw,
            }])
        };
        let feeder = |transformers| FeederSpec { transformers };
        Self {
            three_phase: true,
            substation: true,
            feeders: vec![
                // LP1-LP7
                feeder(vec![
                    res_a(),
                    res_a(),
                    res_a(),
                    gov(),
                    gov(),
                    commercial(10),
                    commercial(10),
                ]),
                // LP8-LP9
                feeder(vec![industrial(1000.0, 1500.0), industrial(1150.0, 1630.0)]),
                // LP10-LP15
                feeder(vec![res_a(), res_a(), res_b(), gov(), gov(), commercial(10)]),
                // LP16-LP22
                feeder(vec![
                    commercial(10),
                    res_b(),
                    res_b(),
                    res_b(),
                    gov(),
                    gov(),
                    commercial(9),
                ]),
            ],
        }
    }

    /// Single feeder, transformer and consumer, one phase: a three-node chain.
    pub fn chain() -> Self {
        Self {
            three_phase: false,
            substation: false,
            feeders: vec![FeederSpec {
                transformers: vec![TransformerSpec {
                    loads: vec![LoadGroup {
                        count: 1,
                        three_phase: false,
                        avg_kw: 2.0,
                        peak_kw: 3.0,
                    }],
                }],
            }],
        }
    }

    /// Regular three-phase network with identical residential transformers.
    pub fn uniform(feeders: usize, transformers_per_feeder: usize, consumers_per_transformer: usize) -> Self {
        Self {
            three_phase: true,
            substation: true,
            feeders: (0..feeders)
                .map(|_| FeederSpec {
                    transformers: (0..transformers_per_feeder)
                        .map(|_| TransformerSpec {
                            loads: vec![LoadGroup {
                                count: consumers_per_transformer,
                                three_phase: false,
                                avg_kw: 2.5,
                                peak_kw: 4.0,
                            }],
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.feeders.is_empty() {
            return Err(SimError::InvalidSpec("no feeders".into()));
        }
        for f in &self.feeders {
            if f.transformers.is_empty() {
                return Err(SimError::InvalidSpec("feeder without transformers".into()));
            }
            for t in &f.transformers {
                let customers: usize = t.loads.iter().map(|g| g.count).sum();
                if customers == 0 {
                    return Err(SimError::InvalidSpec("transformer without customers".into()));
                }
                for g in &t.loads {
                    if g.three_phase && !self.three_phase {
                        return Err(SimError::InvalidSpec(
                            "three-phase customer in a single-phase network".into(),
                        ));
                    }
                    let feasible = g.avg_kw.is_finite()
                        && g.peak_kw.is_finite()
                        && g.avg_kw <= g.peak_kw
                        && 2.0 * g.avg_kw - g.peak_kw >= 0.0;
                    if !feasible {
                        return Err(SimError::InfeasibleLoadSpec {
                            avg_kw: g.avg_kw,
                            peak_kw: g.peak_kw,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn layer_count(&self) -> usize {
        3 + usize::from(self.substation)
    }

    /// Builds the network; single-phase customers on a three-phase transformer
    /// are spread so that every phase with a chance of load gets one.
    fn build(&self, seed: u64) -> Result<(LayeredNetwork, Vec<Option<LoadParams>>), SimError> {
        self.validate()?;
        let mut rng = rng_for(seed, Stream::Topology);
        let phases: &[&str] = if self.three_phase { &["A", "B", "C"] } else { &[""] };
        let phase_name = |base: String, p: &str| {
            if p.is_empty() {
                base
            } else {
                format!("{base}-{p}")
            }
        };

        let mut labels = Vec::new();
        let mut load = Vec::new();
        let mut level_nodes: Vec<Vec<NodeId>> = vec![Vec::new(); self.layer_count()];
        let mut edges = Vec::new();
        let push = |labels: &mut Vec<NodeLabel>, name: String, role: Role| {
            labels.push(NodeLabel::new(name, role));
            NodeId(labels.len() - 1)
        };

        let top = self.layer_count() - 1;
        let substation: Vec<Option<NodeId>> = if self.substation {
            phases
                .iter()
                .map(|p| {
                    let id = push(&mut labels, phase_name("S".into(), p), Role::Substation);
                    load.push(None);
                    level_nodes[top].push(id);
                    Some(id)
                })
                .collect()
        } else {
            vec![None; phases.len()]
        };

        let mut transformer_count = 0;
        let mut consumer_count = 0;
        let mut consumers: Vec<(Vec<NodeId>, Vec<LoadGroup>)> = Vec::new();
        for (fi, feeder) in self.feeders.iter().enumerate() {
            let feeder_nodes: Vec<NodeId> = phases
                .iter()
                .enumerate()
                .map(|(pi, p)| {
                    let id = push(&mut labels, phase_name(format!("F{}", fi + 1), p), Role::Feeder);
                    load.push(None);
                    level_nodes[2].push(id);
                    if let Some(s) = substation[pi] {
                        edges.push((s, id));
                    }
                    id
                })
                .collect();
            for t in &feeder.transformers {
                transformer_count += 1;
                let t_nodes: Vec<NodeId> = phases
                    .iter()
                    .enumerate()
                    .map(|(pi, p)| {
                        let id = push(
                            &mut labels,
                            phase_name(format!("T{transformer_count}"), p),
                            Role::TransformerPhase,
                        );
                        load.push(None);
                        level_nodes[1].push(id);
                        edges.push((feeder_nodes[pi], id));
                        id
                    })
                    .collect();
                consumers.push((t_nodes, t.loads.clone()));
            }
        }

        for (t_nodes, groups) in consumers {
            let single: usize = groups.iter().filter(|g| !g.three_phase).map(|g| g.count).sum();
            let mut phase_of: Vec<usize> = (0..single)
                .map(|k| {
                    if k < t_nodes.len() {
                        k
                    } else {
                        rng.random_range(0..t_nodes.len())
                    }
                })
                .collect();
            phase_of.shuffle(&mut rng);
            let mut phase_iter = phase_of.into_iter();
            for g in &groups {
                for _ in 0..g.count {
                    consumer_count += 1;
                    if g.three_phase {
                        let per_phase = LoadParams {
                            avg_kw: g.avg_kw / 3.0,
                            peak_kw: g.peak_kw / 3.0,
                        };
                        for (pi, p) in phases.iter().enumerate() {
                            let id = push(
                                &mut labels,
                                phase_name(format!("C{consumer_count}"), p),
                                Role::Consumer,
                            );
                            load.push(Some(per_phase));
                            level_nodes[0].push(id);
                            edges.push((t_nodes[pi], id));
                        }
                    } else {
                        let id = push(&mut labels, format!("C{consumer_count}"), Role::Consumer);
                        load.push(Some(LoadParams {
                            avg_kw: g.avg_kw,
                            peak_kw: g.peak_kw,
                        }));
                        level_nodes[0].push(id);
                        let pi = phase_iter.next().expect("one phase per single-phase customer");
                        edges.push((t_nodes[pi], id));
                    }
                }
            }
        }

        let layers = level_nodes
            .into_iter()
            .enumerate()
            .map(|(i, members)| Layer::new(i as u32 + 1, members))
            .collect();
        Ok((LayeredNetwork::new(labels, layers, edges)?, load))
    }

    pub fn node_count(&self) -> usize {
        let phases = if self.three_phase { 3 } else { 1 };
        let transformers: usize = self.feeders.iter().map(|f| f.transformers.len()).sum();
        let consumers: usize = self
            .feeders
            .iter()
            .flat_map(|f| &f.transformers)
            .flat_map(|t| &t.loads)
            .map(|g| if g.three_phase { 3 * g.count } else { g.count })
            .sum();
        phases * (usize::from(self.substation) + self.feeders.len() + transformers) + consumers
    }
}

/// Multi-layer ground truth: consumer powers drawn from `U(2·avg − peak, peak)`,
/// converted to watt-hours per interval, summed upwards, then corrupted as in
/// the phase protocol when `noise` is given.
pub fn gen_rbts_like(
    spec: &NetworkSpec,
    samples: SampleCount,
    noise: Option<&NoiseConfig>,
    seed: u64,
) -> Result<GroundTruth, SimError> {
    let (network, params) = spec.build(seed)?;
    let n_samples = samples.resolve(&network);
    if n_samples == 0 {
        return Err(SimError::NoSamples);
    }
    let interval = noise.map_or(15.0, |c| c.interval_minutes);
    let wh_per_kw = 1000.0 * interval / 60.0;

    let consumers = &network.layers()[0].members;
    let mut rng = rng_for(seed, Stream::Load);
    let mut values = Array2::<f64>::zeros((consumers.len(), n_samples));
    for (mut row, c) in values.axis_iter_mut(Axis(0)).zip(consumers) {
        let p = params[c.0].expect("consumer has load parameters");
        let (lo, hi) = p.bounds();
        let dist = Uniform::new_inclusive(lo * wh_per_kw, hi * wh_per_kw).expect("valid bounds");
        row.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    }
    let loads = ReadingsMatrix::new(values, consumers.clone(), interval)?;
    let truth = aggregate_up(&network, &loads)?;
    let gt = GroundTruth::noise_free(network, truth);
    match noise {
        Some(cfg) => apply_noise(&gt, cfg),
        None => Ok(gt),
    }
}
