//! CV-stage battery resistance prediction with a three-input radial basis
//! function network: Gaussian hidden units on k-means centers, a linear
//! output layer fit by least squares against measured terminal voltage,
//! and aging-weighted gradient-descent updates of the output weights.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::battery::{expect_headers, parse_field};
use crate::error::{RctError, Result};

pub const DEFAULT_N_HIDDEN: usize = 25;
pub const DEFAULT_RESISTANCE_FLOOR_OHM: f64 = 1e-4;
pub const DEFAULT_BUFFER_CAPACITY: usize = 500;
pub const DEFAULT_DISCARD_THRESHOLD: u64 = 500;
/// Smallest allowed Gaussian spread in scaled input space.
const MIN_SPREAD: f64 = 1e-3;
const KMEANS_MAX_ITERS: usize = 100;
/// Consecutive objective increases tolerated before the online update
/// halves its learning rate.
const DIVERGENCE_PATIENCE: usize = 5;

/// Predictor input: (SOC, session start SOC, battery temperature in C).
pub type RbfInput = [f64; 3];

/// The resistance predictor. Centers are stored in raw input units and
/// scaled per dimension before distance computation; spreads live in the
/// scaled space. Predictions are floored at `floor_ohm`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfModel {
    n_hidden: usize,
    centers: Vec<[f64; 3]>,
    spreads: Vec<f64>,
    weights: Vec<f64>,
    /// Per-dimension (offset, range) mapping the training domain to [0, 1].
    input_scaling: [(f64, f64); 3],
    floor_ohm: f64,
}

/// What the center fit did: requested vs effective hidden count and the
/// per-iteration k-means objective.
#[derive(Debug, Clone)]
pub struct CentersReport {
    pub requested_hidden: usize,
    pub effective_hidden: usize,
    pub iterations: usize,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub wcss_history: Vec<f64>,
}

impl RbfModel {
    pub fn new(
        centers: Vec<[f64; 3]>,
        spreads: Vec<f64>,
        weights: Vec<f64>,
        input_scaling: [(f64, f64); 3],
        floor_ohm: f64,
    ) -> Result<Self> {
        if centers.is_empty() {
            return Err(RctError::domain("RBF model needs at least one hidden unit"));
        }
        if centers.len() != spreads.len() || centers.len() != weights.len() {
            return Err(RctError::domain(
                "centers, spreads and weights must have equal length",
            ));
        }
        if spreads.iter().any(|s| !(*s > 0.0)) {
            return Err(RctError::domain("spreads must be positive"));
        }
        if input_scaling.iter().any(|(_, range)| !(*range > 0.0)) {
            return Err(RctError::domain("scaling ranges must be positive"));
        }
        if !(floor_ohm > 0.0) {
            return Err(RctError::domain("resistance floor must be positive"));
        }
        Ok(Self {
            n_hidden: centers.len(),
            centers,
            spreads,
            weights,
            input_scaling,
            floor_ohm,
        })
    }

    /// A model that predicts `floor_ohm` everywhere (single zero-weight unit).
    pub fn flat(floor_ohm: f64) -> Self {
        Self {
            n_hidden: 1,
            centers: vec![[0.5, 0.5, 25.0]],
            spreads: vec![1.0],
            weights: vec![0.0],
            input_scaling: [(0.0, 1.0), (0.0, 1.0), (0.0, 50.0)],
            floor_ohm,
        }
    }

    /// A model that predicts (approximately) a constant resistance: one
    /// unit with a spread so wide its activation is 1 over any practical
    /// input range.
    pub fn constant(resistance_ohm: f64) -> Result<Self> {
        if !(resistance_ohm > 0.0) {
            return Err(RctError::domain("constant resistance must be positive"));
        }
        Ok(Self {
            n_hidden: 1,
            centers: vec![[0.5, 0.5, 25.0]],
            spreads: vec![1e9],
            weights: vec![resistance_ohm],
            input_scaling: [(0.0, 1.0), (0.0, 1.0), (0.0, 50.0)],
            floor_ohm: DEFAULT_RESISTANCE_FLOOR_OHM,
        })
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> &[[f64; 3]] {
        &self.centers
    }

    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    pub fn floor_ohm(&self) -> f64 {
        self.floor_ohm
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_hidden {
            return Err(RctError::domain("weight vector length mismatch"));
        }
        Ok(Self {
            weights,
            ..self.clone()
        })
    }

    fn scale(&self, x: RbfInput) -> [f64; 3] {
        let mut out = [0.0; 3];
        for d in 0..3 {
            let (offset, range) = self.input_scaling[d];
            out[d] = (x[d] - offset) / range;
        }
        out
    }

    /// Gaussian hidden-layer activations; each lies in (0, 1].
    pub fn activations(&self, x: RbfInput) -> Vec<f64> {
        let xs = self.scale(x);
        self.centers
            .iter()
            .zip(&self.spreads)
            .map(|(c, sigma)| {
                let cs = self.scale(*c);
                let d2: f64 = (0..3).map(|d| (xs[d] - cs[d]).powi(2)).sum();
                (-d2 / (2.0 * sigma * sigma)).exp()
            })
            .collect()
    }

    /// Linear readout of the hidden layer, floored at `floor_ohm`.
    pub fn predict_resistance(&self, x: RbfInput) -> f64 {
        self.linear_readout(x).max(self.floor_ohm)
    }

    /// The unfloored linear readout the training objective is defined on.
    fn linear_readout(&self, x: RbfInput) -> f64 {
        self.activations(x)
            .iter()
            .zip(&self.weights)
            .map(|(h, w)| h * w)
            .sum()
    }

    /// Selects hidden-unit centers by k-means over the scaled training
    /// inputs and sets each spread to the mean distance to its two nearest
    /// sibling centroids. Weights start at zero. When the data holds fewer
    /// distinct points than `n_hidden`, the hidden count is reduced to the
    /// distinct count and reported.
    pub fn fit_centers(data: &[RbfInput], n_hidden: usize, seed: u64) -> Result<(Self, CentersReport)> {
        if n_hidden == 0 {
            return Err(RctError::domain("n_hidden must be at least 1"));
        }
        if data.len() < n_hidden {
            return Err(RctError::domain(format!(
                "need at least n_hidden={n_hidden} samples, got {}",
                data.len()
            )));
        }
        let mut input_scaling = [(0.0, 1.0); 3];
        for d in 0..3 {
            let lo = data.iter().map(|x| x[d]).fold(f64::INFINITY, f64::min);
            let hi = data.iter().map(|x| x[d]).fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            input_scaling[d] = (lo, if range > 1e-12 { range } else { 1.0 });
        }
        let scaled: Vec<[f64; 3]> = data
            .iter()
            .map(|x| {
                let mut s = [0.0; 3];
                for d in 0..3 {
                    s[d] = (x[d] - input_scaling[d].0) / input_scaling[d].1;
                }
                s
            })
            .collect();

        let mut distinct: Vec<[f64; 3]> = Vec::new();
        for p in &scaled {
            if !distinct.iter().any(|q| q == p) {
                distinct.push(*p);
            }
            if distinct.len() > n_hidden {
                break;
            }
        }
        let effective = n_hidden.min(distinct.len());

        let (centroids, wcss_history, iterations) =
            kmeans(&scaled, effective, seed, KMEANS_MAX_ITERS);

        let spreads: Vec<f64> = (0..centroids.len())
            .map(|i| {
                let mut dists: Vec<f64> = centroids
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, c)| dist(&centroids[i], c))
                    .collect();
                if dists.is_empty() {
                    return 1.0;
                }
                dists.sort_by(|a, b| a.total_cmp(b));
                let take = dists.len().min(2);
                let mean = dists[..take].iter().sum::<f64>() / take as f64;
                mean.max(MIN_SPREAD)
            })
            .collect();

        let centers: Vec<[f64; 3]> = centroids
            .iter()
            .map(|c| {
                let mut raw = [0.0; 3];
                for d in 0..3 {
                    raw[d] = input_scaling[d].0 + c[d] * input_scaling[d].1;
                }
                raw
            })
            .collect();

        let weights = vec![0.0; centers.len()];
        let model = Self::new(centers, spreads, weights, input_scaling, DEFAULT_RESISTANCE_FLOOR_OHM)?;
        let report = CentersReport {
            requested_hidden: n_hidden,
            effective_hidden: effective,
            iterations,
            wcss_history,
        };
        Ok((model, report))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json_str(s: &str, path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(s)
            .map_err(|e| RctError::parse(path, e.line(), e.to_string()))?;
        if model.centers.len() != model.n_hidden
            || model.spreads.len() != model.n_hidden
            || model.weights.len() != model.n_hidden
        {
            return Err(RctError::parse(path, 1, "n_hidden does not match array lengths"));
        }
        Self::new(
            model.centers,
            model.spreads,
            model.weights,
            model.input_scaling,
            model.floor_ohm,
        )
    }

    pub fn to_json_path(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path)?;
        Self::from_json_str(&s, path)
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|d| (a[d] - b[d]).powi(2)).sum::<f64>().sqrt()
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|d| (a[d] - b[d]).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Returns the centroids, the
/// within-cluster sum of squares after each iteration, and the iteration
/// count. Deterministic for a given seed.
fn kmeans(data: &[[f64; 3]], k: usize, seed: u64, max_iters: usize) -> (Vec<[f64; 3]>, Vec<f64>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<[f64; 3]> = Vec::with_capacity(k);
    centroids.push(data[rng.random_range(0..data.len())]);
    let mut d2: Vec<f64> = data.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining mass sits on already-chosen points
            data[rng.random_range(0..data.len())]
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            data[chosen]
        };
        centroids.push(next);
        for (i, p) in data.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &next));
        }
    }

    let mut assignment = vec![0usize; data.len()];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        let mut changed = false;
        for (i, p) in data.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = dist2(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in data.iter().enumerate() {
            let j = assignment[i];
            counts[j] += 1;
            for d in 0..3 {
                sums[j][d] += p[d];
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..3 {
                    centroids[j][d] = sums[j][d] / counts[j] as f64;
                }
            }
            // empty clusters keep their previous centroid
        }
        let wcss: f64 = data
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        wcss_history.push(wcss);
        if !changed && iterations > 1 {
            break;
        }
    }
    (centroids, wcss_history, iterations)
}

/// One stored CV measurement. Serial 0 is the newest sample; higher
/// serials are older.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub soc: f64,
    pub start_soc: f64,
    pub temperature_c: f64,
    pub current_a: f64,
    pub v_measured_v: f64,
    pub ocv_v: f64,
    pub serial: u64,
}

impl TrainingSample {
    pub fn input(&self) -> RbfInput {
        [self.soc, self.start_soc, self.temperature_c]
    }
}

/// Bounded store of CV samples ordered newest-first by serial number.
/// Samples aging past `discard_threshold` are dropped; `serial_decay` is
/// the time constant of the age weight `exp(-serial / serial_decay)`
/// (a decay of 1 recovers the plain `exp(-serial)` weighting).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBuffer {
    samples: Vec<TrainingSample>,
    discard_threshold: u64,
    capacity: usize,
    serial_decay: f64,
}

impl TrainingBuffer {
    pub fn new(capacity: usize, discard_threshold: u64) -> Self {
        Self {
            samples: Vec::new(),
            discard_threshold,
            capacity,
            serial_decay: (capacity as f64 / 4.0).max(1.0),
        }
    }

    pub fn with_serial_decay(mut self, serial_decay: f64) -> Result<Self> {
        if !(serial_decay > 0.0) {
            return Err(RctError::domain("serial decay must be positive"));
        }
        self.serial_decay = serial_decay;
        Ok(self)
    }

    /// Restores a buffer from exported samples, e.g. a CSV dump.
    pub fn from_samples(
        samples: Vec<TrainingSample>,
        capacity: usize,
        discard_threshold: u64,
    ) -> Result<Self> {
        if samples.iter().any(|s| s.serial > discard_threshold) {
            return Err(RctError::domain("sample serial exceeds the discard threshold"));
        }
        if samples.len() > capacity {
            return Err(RctError::domain("more samples than buffer capacity"));
        }
        let mut buf = Self::new(capacity, discard_threshold);
        buf.samples = samples;
        buf.samples.sort_by_key(|s| s.serial);
        Ok(buf)
    }

    /// Inserts a fresh sample at serial 0, ages every stored sample by
    /// one, and drops samples past the discard threshold or capacity.
    pub fn ingest(&mut self, sample: TrainingSample) {
        for s in &mut self.samples {
            s.serial += 1;
        }
        self.samples.insert(0, TrainingSample { serial: 0, ..sample });
        self.samples.retain(|s| s.serial <= self.discard_threshold);
        self.samples.truncate(self.capacity);
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn discard_threshold(&self) -> u64 {
        self.discard_threshold
    }

    pub fn serial_decay(&self) -> f64 {
        self.serial_decay
    }

    /// Age weight of a sample: newest data counts most.
    pub fn age_weight(&self, serial: u64) -> f64 {
        (-(serial as f64) / self.serial_decay).exp()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("serial,soc,start_soc,temp_c,current_a,v_meas,ocv_v\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.serial, s.soc, s.start_soc, s.temperature_c, s.current_a, s.v_measured_v, s.ocv_v
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn read_csv(
        path: impl AsRef<Path>,
        capacity: usize,
        discard_threshold: u64,
    ) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::read_csv_reader(file, path, capacity, discard_threshold)
    }

    fn read_csv_reader(
        reader: impl Read,
        path: &Path,
        capacity: usize,
        discard_threshold: u64,
    ) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        expect_headers(
            &mut rdr,
            path,
            &["serial", "soc", "start_soc", "temp_c", "current_a", "v_meas", "ocv_v"],
        )?;
        let mut samples = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| RctError::parse(path, line, e.to_string()))?;
            let serial_raw = record
                .get(0)
                .ok_or_else(|| RctError::parse(path, line, "missing serial"))?;
            let serial: u64 = serial_raw
                .trim()
                .parse()
                .map_err(|e| RctError::parse(path, line, format!("`{serial_raw}`: {e}")))?;
            samples.push(TrainingSample {
                serial,
                soc: parse_field(&record, 1, path, line)?,
                start_soc: parse_field(&record, 2, path, line)?,
                temperature_c: parse_field(&record, 3, path, line)?,
                current_a: parse_field(&record, 4, path, line)?,
                v_measured_v: parse_field(&record, 5, path, line)?,
                ocv_v: parse_field(&record, 6, path, line)?,
            });
        }
        Self::from_samples(samples, capacity, discard_threshold)
    }
}

/// Result of an offline weight fit.
#[derive(Debug, Clone)]
pub struct WeightFitReport {
    pub samples: usize,
    /// Voltage MSE of the fitted model over the buffer, in V^2.
    pub mse_volts2: f64,
    pub rank: usize,
    /// True when the design matrix was rank deficient and the minimum-norm
    /// solution was taken.
    pub rank_deficient: bool,
}

/// Fits the output weights by unweighted linear least squares on the
/// voltage residual: columns are activation-times-current, the target is
/// measured voltage minus OCV. Rank-deficient systems get the
/// minimum-norm solution.
pub fn fit_weights(model: &RbfModel, buffer: &TrainingBuffer) -> Result<(RbfModel, WeightFitReport)> {
    if buffer.is_empty() {
        return Err(RctError::domain("training buffer is empty"));
    }
    let n = buffer.len();
    let k = model.n_hidden();
    let mut design = DMatrix::zeros(n, k);
    let mut target = DVector::zeros(n);
    for (j, s) in buffer.samples().iter().enumerate() {
        let h = model.activations(s.input());
        for i in 0..k {
            design[(j, i)] = h[i] * s.current_a;
        }
        target[j] = s.v_measured_v - s.ocv_v;
    }
    let svd = design.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let eps = max_sv * f64::EPSILON * n.max(k) as f64;
    let rank = svd.rank(eps);
    let solution = svd
        .solve(&target, eps)
        .map_err(RctError::domain)?;
    let weights: Vec<f64> = solution.iter().cloned().collect();
    let fitted = model.with_weights(weights)?;
    let residual = design * solution - target;
    let mse = residual.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let report = WeightFitReport {
        samples: n,
        mse_volts2: mse,
        rank,
        rank_deficient: rank < k.min(n),
    };
    Ok((fitted, report))
}

/// Mean age-weighted squared voltage residual over the buffer — the
/// objective the online update descends.
pub fn weighted_voltage_mse(model: &RbfModel, buffer: &TrainingBuffer) -> Result<f64> {
    if buffer.is_empty() {
        return Err(RctError::domain("training buffer is empty"));
    }
    let m = buffer.len() as f64;
    let mut total = 0.0;
    for s in buffer.samples() {
        let resid = voltage_residual(model, s);
        total += resid * resid * buffer.age_weight(s.serial);
    }
    Ok(total / m)
}

/// Analytic gradient of [`weighted_voltage_mse`] with respect to the
/// output weights.
pub fn weighted_mse_gradient(model: &RbfModel, buffer: &TrainingBuffer) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(RctError::domain("training buffer is empty"));
    }
    let m = buffer.len() as f64;
    let k = model.n_hidden();
    let mut grad = vec![0.0; k];
    for s in buffer.samples() {
        let h = model.activations(s.input());
        let resid = voltage_residual(model, s);
        let w = buffer.age_weight(s.serial);
        for i in 0..k {
            grad[i] += 2.0 * resid * h[i] * s.current_a * w / m;
        }
    }
    Ok(grad)
}

/// Plain (unweighted) voltage MSE of the model over the buffer.
pub fn voltage_mse(model: &RbfModel, buffer: &TrainingBuffer) -> Result<f64> {
    if buffer.is_empty() {
        return Err(RctError::domain("training buffer is empty"));
    }
    let total: f64 = buffer
        .samples()
        .iter()
        .map(|s| {
            let r = voltage_residual(model, s);
            r * r
        })
        .sum();
    Ok(total / buffer.len() as f64)
}

fn voltage_residual(model: &RbfModel, s: &TrainingSample) -> f64 {
    let r = model.linear_readout(s.input());
    s.ocv_v + r * s.current_a - s.v_measured_v
}

/// Result of an online update pass.
#[derive(Debug, Clone)]
pub struct OnlineUpdateReport {
    pub epochs_run: usize,
    pub rate_halvings: u32,
    pub initial_weighted_mse: f64,
    pub final_weighted_mse: f64,
}

/// Gradient descent on the output weights with age-weighted samples;
/// centers and spreads stay fixed. When the objective rises for five
/// consecutive epochs the learning rate is halved and descent continues.
pub fn online_update(
    model: &RbfModel,
    buffer: &TrainingBuffer,
    learning_rate: f64,
    epochs: usize,
    ) -> Result<(RbfModel, OnlineUpdateReport)> {
    if buffer.is_empty() {
        return Err(RctError::domain("training buffer is empty"));
    }
    if !(learning_rate > 0.0) {
        return Err(RctError::domain("learning rate must be positive"));
    }
    let m = buffer.len() as f64;
    let k = model.n_hidden();
    // precompute per-sample features; only the weights move
    let feats: Vec<(Vec<f64>, f64, f64, f64)> = buffer
        .samples()
        .iter()
        .map(|s| {
            (
                model.activations(s.input()),
                s.current_a,
                s.v_measured_v - s.ocv_v,
                buffer.age_weight(s.serial),
            )
        })
        .collect();
    let objective = |w: &[f64]| -> f64 {
        feats
            .iter()
            .map(|(h, i, y, aw)| {
                let r: f64 = h.iter().zip(w).map(|(hh, ww)| hh * ww).sum();
                let resid = r * i - y;
                resid * resid * aw
            })
            .sum::<f64>()
            / m
    };

    let mut weights = model.weights().to_vec();
    let mut lr = learning_rate;
    let mut halvings = 0u32;
    let mut rising = 0usize;
    let initial = objective(&weights);
    let mut prev = initial;
    for _ in 0..epochs {
        let mut grad = vec![0.0; k];
        for (h, i, y, aw) in &feats {
            let r: f64 = h.iter().zip(&weights).map(|(hh, ww)| hh * ww).sum();
            let resid = r * i - y;
            for (g, hh) in grad.iter_mut().zip(h) {
                *g += 2.0 * resid * hh * i * aw / m;
            }
        }
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
        let mse = objective(&weights);
        if mse > prev {
            rising += 1;
            if rising >= DIVERGENCE_PATIENCE {
                lr *= 0.5;
                halvings += 1;
                rising = 0;
            }
        } else {
            rising = 0;
        }
        prev = mse;
    }
    let updated = model.with_weights(weights)?;
    let report = OnlineUpdateReport {
        epochs_run: epochs,
        rate_halvings: halvings,
        initial_weighted_mse: initial,
        final_weighted_mse: prev,
    };
    Ok((updated, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample(soc: f64, current_a: f64, v: f64, ocv: f64) -> TrainingSample {
        TrainingSample {
            soc,
            start_soc: 0.7,
            temperature_c: 25.0,
            current_a,
            v_measured_v: v,
            ocv_v: ocv,
            serial: 0,
        }
    }

    fn unit_model(weights: Vec<f64>, centers: Vec<[f64; 3]>, spreads: Vec<f64>) -> RbfModel {
        RbfModel::new(
            centers,
            spreads,
            weights,
            [(0.0, 1.0), (0.0, 1.0), (0.0, 1.0)],
            1e-4,
        )
        .unwrap()
    }

    #[test]
    fn activation_is_one_at_center() {
        let m = unit_model(vec![0.05], vec![[0.3, 0.5, 0.7]], vec![0.2]);
        let h = m.activations([0.3, 0.5, 0.7]);
        assert_eq!(h, vec![1.0]);
    }

    #[test]
    fn activation_at_one_sigma_distance() {
        // frozen by direct evaluation: exp(-1/2)
        let m = unit_model(vec![0.05], vec![[0.3, 0.5, 0.7]], vec![0.2]);
        let h = m.activations([0.5, 0.5, 0.7]);
        assert_relative_eq!(h[0], 0.606_530_659_712_633_4, max_relative = 1e-12);
    }

    #[test]
    fn activation_far_from_all_centers_is_tiny() {
        // six sigma away in every dimension: bounded by exp(-54)
        let m = unit_model(
            vec![0.05, 0.02],
            vec![[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]],
            vec![0.1, 0.1],
        );
        for h in m.activations([0.7, 0.6, 0.6]) {
            assert!(h < 1e-7);
        }
    }

    #[test]
    fn predict_single_unit_at_center() {
        let m = unit_model(vec![0.05], vec![[0.3, 0.5, 0.7]], vec![0.2]);
        assert_relative_eq!(m.predict_resistance([0.3, 0.5, 0.7]), 0.05);
    }

    #[test]
    fn predict_two_units_weighted_sum() {
        // frozen by direct evaluation: 0.04 + 0.02 * exp(-1/2)
        let m = unit_model(
            vec![0.04, 0.02],
            vec![[0.3, 0.5, 0.7], [0.5, 0.5, 0.7]],
            vec![0.2, 0.2],
        );
        assert_relative_eq!(
            m.predict_resistance([0.3, 0.5, 0.7]),
            0.052_130_613_194_252_67,
            max_relative = 1e-12
        );
    }

    #[test]
    fn predict_zero_weights_hits_floor() {
        let m = unit_model(vec![0.0, 0.0], vec![[0.0; 3], [1.0; 3]], vec![0.3, 0.3]);
        assert_eq!(m.predict_resistance([0.5, 0.5, 0.5]), 1e-4);
    }

    #[test]
    fn fit_centers_exact_clusters() {
        let data = vec![
            [0.1, 0.1, 0.1],
            [0.9, 0.9, 0.9],
            [0.1, 0.1, 0.1],
            [0.9, 0.9, 0.9],
        ];
        let (model, report) = RbfModel::fit_centers(&data, 2, 42).unwrap();
        assert_eq!(report.effective_hidden, 2);
        let mut centers = model.centers().to_vec();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_relative_eq!(centers[0][0], 0.1, max_relative = 1e-9);
        assert_relative_eq!(centers[1][0], 0.9, max_relative = 1e-9);
    }

    #[test]
    fn fit_centers_two_blobs_land_inside_bounding_boxes() {
        // brute-force expectation: each centroid stays inside its blob's box
        let mut data = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 19.0;
            data.push([0.05 * t, 0.05 * t, 0.1 + 0.05 * t]);
            data.push([0.9 + 0.05 * t, 0.8 + 0.05 * t, 0.7 + 0.05 * t]);
        }
        let (model, _) = RbfModel::fit_centers(&data, 2, 7).unwrap();
        let mut centers = model.centers().to_vec();
        centers.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(centers[0][0] >= 0.0 && centers[0][0] <= 0.05);
        assert!(centers[1][0] >= 0.9 && centers[1][0] <= 0.95);
    }

    #[test]
    fn fit_centers_k_one_is_the_mean() {
        let data = vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.5, 0.2, 0.8]];
        let (model, _) = RbfModel::fit_centers(&data, 1, 0).unwrap();
        let c = model.centers()[0];
        assert_relative_eq!(c[0], 0.5, max_relative = 1e-9);
        assert_relative_eq!(c[1], 0.4, max_relative = 1e-9);
        assert_relative_eq!(c[2], (0.0 + 1.0 + 0.8) / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn fit_centers_reduces_to_distinct_count() {
        let data = vec![[0.1; 3], [0.1; 3], [0.9; 3], [0.9; 3]];
        let (model, report) = RbfModel::fit_centers(&data, 4, 1).unwrap();
        assert_eq!(report.requested_hidden, 4);
        assert_eq!(report.effective_hidden, 2);
        assert_eq!(model.n_hidden(), 2);
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let data: Vec<[f64; 3]> = (0..300)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let (_, report) = RbfModel::fit_centers(&data, 8, 5).unwrap();
        for w in report.wcss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "wcss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn ingest_orders_serials_and_discards() {
        let mut buf = TrainingBuffer::new(10, 2);
        buf.ingest(sample(0.8, 1.0, 4.0, 3.9));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.samples()[0].serial, 0);

        buf.ingest(sample(0.81, 1.0, 4.0, 3.9));
        buf.ingest(sample(0.82, 1.0, 4.0, 3.9));
        let serials: Vec<u64> = buf.samples().iter().map(|s| s.serial).collect();
        assert_eq!(serials, vec![0, 1, 2]);
        assert_relative_eq!(buf.samples()[0].soc, 0.82);

        // the serial-2 sample is at the threshold; one more insert drops it
        buf.ingest(sample(0.83, 1.0, 4.0, 3.9));
        assert_eq!(buf.len(), 3);
        assert!(buf.samples().iter().all(|s| s.serial <= 2));
        assert_relative_eq!(buf.samples().last().unwrap().soc, 0.81);
    }

    #[test]
    fn ingest_respects_capacity() {
        let mut buf = TrainingBuffer::new(2, 100);
        for k in 0..5 {
            buf.ingest(sample(0.8 + 0.01 * k as f64, 1.0, 4.0, 3.9));
        }
        assert_eq!(buf.len(), 2);
        assert_relative_eq!(buf.samples()[0].soc, 0.84);
    }

    #[test]
    fn fit_weights_single_sample_single_unit() {
        // 1x1 solve: W = (V - OCV) / (H * I), with x at the center H = 1
        let model = unit_model(vec![0.0], vec![[0.8, 0.7, 25.0]], vec![1.0]);
        let mut buf = TrainingBuffer::new(10, 100);
        let mut s = sample(0.8, 2.0, 4.0, 3.9);
        s.temperature_c = 25.0;
        buf.ingest(s);
        let (fitted, report) = fit_weights(&model, &buf).unwrap();
        assert_relative_eq!(fitted.weights()[0], 0.05, max_relative = 1e-12);
        assert!(report.mse_volts2 < 1e-24);
    }

    #[test]
    fn fit_weights_recovers_planted_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<[f64; 3]> = (0..400)
            .map(|_| {
                [
                    0.6 + 0.4 * rng.random::<f64>(),
                    0.5 + 0.3 * rng.random::<f64>(),
                    15.0 + 20.0 * rng.random::<f64>(),
                ]
            })
            .collect();
        let (skeleton, _) = RbfModel::fit_centers(&data, 6, 11).unwrap();
        let planted: Vec<f64> = (0..6).map(|i| 0.02 + 0.01 * i as f64).collect();
        let truth = skeleton.with_weights(planted.clone()).unwrap();

        let mut buf = TrainingBuffer::new(500, 1000);
        for x in &data {
            let i = 0.5 + 4.0 * rng.random::<f64>();
            let r = truth.predict_resistance(*x);
            let ocv = 3.9;
            buf.ingest(TrainingSample {
                soc: x[0],
                start_soc: x[1],
                temperature_c: x[2],
                current_a: i,
                v_measured_v: ocv + r * i,
                ocv_v: ocv,
                serial: 0,
            });
        }
        let (fitted, report) = fit_weights(&skeleton, &buf).unwrap();
        let err: f64 = fitted
            .weights()
            .iter()
            .zip(&planted)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = planted.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(err / norm < 1e-8, "relative error {}", err / norm);
        assert!(report.mse_volts2 < 1e-20);
    }

    #[test]
    fn fit_weights_noise_floor_matches_variance() {
        // with additive voltage noise of std sigma, the achieved MSE is ~ sigma^2
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data: Vec<[f64; 3]> = (0..3000)
            .map(|_| [rng.random::<f64>(), rng.random::<f64>(), 25.0])
            .collect();
        let (skeleton, _) = RbfModel::fit_centers(&data, 4, 2).unwrap();
        let truth = skeleton.with_weights(vec![0.05, 0.04, 0.06, 0.03]).unwrap();
        let sigma = 0.002;
        let mut buf = TrainingBuffer::new(3000, 10_000);
        for x in &data {
            let i = 1.0 + rng.random::<f64>();
            let r = truth.predict_resistance(*x);
            // Irwin-Hall(12) - 6 approximates a standard normal
            let g: f64 = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
            buf.ingest(TrainingSample {
                soc: x[0],
                start_soc: x[1],
                temperature_c: x[2],
                current_a: i,
                v_measured_v: 3.9 + r * i + sigma * g,
                ocv_v: 3.9,
                serial: 0,
            });
        }
        let (_, report) = fit_weights(&skeleton, &buf).unwrap();
        let ratio = report.mse_volts2 / (sigma * sigma);
        assert!((0.8..1.2).contains(&ratio), "mse/sigma^2 = {ratio}");
    }

    #[test]
    fn online_update_stationary_at_perfect_fit() {
        let model = unit_model(vec![0.05], vec![[0.8, 0.7, 25.0]], vec![1.0]);
        let mut buf = TrainingBuffer::new(10, 100);
        for k in 0..3 {
            let soc = 0.8 + 0.01 * k as f64;
            let i = 2.0 - 0.1 * k as f64;
            let r = model.predict_resistance([soc, 0.7, 25.0]);
            buf.ingest(sample(soc, i, 3.9 + r * i, 3.9));
        }
        let (updated, report) = online_update(&model, &buf, 0.1, 50).unwrap();
        assert_relative_eq!(updated.weights()[0], 0.05, max_relative = 1e-9);
        assert!(report.final_weighted_mse < 1e-20);
    }

    #[test]
    fn online_update_single_step_matches_closed_form() {
        // one sample, one unit: W' = W - lr * 2 (W H I - y) H I e^{-t/tau} / 1
        let model = unit_model(vec![0.03], vec![[0.8, 0.7, 25.0]], vec![1.0]);
        let mut buf = TrainingBuffer::new(10, 100).with_serial_decay(4.0).unwrap();
        buf.ingest(sample(0.8, 2.0, 4.0, 3.9)); // y = 0.1, H = 1, I = 2
        let lr = 0.01;
        let (updated, _) = online_update(&model, &buf, lr, 1).unwrap();
        let expected = 0.03 - lr * 2.0 * (0.03 * 2.0 - 0.1) * 2.0 * 1.0;
        assert_relative_eq!(updated.weights()[0], expected, max_relative = 1e-12);
    }

    #[test]
    fn online_update_new_data_dominates_old() {
        // two identical inputs with conflicting targets: the serial-0 sample
        // pulls the weight far harder than the one aged well past tau
        let model = unit_model(vec![0.05], vec![[0.8, 0.7, 25.0]], vec![1.0]);
        let old = TrainingSample {
            serial: 40,
            ..sample(0.8, 2.0, 3.9 + 0.12 * 2.0, 3.9) // wants W = 0.12
        };
        let fresh = TrainingSample {
            serial: 0,
            ..sample(0.8, 2.0, 3.9 + 0.02 * 2.0, 3.9) // wants W = 0.02
        };
        let buf = TrainingBuffer::from_samples(vec![old, fresh], 100, 1000)
            .unwrap()
            .with_serial_decay(4.0)
            .unwrap();
        let (updated, _) = online_update(&model, &buf, 0.05, 200).unwrap();
        assert!(
            (updated.weights()[0] - 0.02).abs() < 0.005,
            "w = {}",
            updated.weights()[0]
        );
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = 1 + rng.random_range(0..5);
            let centers: Vec<[f64; 3]> = (0..k)
                .map(|_| [rng.random::<f64>(), rng.random::<f64>(), 20.0 + 10.0 * rng.random::<f64>()])
                .collect();
            let spreads: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
            let weights: Vec<f64> = (0..k).map(|_| 0.02 + 0.05 * rng.random::<f64>()).collect();
            let model = RbfModel::new(
                centers,
                spreads,
                weights,
                [(0.0, 1.0), (0.0, 1.0), (0.0, 50.0)],
                1e-6,
            )
            .unwrap();
            let mut buf = TrainingBuffer::new(50, 1000);
            for _ in 0..10 {
                buf.ingest(TrainingSample {
                    soc: rng.random::<f64>(),
                    start_soc: rng.random::<f64>(),
                    temperature_c: 20.0 + 10.0 * rng.random::<f64>(),
                    current_a: 0.5 + 3.0 * rng.random::<f64>(),
                    v_measured_v: 3.9 + 0.2 * rng.random::<f64>(),
                    ocv_v: 3.85,
                    serial: 0,
                });
            }
            let analytic = weighted_mse_gradient(&model, &buf).unwrap();
            let h = 1e-6;
            let mut fd = vec![0.0; model.n_hidden()];
            for i in 0..model.n_hidden() {
                let mut wp = model.weights().to_vec();
                wp[i] += h;
                let fp = weighted_voltage_mse(&model.with_weights(wp).unwrap(), &buf).unwrap();
                let mut wm = model.weights().to_vec();
                wm[i] -= h;
                let fm = weighted_voltage_mse(&model.with_weights(wm).unwrap(), &buf).unwrap();
                fd[i] = (fp - fm) / (2.0 * h);
            }
            let num: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = fd.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-12);
            assert!(num / den <= 1e-6, "gradient mismatch {}", num / den);
        }
    }

    #[test]
    fn model_json_round_trip_is_bit_exact() {
        let data: Vec<[f64; 3]> = (0..30)
            .map(|i| [i as f64 / 29.0, 0.5, 20.0 + i as f64])
            .collect();
        let (model, _) = RbfModel::fit_centers(&data, 5, 9).unwrap();
        let model = model.with_weights(vec![0.123456789012345, 0.05, 1.0 / 3.0, 2.0e-7, 0.9]).unwrap();
        let json = model.to_json_string();
        let back = RbfModel::from_json_str(&json, Path::new("model.json")).unwrap();
        assert_eq!(model, back);
        assert_eq!(back.to_json_string(), json);
    }

    #[test]
    fn buffer_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buffer.csv");
        let mut buf = TrainingBuffer::new(10, 100);
        buf.ingest(sample(0.8, 2.0, 4.0, 3.9));
        buf.ingest(sample(0.81, 1.9, 4.0, 3.91));
        buf.write_csv(&path).unwrap();
        let back = TrainingBuffer::read_csv(&path, 10, 100).unwrap();
        assert_eq!(back.samples(), buf.samples());
    }
}
