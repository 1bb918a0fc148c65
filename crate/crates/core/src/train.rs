//! Optimization loops for hybrid fields.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldGrads, HybridField, LowPassSchedule};
use crate::geometry::{AdamConfig, AdamState, LrSchedule};
use crate::grids::regularize::{l21_volume, tv_volume};
use crate::grids::TransformSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPhaseConfig {
    pub enabled: bool,
    /// Total channels of the bottleneck CP field (split across the transforms).
    pub bottleneck_channels: usize,
    pub bottleneck_steps: usize,
    /// Per-factor grid resolution of the bottleneck field.
    pub bottleneck_resolution: usize,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self { enabled: false, bottleneck_channels: 8, bottleneck_steps: 500, bottleneck_resolution: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_grid: f64,
    pub lr_decoder: f64,
    pub lr_transform: f64,
    /// Every learning rate decays exponentially to `lr · lr_final_ratio`.
    pub lr_final_ratio: f64,
    pub tv_weight: f64,
    pub l21_weight: f64,
    /// Initial `η` of the low-pass ramp.
    pub lowpass_start: f64,
    /// Fraction of the run over which `η` ramps up to the band count.
    pub lowpass_fraction: f64,
    pub seed: u64,
    pub freeze_transforms: bool,
    pub adam: AdamConfig,
    pub two_phase: TwoPhaseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 1024,
            lr_grid: 0.02,
            lr_decoder: 0.005,
            lr_transform: 0.01,
            lr_final_ratio: 0.1,
            tv_weight: 1e-4,
            l21_weight: 1e-5,
            lowpass_start: 0.0,
            lowpass_fraction: 0.5,
            seed: 0,
            freeze_transforms: false,
            adam: AdamConfig::default(),
            two_phase: TwoPhaseConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.lr_grid, self.lr_decoder, self.lr_transform, self.lr_final_ratio];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidArgument("learning rates must be positive and finite".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.tv_weight < 0.0 || self.l21_weight < 0.0 {
            return Err(Error::InvalidArgument("regularizer weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.lowpass_fraction) {
            return Err(Error::InvalidArgument("lowpass_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn lowpass(&self, levels: usize) -> LowPassSchedule {
        LowPassSchedule {
            total_steps: (self.steps as f64 * self.lowpass_fraction).round() as usize,
            start: self.lowpass_start.min(levels as f64),
            levels,
        }
    }

    fn schedule(&self, base: f64) -> LrSchedule {
        LrSchedule { base, final_ratio: self.lr_final_ratio, steps: self.steps }
    }
}

/// Training samples stored flat, with index lists for the train and
/// evaluation subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub point_dim: usize,
    pub target_dim: usize,
    pub points: Vec<f64>,
    pub targets: Vec<f64>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Dataset {
    pub fn new(point_dim: usize, target_dim: usize, points: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        if point_dim == 0 || target_dim == 0 || points.len() % point_dim != 0 || targets.len() % target_dim != 0 {
            return Err(Error::Shape("dataset dims do not divide the buffers".into()));
        }
        let n = points.len() / point_dim;
        if targets.len() / target_dim != n || n == 0 {
            return Err(Error::Shape(format!(
                "{n} points but {} targets",
                targets.len() / target_dim
            )));
        }
        if points.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset".into()));
        }
        Ok(Self { point_dim, target_dim, points, targets, train: (0..n).collect(), eval: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.point_dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_split(mut self, train: Vec<usize>, eval: Vec<usize>) -> Self {
        self.train = train;
        self.eval = eval;
        self
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.point_dim..(i + 1) * self.point_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    /// Same targets at points mapped through `f`.
    pub fn map_points(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let points = (0..self.len()).flat_map(|i| f(self.point(i))).collect();
        Self { points, ..self.clone() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub train_psnr: f64,
    pub holdout_psnr: Option<f64>,
    pub wall_clock_secs: f64,
    /// Final rotation angles in degrees.
    pub angles_deg: Vec<f64>,
    pub events: Vec<String>,
}

impl TrainReport {
    /// `step,loss` rows followed by summary rows. Wall-clock time is left out
    /// so that reruns produce identical bytes.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "loss"])?;
        for (k, l) in self.losses.iter().enumerate() {
            w.write_record([k.to_string(), format!("{l:.10e}")])?;
        }
        w.write_record(["train_psnr".to_string(), format!("{:.6}", self.train_psnr)])?;
        if let Some(h) = self.holdout_psnr {
            w.write_record(["holdout_psnr".to_string(), format!("{h:.6}")])?;
        }
        for (t, a) in self.angles_deg.iter().enumerate() {
            w.write_record([format!("angle_{t}"), format!("{a:.6}")])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// `10·log₁₀(1/MSE)` for unit-range signals, capped at 99 dB.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("psnr of {} vs {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        99.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(99.0)
    }
}

/// Random disjoint split with `⌈n/2⌉` training indices, each list sorted.
pub fn holdout_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = idx[..n.div_ceil(2)].to_vec();
    let mut eval = idx[n.div_ceil(2)..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// Mean squared error of `field` over `indices` with all bands open.
pub fn evaluate_mse(field: &HybridField, data: &Dataset, indices: &[usize]) -> f64 {
    let weights = vec![1.0; field.encoding.levels];
    let mut ws = field.workspace();
    let mut sum = 0.0;
    for &i in indices {
        let y = field.forward_ws(data.point(i), &weights, &mut ws);
        sum += y.iter().zip(data.target(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    sum / (indices.len() * field.output_dim()).max(1) as f64
}

const MAX_TRAIN_EVAL: usize = 16_384;

/// Trains `field` in place. On a non-finite loss the field is left at the
/// last parameters that produced a finite loss and a divergence error is
/// returned.
pub fn train_field_in_place(field: &mut HybridField, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    field.check_finite()?;
    if data.point_dim != field.point_dim() || data.target_dim != field.output_dim() {
        return Err(Error::Shape(format!(
            "dataset is {}D → {}, field is {}D → {}",
            data.point_dim,
            data.target_dim,
            field.point_dim(),
            field.output_dim()
        )));
    }
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let start = Instant::now();
    let mut report = TrainReport::default();
    let lowpass = cfg.lowpass(field.encoding.levels);
    let (grid_lr, dec_lr, rot_lr) = (cfg.schedule(cfg.lr_grid), cfg.schedule(cfg.lr_decoder), cfg.schedule(cfg.lr_transform));
    let mut grid_opt = AdamState::new(field.volume.params.len(), cfg.adam);
    let mut dec_opt = AdamState::new(field.decoder.params.len(), cfg.adam);
    let mut rot_opt = field.volume.transforms.adam_state(cfg.adam);
    let mut grads = FieldGrads::zeros_like(field);
    let mut points = vec![vec![0.0; data.point_dim]; cfg.batch_size];
    let mut targets = vec![vec![0.0; data.target_dim]; cfg.batch_size];
    let mut lr_scale = 1.0;
    let mut initial = None;
    let mut ws = field.workspace();
    for step in 0..cfg.steps {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(step as u64 + 1);
        for (p, t) in points.iter_mut().zip(targets.iter_mut()) {
            let i = data.train[rng.gen_range(0..data.train.len())];
            p.copy_from_slice(data.point(i));
            t.copy_from_slice(data.target(i));
        }
        let weights = lowpass.weights(step);
        grads.clear();
        let mut loss = field.loss_and_grad(&points, &targets, &weights, &mut ws, &mut grads)?;
        if cfg.tv_weight > 0.0 {
            loss += cfg.tv_weight * tv_volume(&field.volume, cfg.tv_weight, Some(&mut grads.volume.params));
        }
        if cfg.l21_weight > 0.0 {
            loss += cfg.l21_weight * l21_volume(&field.volume, cfg.l21_weight, Some(&mut grads.volume.params));
        }
        let finite = loss.is_finite()
            && grads.decoder.iter().chain(&grads.volume.params).chain(&grads.volume.tangents).all(|g| g.is_finite());
        if !finite {
            return Err(Error::Diverged { step, reason: format!("non-finite loss or gradient (loss {loss})") });
        }
        let first = *initial.get_or_insert(loss);
        if lr_scale == 1.0 && loss > 10.0 * first {
            lr_scale = 0.5;
            report.events.push(format!("step {step}: loss {loss:.4e} exceeded 10x initial, halving learning rates"));
        }
        report.losses.push(loss);
        grid_opt.step_euclidean(&mut field.volume.params, &grads.volume.params, lr_scale * grid_lr.at(step))?;
        dec_opt.step_euclidean(&mut field.decoder.params, &grads.decoder, lr_scale * dec_lr.at(step))?;
        if !cfg.freeze_transforms {
            field.volume.transforms.adam_step(&mut rot_opt, &grads.volume.tangents, lr_scale * rot_lr.at(step))?;
        }
    }
    let stride = data.train.len().div_ceil(MAX_TRAIN_EVAL);
    let train_eval: Vec<usize> = data.train.iter().step_by(stride).copied().collect();
    report.train_psnr = psnr_from_mse(evaluate_mse(field, data, &train_eval));
    if !data.eval.is_empty() {
        report.holdout_psnr = Some(psnr_from_mse(evaluate_mse(field, data, &data.eval)));
    }
    report.angles_deg = field.volume.transforms.angles().iter().map(|a| a.to_degrees()).collect();
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

pub fn train_field(mut field: HybridField, data: &Dataset, cfg: &TrainConfig) -> Result<(HybridField, TrainReport)> {
    let report = train_field_in_place(&mut field, data, cfg)?;
    Ok((field, report))
}

/// Result of bottleneck-then-full training.
#[derive(Clone, Debug)]
pub struct TwoPhaseOutcome {
    pub field: HybridField,
    pub report: TrainReport,
    pub bottleneck_report: TrainReport,
    /// The trained bottleneck field, kept for inspection only.
    pub bottleneck_field: HybridField,
    /// Rotations at the end of phase 1, copied verbatim into phase 2.
    pub bottleneck_transforms: TransformSet,
    /// Rotations of the full field before its first step.
    pub initial_transforms: TransformSet,
    /// Grid and decoder scalars of the bottleneck field that were dropped.
    pub discarded_parameters: usize,
}

/// Phase 1 trains `bottleneck` from random rotations; only its rotations
/// seed the `full` field, which is then trained from fresh grids and
/// decoder weights.
pub fn two_phase_train(bottleneck: &FieldConfig, full: &FieldConfig, data: &Dataset, cfg: &TrainConfig) -> Result<TwoPhaseOutcome> {
    if !cfg.two_phase.enabled {
        return Err(Error::InvalidArgument("two-phase training is disabled in the config".into()));
    }
    if bottleneck.decomposition.transforms != full.decomposition.transforms {
        return Err(Error::InvalidArgument("both phases need the same transform count".into()));
    }
    if bottleneck.decomposition.channels >= full.decomposition.channels {
        return Err(Error::InvalidArgument("bottleneck must have fewer channels than the full field".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = full.decomposition.point_dim();
    let tau = TransformSet::random(dim, full.decomposition.transforms, &mut rng);
    let mut phase1 = HybridField::new(bottleneck, tau, &mut rng)?;
    let cfg1 = TrainConfig { steps: cfg.two_phase.bottleneck_steps, ..cfg.clone() };
    let bottleneck_report = train_field_in_place(&mut phase1, data, &cfg1)?;
    let bottleneck_transforms = phase1.volume.transforms.clone();
    let discarded_parameters = phase1.volume.params.len() + phase1.decoder.params.len();
    let mut field = HybridField::new(full, bottleneck_transforms.clone(), &mut rng)?;
    let initial_transforms = field.volume.transforms.clone();
    let cfg2 = TrainConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() };
    let report = train_field_in_place(&mut field, data, &cfg2)?;
    Ok(TwoPhaseOutcome { field, report, bottleneck_report, bottleneck_field: phase1, bottleneck_transforms, initial_transforms, discarded_parameters })
}
