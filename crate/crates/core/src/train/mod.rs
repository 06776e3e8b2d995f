//! End-to-end training: step-decayed Adam over the weighted objective, latent
//! adversarial smoothing, a gradient-reversed domain discriminator and
//! per-epoch history.

pub mod adam;
pub mod adversarial;
pub mod objective;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{fmt_f64, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::losses::{LossBreakdown, Margins};
use crate::model::{ArchConfig, ModelParams};

pub use adam::Adam;
pub use adversarial::{adv_perturbation, prepare_adversarial, ConsistencyPredictor, LatentPredictor};
pub use objective::{
    clean_probabilities, evaluate_objective, AdversarialTargets, DiscriminatorCoupling, ObjectiveOutput,
    ObjectiveSpec, TermWeights,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_adv: f64,
    pub margins: Margins,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adv_eps_max: f64,
    pub adv_power_iters: usize,
    /// Cap on each repelled squared prototype distance; `None` is the
    /// unbounded loss.
    pub repulsion_cap: Option<f64>,
    /// Floor on the true-class energy term; `None` is the unbounded loss.
    pub energy_floor: Option<f64>,
    pub seed: u64,
    pub enable_dse: bool,
    pub enable_lse: bool,
    pub enable_ortho: bool,
    pub enable_ag: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.9,
            lambda2: 2.0,
            lambda_adv: 0.1,
            margins: Margins::default(),
            lr0: 1e-4,
            lr_decay: 0.1,
            lr_step_epochs: 30,
            weight_decay: 1e-5,
            batch_size: 64,
            epochs: 100,
            adv_eps_max: 1.0,
            adv_power_iters: 1,
            repulsion_cap: None,
            energy_floor: None,
            seed: 0,
            enable_dse: true,
            enable_lse: true,
            enable_ortho: true,
            enable_ag: true,
        }
    }
}

impl TrainConfig {
    /// Settings for the synthetic benchmark: a higher learning rate and smaller
    /// batches so that 100 epochs on a few hundred samples actually train, and
    /// both guards on the unbounded loss terms switched on.
    pub fn benchmark() -> Self {
        Self {
            lr0: 3e-3,
            batch_size: 16,
            repulsion_cap: Some(4.0),
            energy_floor: Some(0.0),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda_adv", self.lambda_adv)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [("lr0", self.lr0), ("lr_decay", self.lr_decay)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.adv_eps_max >= 0.0) {
            return bad(format!("adv_eps_max must be >= 0, got {}", self.adv_eps_max));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lr_step_epochs == 0 {
            return bad("batch_size, epochs and lr_step_epochs must be at least 1".into());
        }
        if let Some(f) = self.energy_floor {
            if !f.is_finite() {
                return bad(format!("energy_floor must be finite, got {f}"));
            }
        }
        if let Some(cap) = self.repulsion_cap {
            if !(cap > 0.0) {
                return bad(format!("repulsion_cap must be positive, got {cap}"));
            }
        }
        self.margins.validate()
    }

    pub fn term_weights(&self) -> TermWeights {
        let on = |flag: bool, w: f64| if flag { w } else { 0.0 };
        TermWeights {
            dse: on(self.enable_dse, self.lambda1),
            lse: on(self.enable_lse, self.lambda2),
            ortho: on(self.enable_ortho, 1.0),
            reg: on(self.enable_ag, 1.0),
            disc: on(self.enable_ag, self.lambda_adv),
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        let (dse, lse, ag, ortho) = ablation.flags();
        self.enable_dse = dse;
        self.enable_lse = lse;
        self.enable_ag = ag;
        self.enable_ortho = ortho;
        self
    }
}

/// Component toggles of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// DSE only
    A,
    /// LSE only
    B,
    /// DSE + LSE, no orthogonality
    C,
    /// DSE + LSE + orthogonality
    D,
    /// LSE + adversarial branch
    E,
    /// DSE + LSE + adversarial, no orthogonality
    F,
    /// everything
    G,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::A,
        Ablation::B,
        Ablation::C,
        Ablation::D,
        Ablation::E,
        Ablation::F,
        Ablation::G,
    ];

    /// `(dse, lse, ag, ortho)`
    pub fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            Ablation::A => (true, false, false, false),
            Ablation::B => (false, true, false, false),
            Ablation::C => (true, true, false, false),
            Ablation::D => (true, true, false, true),
            Ablation::E => (false, true, true, false),
            Ablation::F => (true, true, true, false),
            Ablation::G => (true, true, true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::A => "A",
            Ablation::B => "B",
            Ablation::C => "C",
            Ablation::D => "D",
            Ablation::E => "E",
            Ablation::F => "F",
            Ablation::G => "G",
        }
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        Ablation::ALL.into_iter().find(|a| a.name().eq_ignore_ascii_case(s))
    }
}

/// `lr0 · decay^⌊epoch / step⌋`
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi((epoch / cfg.lr_step_epochs) as i32)
}

/// Linear ramp from 0 at the first epoch to `adv_eps_max` at the last.
pub fn adv_eps_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.epochs <= 1 {
        cfg.adv_eps_max
    } else {
        cfg.adv_eps_max * epoch.min(cfg.epochs - 1) as f64 / (cfg.epochs - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub lr: f64,
    /// `‖W_dᵀ W_l‖_F` at the end of the epoch
    pub cross_norm: f64,
    pub prototype_norms: Vec<f64>,
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,l_dse,l_cl,l_proto,l_lse,l_ortho,l_reg,l_disc,l_total,lr,cross_norm,train_acc";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn cross_norms(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.cross_norm).collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for e in &self.epochs {
            write!(out, "{}", e.epoch).expect("write to String");
            let l = &e.losses;
            for v in [
                l.l_dse, l.l_cl, l.l_proto, l.l_lse, l.l_ortho, l.l_reg, l.l_disc, l.l_total, e.lr, e.cross_norm,
                e.train_acc,
            ] {
                out.push(',');
                fmt_f64(&mut out, v);
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub step: u64,
    rng: Rng,
}

impl TrainState {
    pub fn new(params: ModelParams, cfg: &TrainConfig) -> Self {
        Self {
            params,
            optimizer: Adam::new(cfg.weight_decay),
            step: 0,
            rng: Rng::new(cfg.seed).split(STREAM_ADVERSARIAL),
        }
    }
}

const STREAM_INIT: u64 = 1;
const STREAM_ADVERSARIAL: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

#[derive(Debug, Clone)]
pub struct StepReport {
    pub losses: LossBreakdown,
    pub correct: usize,
}

/// One optimization step on `indices` at the given learning rate and
/// adversarial strength.
pub fn train_step(
    state: &mut TrainState,
    ds: &TimeSeriesDataset,
    indices: &[usize],
    cfg: &TrainConfig,
    lr: f64,
    adv_eps: f64,
) -> Result<StepReport> {
    let weights = cfg.term_weights();
    let adversarial = if weights.reg > 0.0 {
        let stream = state.rng.split(state.step);
        Some(prepare_adversarial(
            &state.params,
            ds,
            indices,
            adv_eps,
            cfg.adv_power_iters,
            &stream,
        )?)
    } else {
        None
    };
    let spec = ObjectiveSpec {
        weights,
        margins: cfg.margins,
        repulsion_cap: cfg.repulsion_cap,
        energy_floor: cfg.energy_floor,
        coupling: DiscriminatorCoupling::Reversed,
        adversarial: adversarial.as_ref(),
    };
    let out = evaluate_objective(&state.params, ds, indices, &spec, true)?;
    let grads = out.grads.expect("requested gradients");

    state.optimizer.begin_step();
    let grad_tensors = grads.tensors();
    for (slot, ((name, param), (_, grad))) in state.params.tensors_mut().into_iter().zip(grad_tensors).enumerate() {
        // prototypes are class anchors; decay would pull them to the origin
        let decay = name != "prototypes";
        state
            .optimizer
            .update(slot, param.as_mut_slice(), grad.as_slice(), lr, decay);
    }
    state.step += 1;
    if !state.params.is_finite() {
        return Err(Error::NonFinite(format!("parameters after step {}", state.step)));
    }
    let correct = out
        .predictions
        .iter()
        .zip(indices)
        .filter(|(p, &i)| **p == ds.class_label(i))
        .count();
    Ok(StepReport {
        losses: out.breakdown,
        correct,
    })
}

/// Sets each prototype to the mean encoder feature of its class. Classes
/// absent from `ds` keep their current prototype.
pub fn warm_up_prototypes(params: &mut ModelParams, ds: &TimeSeriesDataset) -> Result<()> {
    let feats = params.encode(ds)?;
    let b = params.arch.encoding_dim;
    let mut sums = vec![vec![0.0; b]; params.arch.num_classes];
    let mut counts = vec![0usize; params.arch.num_classes];
    for i in 0..ds.len() {
        let y = ds.class_label(i);
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(feats.row(i)) {
            *s += v;
        }
    }
    for (k, (sum, count)) in sums.into_iter().zip(counts).enumerate() {
        if count > 0 {
            for (p, s) in params.prototypes.row_mut(k).iter_mut().zip(sum) {
                *p = s / count as f64;
            }
        }
    }
    Ok(())
}

fn check_compatible(ds: &TimeSeriesDataset, arch: &ArchConfig) -> Result<()> {
    if ds.channels() != arch.in_channels
        || ds.num_classes() != arch.num_classes
        || ds.num_domains() != arch.num_domains
    {
        return Err(Error::InvalidArgument(format!(
            "dataset ({} channels, {} classes, {} domains) does not match architecture ({}, {}, {})",
            ds.channels(),
            ds.num_classes(),
            ds.num_domains(),
            arch.in_channels,
            arch.num_classes,
            arch.num_domains
        )));
    }
    Ok(())
}

/// Initializes from `cfg.seed`, warms up the prototypes, then trains for
/// `cfg.epochs` epochs with a seeded shuffle per epoch.
pub fn fit(train: &TimeSeriesDataset, cfg: &TrainConfig, arch: &ArchConfig) -> Result<(ModelParams, TrainHistory)> {
    fit_with(train, cfg, arch, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with<F: FnMut(&EpochRecord)>(
    train: &TimeSeriesDataset,
    cfg: &TrainConfig,
    arch: &ArchConfig,
    mut on_epoch: F,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    arch.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    check_compatible(train, arch)?;
    let root = Rng::new(cfg.seed);
    let mut params = ModelParams::init(arch, &mut root.split(STREAM_INIT))?;
    warm_up_prototypes(&mut params, train)?;
    let mut state = TrainState::new(params, cfg);
    let mut shuffle = root.split(STREAM_SHUFFLE);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let eps = adv_eps_at(epoch, cfg);
        shuffle.shuffle(&mut order);
        let mut acc = LossBreakdown::default();
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let report = train_step(&mut state, train, batch, cfg, lr, eps)?;
            let w = batch.len() as f64 / train.len() as f64;
            accumulate(&mut acc, &report.losses, w);
            correct += report.correct;
        }
        let record = EpochRecord {
            epoch,
            losses: acc,
            lr,
            cross_norm: state.params.cross_norm(),
            prototype_norms: state.params.prototype_norms(),
            train_acc: correct as f64 / train.len() as f64,
        };
        log::debug!(
            "epoch {epoch}: total {:.4} cross {:.4e} acc {:.3}",
            record.losses.l_total,
            record.cross_norm,
            record.train_acc
        );
        on_epoch(&record);
        history.epochs.push(record);
    }
    Ok((state.params, history))
}

fn accumulate(acc: &mut LossBreakdown, l: &LossBreakdown, w: f64) {
    acc.l_dse += w * l.l_dse;
    acc.l_cl += w * l.l_cl;
    acc.l_proto += w * l.l_proto;
    acc.l_lse += w * l.l_lse;
    acc.l_ortho += w * l.l_ortho;
    acc.l_reg += w * l.l_reg;
    acc.l_disc += w * l.l_disc;
    acc.l_total += w * l.l_total;
}
