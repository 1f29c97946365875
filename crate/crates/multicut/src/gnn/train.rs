//! Supervised training of the learned solver.
//!
//! The loss is BCE against the ground-truth labeling plus the cycle
//! penalty, with the penalty weight following a warmup schedule: off for
//! the first `warmup_instances` presented instances, ramped linearly over
//! `ramp_instances`, then held at `target_alpha`. Graphs are batched as one
//! block-diagonal super-graph so batch-norm statistics span the batch;
//! penalty cycles are enumerated per instance and offset into the batch.

use super::{forward_pass, predict, Backbone, ForwardGraph, GnnError, ModelParams};
use crate::cycles::enumerate_chordless_cycles;
use crate::datasets::{read_dataset, LabeledInstance};
use crate::graph::optimal_objective_ratio;
use crate::nn::{bce_value, cycle_penalty_value, AdamConfig, AdamState, Tape, Tensor2D};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::rc::Rc;

/// Cut-probability threshold shared by the penalty gate and rounding.
pub const GATE_THRESHOLD: f64 = 0.5;

/// Warmup schedule for the cycle-penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    /// Instances presented before the penalty turns on.
    pub warmup_instances: u64,
    /// Instances over which the weight ramps linearly to its target.
    pub ramp_instances: u64,
    pub target_alpha: f64,
}

impl AlphaSchedule {
    pub fn constant(alpha: f64) -> Self {
        AlphaSchedule {
            warmup_instances: 0,
            ramp_instances: 0,
            target_alpha: alpha,
        }
    }

    pub fn off() -> Self {
        Self::constant(0.0)
    }

    /// Penalty weight after `seen` instances have been presented.
    pub fn alpha_at(&self, seen: u64) -> f64 {
        if seen < self.warmup_instances {
            0.0
        } else if seen < self.warmup_instances + self.ramp_instances {
            let progress = (seen - self.warmup_instances) as f64 / self.ramp_instances as f64;
            self.target_alpha * progress
        } else {
            self.target_alpha
        }
    }
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        AlphaSchedule {
            warmup_instances: 5_000,
            ramp_instances: 500,
            target_alpha: 1e-3,
        }
    }
}

fn default_depth() -> usize {
    4
}
fn default_width() -> usize {
    32
}
fn default_true() -> bool {
    true
}
fn default_budget() -> u64 {
    10_000
}
fn default_batch() -> usize {
    10
}
fn default_cycle_length() -> usize {
    3
}
fn default_eval_every() -> u64 {
    200
}
fn default_eval_sample() -> usize {
    200
}

/// Training configuration; JSON-serializable with desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Directory of labeled training instances (required by [`train`],
    /// unused by [`train_on_instances`]).
    #[serde(default)]
    pub train_dir: Option<PathBuf>,
    /// Held-out evaluation directory; falls back to a slice of the
    /// training set.
    #[serde(default)]
    pub eval_dir: Option<PathBuf>,
    #[serde(default)]
    pub backbone: Backbone,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_true")]
    pub batch_norm: bool,
    /// Total number of instance presentations.
    #[serde(default = "default_budget")]
    pub instance_budget: u64,
    /// Graphs per optimizer step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub alpha: AlphaSchedule,
    /// Maximum chordless cycle length for the penalty (3 suffices on
    /// complete graphs; sparse instances use up to 8).
    #[serde(default = "default_cycle_length")]
    pub max_cycle_length: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "default_eval_every")]
    pub eval_every_steps: u64,
    /// Evaluation-set size when falling back to training instances.
    #[serde(default = "default_eval_sample")]
    pub eval_sample: usize,
    #[serde(default = "default_true")]
    pub relu_after_batch_norm: bool,
    #[serde(default)]
    pub normalize_self_term: bool,
    #[serde(default)]
    pub average_logits: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let fail = |reason: &str| {
            Err(GnnError::BadConfig {
                reason: reason.to_string(),
            })
        };
        if self.depth < 1 || self.width < 1 {
            return fail("depth and width must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if self.instance_budget < 1 {
            return fail("instance_budget must be at least 1");
        }
        if self.max_cycle_length < 3 {
            return fail("max_cycle_length must be at least 3");
        }
        if self.alpha.target_alpha < 0.0 {
            return fail("target_alpha must be non-negative");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, GnnError> {
        let config: TrainConfig =
            serde_json::from_str(text).map_err(|e| GnnError::BadConfig {
                reason: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }
}

/// One evaluation snapshot: losses and solution-quality metrics on the
/// held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub bce: f64,
    pub ccl: f64,
    /// Fraction of instances whose thresholded output already satisfied
    /// every cycle inequality.
    pub feasible_ratio: f64,
    /// Fraction of instances solved to the exact optimum after rounding.
    pub optimal_ratio: f64,
    /// Mean optimal objective ratio after rounding.
    pub mean_ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCurves {
    pub rows: Vec<CurveRow>,
}

impl TrainingCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,bce,ccl,feasible_ratio,optimal_ratio,mean_ratio\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.bce, r.ccl, r.feasible_ratio, r.optimal_ratio, r.mean_ratio
            );
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub curves: TrainingCurves,
}

/// Trains from on-disk datasets per `config.train_dir` / `config.eval_dir`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, GnnError> {
    config.validate()?;
    let train_dir = config.train_dir.as_ref().ok_or(GnnError::BadConfig {
        reason: "train_dir is required".into(),
    })?;
    let (train_set, _) = read_dataset(train_dir).map_err(|e| GnnError::BadConfig {
        reason: format!("train_dir: {e}"),
    })?;
    let eval_set = match &config.eval_dir {
        Some(dir) => {
            let (set, _) = read_dataset(dir).map_err(|e| GnnError::BadConfig {
                reason: format!("eval_dir: {e}"),
            })?;
            set
        }
        None => train_set
            .iter()
            .take(config.eval_sample.max(1))
            .cloned()
            .collect(),
    };
    train_on_instances(config, &train_set, &eval_set)
}

/// Trains on in-memory instances. Every training instance must carry a
/// ground-truth labeling.
pub fn train_on_instances(
    config: &TrainConfig,
    train_set: &[LabeledInstance],
    eval_set: &[LabeledInstance],
) -> Result<TrainOutcome, GnnError> {
    config.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(GnnError::EmptyDataset);
    }
    for (index, inst) in train_set.iter().chain(eval_set.iter()).enumerate() {
        if inst.optimal_labeling.is_none() || inst.optimal_cost.is_none() {
            return Err(GnnError::MissingLabels {
                index: index % train_set.len().max(1),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ModelParams::new(
        config.backbone,
        config.depth,
        config.width,
        config.batch_norm,
        &mut rng,
    );
    model.relu_after_batch_norm = config.relu_after_batch_norm;
    model.normalize_self_term = config.normalize_self_term;
    model.average_logits = config.average_logits;

    let use_penalty = config.alpha.target_alpha > 0.0;
    // per-instance penalty cycles, enumerated once
    let train_cycles: Vec<Rc<Vec<Vec<usize>>>> = if use_penalty {
        train_set
            .iter()
            .map(|inst| {
                enumerate_chordless_cycles(&inst.graph, config.max_cycle_length)
                    .map(|set| Rc::new(set.cycles().to_vec()))
            })
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    let targets: Vec<Vec<f64>> = train_set
        .iter()
        .map(|inst| {
            inst.optimal_labeling
                .as_ref()
                .expect("checked above")
                .as_slice()
                .iter()
                .map(|&cut| f64::from(u8::from(cut)))
                .collect()
        })
        .collect();
    let eval_cycles: Vec<Vec<Vec<usize>>> = eval_set
        .iter()
        .map(|inst| {
            enumerate_chordless_cycles(&inst.graph, config.max_cycle_length)
                .map(|set| set.cycles().to_vec())
        })
        .collect::<Result<_, _>>()?;

    let mut adam = AdamState::new(&model.param_refs(), config.optimizer);
    let mut curves = TrainingCurves::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut seen: u64 = 0;
    let mut step: u64 = 0;

    'training: loop {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            if seen >= config.instance_budget {
                break 'training;
            }
            let alpha = config.alpha.alpha_at(seen);
            let graphs: Vec<&crate::graph::WeightedGraph> =
                batch.iter().map(|&i| &train_set[i].graph).collect();
            let input = ForwardGraph::from_graphs(&graphs);

            let mut batch_targets = Vec::with_capacity(input.edge_count());
            for &i in batch {
                batch_targets.extend_from_slice(&targets[i]);
            }
            let mut batch_cycles: Vec<Vec<usize>> = Vec::new();
            if use_penalty && alpha > 0.0 {
                let mut edge_offset = 0;
                for &i in batch {
                    for cycle in train_cycles[i].iter() {
                        batch_cycles.push(cycle.iter().map(|&e| e + edge_offset).collect());
                    }
                    edge_offset += train_set[i].graph.edge_count();
                }
            }

            let mut tape = Tape::new();
            let pass = forward_pass(&mut tape, &mut model, &input, true)?;
            let bce = tape.bce_loss(pass.probs, Rc::new(batch_targets))?;
            let loss = if alpha > 0.0 && !batch_cycles.is_empty() {
                let ccl =
                    tape.cycle_penalty(pass.probs, Rc::new(batch_cycles), alpha, GATE_THRESHOLD)?;
                tape.add(bce, ccl)?
            } else {
                bce
            };
            let mut grads = tape.backward(loss)?;
            let grad_tensors: Vec<Tensor2D> = pass
                .param_ids
                .iter()
                .map(|&id| grads.take(id, tape.shape(id)))
                .collect();
            adam.step(&mut model.param_refs_mut(), &grad_tensors)?;

            seen += batch.len() as u64;
            step += 1;
            if config.eval_every_steps > 0 && step.is_multiple_of(config.eval_every_steps) {
                curves
                    .rows
                    .push(evaluate(&model, eval_set, &eval_cycles, config, step)?);
            }
        }
    }
    if curves.rows.last().is_none_or(|row| row.step != step) {
        curves
            .rows
            .push(evaluate(&model, eval_set, &eval_cycles, config, step)?);
    }
    Ok(TrainOutcome { model, curves })
}

/// Held-out metrics for one model snapshot. Losses use the inference
/// (running-statistics) path; the penalty is reported at the schedule's
/// target weight for comparability across the run.
fn evaluate(
    model: &ModelParams,
    eval_set: &[LabeledInstance],
    eval_cycles: &[Vec<Vec<usize>>],
    config: &TrainConfig,
    step: u64,
) -> Result<CurveRow, GnnError> {
    let mut bce_sum = 0.0;
    let mut ccl_sum = 0.0;
    let mut feasible = 0usize;
    let mut optimal = 0usize;
    let mut ratio_sum = 0.0;
    let report_alpha = if config.alpha.target_alpha > 0.0 {
        config.alpha.target_alpha
    } else {
        1.0
    };
    for (inst, cycles) in eval_set.iter().zip(eval_cycles) {
        let prediction = predict(model, &inst.graph)?;
        let target: Vec<f64> = inst
            .optimal_labeling
            .as_ref()
            .expect("validated by caller")
            .as_slice()
            .iter()
            .map(|&cut| f64::from(u8::from(cut)))
            .collect();
        bce_sum += bce_value(prediction.probs.as_slice(), &target);
        ccl_sum += cycle_penalty_value(
            prediction.probs.as_slice(),
            cycles,
            report_alpha,
            GATE_THRESHOLD,
        );
        feasible += usize::from(prediction.feasible_before_rounding);
        let opt = inst.optimal_cost.expect("validated by caller");
        if (prediction.objective - opt).abs() <= 1e-9 {
            optimal += 1;
        }
        ratio_sum += optimal_objective_ratio(prediction.objective, opt);
    }
    let n = eval_set.len() as f64;
    Ok(CurveRow {
        step,
        bce: bce_sum / n,
        ccl: ccl_sum / n,
        feasible_ratio: feasible as f64 / n,
        optimal_ratio: optimal as f64 / n,
        mean_ratio: ratio_sum / n,
    })
}
