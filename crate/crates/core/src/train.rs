//! Glue between simulation and the solvers: paired presentations and
//! targets, and batch/online fitting of a network's output weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result};
use crate::network::{ActivationMatrix, SkimNetwork, SpikeRaster};
use crate::solver::{
    online_init, residual_norm, solve_batch, TargetSignal, DEFAULT_ONLINE_REGULARIZATION,
};

/// Presentations with their desired soma signals. Dendritic state is reset
/// between presentations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<SpikeRaster>,
    pub targets: Vec<TargetSignal>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<SpikeRaster>, targets: Vec<TargetSignal>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(validation("training set is empty"));
        }
        if inputs.len() != targets.len() {
            return Err(dimension(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        let n = targets[0].num_outputs();
        for (r, y) in inputs.iter().zip(&targets) {
            if r.num_steps() != y.num_steps() {
                return Err(dimension(format!(
                    "raster of {} steps paired with target of {} steps",
                    r.num_steps(),
                    y.num_steps()
                )));
            }
            if y.num_outputs() != n {
                return Err(dimension("targets differ in output count"));
            }
        }
        Ok(TrainingSet { inputs, targets })
    }

    /// A single continuous stream.
    pub fn single(input: SpikeRaster, target: TargetSignal) -> Result<Self> {
        Self::new(vec![input], vec![target])
    }

    pub fn num_outputs(&self) -> usize {
        self.targets[0].num_outputs()
    }

    pub fn stacked_targets(&self) -> Result<TargetSignal> {
        TargetSignal::concat(&self.targets)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Batch,
    Online,
}

impl std::str::FromStr for SolverKind {
    type Err = crate::SkimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(SolverKind::Batch),
            "online" => Ok(SolverKind::Online),
            other => Err(validation(format!(
                "unknown solver `{other}` (expected batch or online)"
            ))),
        }
    }
}

/// How output weights are solved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub solver: SolverKind,
    /// Singular-value cutoff for the batch solver; `None` uses the default.
    pub tolerance: Option<f64>,
    /// Ridge parameter for the online solver.
    pub regularization: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            solver: SolverKind::Batch,
            tolerance: None,
            regularization: DEFAULT_ONLINE_REGULARIZATION,
        }
    }
}

impl SolveOptions {
    pub fn online(regularization: f64) -> Self {
        SolveOptions {
            solver: SolverKind::Online,
            regularization,
            ..Default::default()
        }
    }
}

fn check_outputs(net: &SkimNetwork, data: &TrainingSet) -> Result<()> {
    if data.num_outputs() != net.num_outputs() {
        return Err(dimension(format!(
            "targets have {} outputs, network has {}",
            data.num_outputs(),
            net.num_outputs()
        )));
    }
    Ok(())
}

/// Output weights for `net` on `data` given precomputed activations.
pub fn solve_output_weights(
    activations: &ActivationMatrix,
    targets: &TargetSignal,
    opts: &SolveOptions,
) -> Result<DMatrix<f64>> {
    match opts.solver {
        SolverKind::Batch => solve_batch(activations.values(), targets.values(), opts.tolerance),
        SolverKind::Online => {
            let mut state = online_init(
                activations.num_dendrites(),
                targets.num_outputs(),
                opts.regularization,
            )?;
            state.update_all(activations.values(), targets.values())?;
            Ok(state.weights)
        }
    }
}

/// Simulates `data`, solves the output weights and stores them in `net`.
/// Returns the activations used for the solve.
pub fn fit(
    net: &mut SkimNetwork,
    data: &TrainingSet,
    opts: &SolveOptions,
) -> Result<ActivationMatrix> {
    check_outputs(net, data)?;
    let a = net.collect_activations(&data.inputs)?;
    let y = data.stacked_targets()?;
    let w = solve_output_weights(&a, &y, opts)?;
    net.set_output_weights(w)?;
    Ok(a)
}

/// Threshold halfway between the mean training soma potential over steps
/// where any target is active and over steps where none is.
pub fn calibrate_threshold(
    activations: &ActivationMatrix,
    weights: &DMatrix<f64>,
    targets: &TargetSignal,
) -> Result<f64> {
    if activations.num_steps() != targets.num_steps()
        || weights.ncols() != activations.num_dendrites()
    {
        return Err(dimension(
            "activations, weights and targets disagree in shape",
        ));
    }
    if weights.nrows() != targets.num_outputs() {
        return Err(dimension("weights and targets disagree in output count"));
    }
    let y = targets.values();
    let soma = weights * activations.values();
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for t in 0..y.ncols() {
        for n in 0..y.nrows() {
            if y[(n, t)] > 0.0 {
                on += soma[(n, t)];
                n_on += 1;
            } else if y.column(t).iter().all(|&v| v <= 0.0) {
                off += soma[(n, t)];
                n_off += 1;
            }
        }
    }
    if n_on == 0 || n_off == 0 {
        return Err(crate::SkimError::Degenerate(
            "calibration needs both target and silent steps".into(),
        ));
    }
    Ok(0.5 * (on / n_on as f64 + off / n_off as f64))
}

/// [`fit`] followed by [`calibrate_threshold`]; the calibrated value is
/// stored in the network.
pub fn fit_calibrated(
    net: &mut SkimNetwork,
    data: &TrainingSet,
    opts: &SolveOptions,
) -> Result<ActivationMatrix> {
    let a = fit(net, data, opts)?;
    let w = net
        .output_weights()
        .expect("fit stores output weights")
        .clone();
    let theta = calibrate_threshold(&a, &w, &data.stacked_targets()?)?;
    net.set_threshold(theta)?;
    Ok(a)
}

/// `||W A - Y||_F` of a trained network on `data`.
pub fn training_residual(net: &SkimNetwork, data: &TrainingSet) -> Result<f64> {
    check_outputs(net, data)?;
    let w = net
        .output_weights()
        .ok_or_else(|| crate::SkimError::State("network has no output weights".into()))?;
    let a = net.collect_activations(&data.inputs)?;
    let y = data.stacked_targets()?;
    residual_norm(w, a.values(), y.values())
}
