//! End-to-end experiment protocols: the pattern-in-noise detection task and
//! the single-exemplar spoken-digit protocol. Both the command line and the
//! test suites drive these.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result, SkimError};
use crate::eval::{
    export_traces, match_presentations, output_spike_trains, score_stream, wills_error,
    ConfusionCounts, ErrorScore, StreamScoring,
};
use crate::io::{save_network, save_raster, save_weights_csv, write_atomic};
use crate::kernel::{KernelFamily, ParamRange};
use crate::network::{ActivationMatrix, ForwardTrace, NetworkParams, SkimNetwork, SpikeRaster};
use crate::patterns::{
    augment_training_set, gen_embedded_task, gen_embedded_task_with_pattern, make_target_signal,
    EmbeddedPatternTask, EmbeddedTaskParams, LabeledRasterSet,
};
use crate::pruning::cumulative_weight_fraction;
use crate::rng::substream;
use crate::solver::TargetSignal;
use crate::train::{calibrate_threshold, fit, fit_calibrated, SolveOptions, TrainingSet};

/// How the soma threshold is chosen after solving.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Keep the configured threshold.
    #[default]
    Fixed,
    /// Midpoint of the mean training soma over target and silent steps.
    Calibrated,
}

/// Solves output weights and applies the threshold rule.
pub fn train_network(
    net: &mut SkimNetwork,
    data: &TrainingSet,
    opts: &SolveOptions,
    rule: ThresholdRule,
) -> Result<ActivationMatrix> {
    match rule {
        ThresholdRule::Fixed => fit(net, data, opts),
        ThresholdRule::Calibrated => fit_calibrated(net, data, opts),
    }
}

/// Re-applies `rule` to a network whose output weights are already solved.
pub fn recalibrate(net: &mut SkimNetwork, data: &TrainingSet, rule: ThresholdRule) -> Result<()> {
    if rule == ThresholdRule::Fixed {
        return Ok(());
    }
    let w = net
        .output_weights()
        .ok_or_else(|| SkimError::State("network has no output weights".into()))?
        .clone();
    let a = net.collect_activations(&data.inputs)?;
    let theta = calibrate_threshold(&a, &w, &data.stacked_targets()?)?;
    net.set_threshold(theta)
}

/// A 64-bit seed derived from `seed` for the named purpose.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    substream(seed, name).next_u64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTaskConfig {
    /// Training stream; its seed also fixes the pattern.
    pub task: EmbeddedTaskParams,
    /// Embeddings in the fresh test stream.
    pub test_embeddings: usize,
    pub test_stream_len: usize,
    /// `num_inputs` must equal the task's channel count and `num_outputs` 1.
    pub network: NetworkParams,
    pub solve: SolveOptions,
    pub threshold_rule: ThresholdRule,
    pub scoring: StreamScoring,
}

impl PatternTaskConfig {
    /// The detection task: 4 channels, 200-step patterns, noise ratio 1,
    /// 10-step target windows, 80 alpha dendrites with `tau ~ U(0, 100)`.
    pub fn standard(seed: u64) -> Self {
        let task = EmbeddedTaskParams {
            seed,
            ..Default::default()
        };
        let family = KernelFamily::alpha_for_span(task.pattern_len as f64);
        PatternTaskConfig {
            network: NetworkParams::new(task.num_channels, 80, 1, family).seed(seed),
            scoring: StreamScoring::new(task.target_width),
            task,
            test_embeddings: 60,
            test_stream_len: 30_000,
            solve: SolveOptions::default(),
            threshold_rule: ThresholdRule::Calibrated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.test_task_params().validate()?;
        self.network.validate()?;
        if self.network.num_inputs != self.task.num_channels {
            return Err(validation(format!(
                "network has {} inputs but the task has {} channels",
                self.network.num_inputs, self.task.num_channels
            )));
        }
        if self.network.num_outputs != 1 {
            return Err(validation("the detection task has exactly one output"));
        }
        if self.network.target_amplitude != self.task.target_amplitude {
            return Err(validation("network and task target amplitudes differ"));
        }
        Ok(())
    }

    /// Parameters of the test stream: same geometry, fresh occurrences.
    pub fn test_task_params(&self) -> EmbeddedTaskParams {
        EmbeddedTaskParams {
            num_embeddings: self.test_embeddings,
            stream_len: self.test_stream_len,
            seed: derive_seed(self.task.seed, "test_stream"),
            ..self.task.clone()
        }
    }
}

/// A network's performance on one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvaluation {
    pub trace: ForwardTrace,
    pub counts: ConfusionCounts,
    pub detection_rate: f64,
    pub wills: ErrorScore,
}

pub fn evaluate_stream(
    net: &SkimNetwork,
    raster: &SpikeRaster,
    task: &EmbeddedPatternTask,
    scoring: &StreamScoring,
) -> Result<StreamEvaluation> {
    let trace = net.forward(raster)?;
    let spikes = trace.spike_times(0)?;
    let counts = score_stream(&spikes, &task.target_windows(), raster.num_steps(), scoring)?;
    Ok(StreamEvaluation {
        detection_rate: counts.detection_rate().unwrap_or(f64::NAN),
        wills: wills_error(&counts),
        counts,
        trace,
    })
}

/// Everything produced by one run of the detection task.
#[derive(Debug, Clone)]
pub struct PatternRun {
    pub network: SkimNetwork,
    pub training: TrainingSet,
    pub task: EmbeddedPatternTask,
    pub activations: ActivationMatrix,
    pub test_raster: SpikeRaster,
    pub test_target: TargetSignal,
    pub test_task: EmbeddedPatternTask,
    pub evaluation: StreamEvaluation,
}

/// Generates the training stream, trains, and scores a fresh test stream
/// that carries the same pattern.
pub fn run_pattern_task(cfg: &PatternTaskConfig) -> Result<PatternRun> {
    cfg.validate()?;
    let (raster, target, task) = gen_embedded_task(&cfg.task)?;
    let training = TrainingSet::single(raster, target)?;
    let mut network = SkimNetwork::new(cfg.network.clone())?;
    let activations = train_network(&mut network, &training, &cfg.solve, cfg.threshold_rule)?;
    let (test_raster, test_target, test_task) =
        gen_embedded_task_with_pattern(&cfg.test_task_params(), &task.pattern)?;
    let evaluation = evaluate_stream(&network, &test_raster, &test_task, &cfg.scoring)?;
    Ok(PatternRun {
        network,
        training,
        task,
        activations,
        test_raster,
        test_target,
        test_task,
        evaluation,
    })
}

/// Summary numbers of a detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMetrics {
    pub seed: u64,
    pub num_dendrites: usize,
    pub num_synapses: usize,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    /// NaN when the stream has no target windows.
    #[serde(with = "crate::eval::nonfinite")]
    pub detection_rate: f64,
    pub wills_error: ErrorScore,
    pub cumulative_fraction: Vec<f64>,
}

impl PatternRun {
    pub fn metrics(&self) -> Result<PatternMetrics> {
        let w = self
            .network
            .output_weights()
            .ok_or_else(|| SkimError::State("network has no output weights".into()))?;
        Ok(PatternMetrics {
            seed: self.task_seed(),
            num_dendrites: self.network.num_dendrites(),
            num_synapses: self.network.num_synapses(),
            threshold: self.network.threshold(),
            counts: self.evaluation.counts,
            detection_rate: self.evaluation.detection_rate,
            wills_error: self.evaluation.wills,
            cumulative_fraction: cumulative_weight_fraction(w)?,
        })
    }

    fn task_seed(&self) -> u64 {
        self.network.seed()
    }
}

/// Writes every artifact of a detection run into `dir`: rasters, ground
/// truth, network, weights, metrics and the five trace panels of the test
/// stream (under `traces/`). Returns the paths written.
pub fn write_pattern_artifacts(run: &PatternRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    };
    put("task.json", json_bytes(&run.task)?)?;
    put("test_task.json", json_bytes(&run.test_task)?)?;
    put("metrics.json", json_bytes(&run.metrics()?)?)?;
    let mut paths = written;
    for (name, raster) in [
        ("train_raster.txt", &run.training.inputs[0]),
        ("test_raster.txt", &run.test_raster),
    ] {
        let path = dir.join(name);
        save_raster(raster, &path)?;
        paths.push(path);
    }
    let net_path = dir.join("network.json");
    save_network(&run.network, &net_path)?;
    paths.push(net_path);
    if let Some(w) = run.network.output_weights() {
        let path = dir.join("weights.csv");
        save_weights_csv(w, &path)?;
        paths.push(path);
    }
    paths.extend(export_traces(
        &run.evaluation.trace,
        &run.test_raster,
        Some(&run.test_target),
        None,
        &dir.join("traces"),
    )?);
    Ok(paths)
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Kernel families scaled to a memory span of `span` steps: alpha with
/// `tau ~ U(0, span/2)`; delayed alpha and delayed Gaussian with delays
/// `~ U(0, span/2)` and widths (`tau` in `(span/12, span/3)`, `sigma` in
/// `(span/6, span/3)`) comparable to the timing spread of warped inputs.
pub fn span_scaled_families(span: f64) -> Vec<(&'static str, KernelFamily)> {
    vec![
        (
            "alpha",
            KernelFamily::alpha(ParamRange::new(0.0, span / 2.0)),
        ),
        (
            "delayed_alpha",
            KernelFamily::delayed_alpha(
                ParamRange::new(0.0, span / 2.0),
                ParamRange::new(span / 12.0, span / 3.0),
            ),
        ),
        (
            "delayed_gaussian",
            KernelFamily::delayed_gaussian(
                ParamRange::new(0.0, span / 2.0),
                ParamRange::new(span / 6.0, span / 3.0),
            ),
        ),
    ]
}

/// Single-exemplar digit protocol: one detector neuron per class, trained
/// on the class exemplar plus the other classes' exemplars (all time-warped),
/// then scored on a labeled test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitProtocolConfig {
    pub warp_min: f64,
    pub warp_max: f64,
    pub warp_steps: usize,
    pub dendrites_per_class: usize,
    pub kernel_family: KernelFamily,
    pub weight_range: (f64, f64),
    pub target_width: usize,
    pub target_amplitude: f64,
    pub threshold: f64,
    pub threshold_rule: ThresholdRule,
    pub solve: SolveOptions,
    pub seed: u64,
}

impl DigitProtocolConfig {
    /// 10 dendrites per class, warps 0.76 to 1.24 in 7 steps, 200-step
    /// targets.
    pub fn standard(kernel_family: KernelFamily, seed: u64) -> Self {
        DigitProtocolConfig {
            warp_min: 0.76,
            warp_max: 1.24,
            warp_steps: 7,
            dendrites_per_class: 10,
            kernel_family,
            weight_range: (-0.5, 0.5),
            target_width: 200,
            target_amplitude: 1.0,
            threshold: 0.5,
            threshold_rule: ThresholdRule::Calibrated,
            solve: SolveOptions::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DigitRun {
    pub networks: Vec<SkimNetwork>,
    pub per_class: Vec<ConfusionCounts>,
    /// Counts summed over all class detectors.
    pub pooled: ConfusionCounts,
    pub wills: ErrorScore,
}

pub fn run_digit_protocol(
    exemplars: &LabeledRasterSet,
    test: &LabeledRasterSet,
    cfg: &DigitProtocolConfig,
) -> Result<DigitRun> {
    if exemplars.num_channels != test.num_channels {
        return Err(validation("exemplar and test sets differ in channel count"));
    }
    let classes = exemplars.num_classes();
    if classes == 0 {
        return Err(validation("no exemplars"));
    }
    let train = augment_training_set(exemplars, cfg.warp_min, cfg.warp_max, cfg.warp_steps)?;
    let per_class: Vec<(SkimNetwork, ConfusionCounts)> = (0..classes)
        .into_par_iter()
        .map(|class| {
            let targets = train
                .rasters
                .iter()
                .zip(train.labels.iter().zip(&train.reference_times))
                .map(|(r, (&label, &t))| {
                    if label == class {
                        let width = cfg.target_width.min(r.num_steps() - t);
                        make_target_signal(
                            &[t],
                            width,
                            cfg.target_amplitude,
                            r.num_steps(),
                            1,
                            &[0],
                        )
                    } else {
                        Ok(TargetSignal::zeros(1, r.num_steps()))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let data = TrainingSet::new(train.rasters.clone(), targets)?;
            let params = NetworkParams {
                weight_range: cfg.weight_range,
                threshold: cfg.threshold,
                target_amplitude: cfg.target_amplitude,
                seed: derive_seed(cfg.seed, &format!("class_{class}")),
                ..NetworkParams::new(
                    exemplars.num_channels,
                    cfg.dendrites_per_class,
                    1,
                    cfg.kernel_family.clone(),
                )
            };
            let mut net = SkimNetwork::new(params)?;
            train_network(&mut net, &data, &cfg.solve, cfg.threshold_rule)?;
            let trains: Vec<Vec<usize>> = output_spike_trains(&net, &test.rasters)?
                .into_iter()
                .map(|mut per_output| per_output.swap_remove(0))
                .collect();
            let counts = match_presentations(&trains, test, class, cfg.target_width)?;
            Ok((net, counts))
        })
        .collect::<Result<Vec<_>>>()?;
    let (networks, per_class): (Vec<_>, Vec<_>) = per_class.into_iter().unzip();
    let pooled = per_class
        .iter()
        .fold(ConfusionCounts::default(), |acc, c| acc.add(c));
    Ok(DigitRun {
        networks,
        wills: wills_error(&pooled),
        per_class,
        pooled,
    })
}
