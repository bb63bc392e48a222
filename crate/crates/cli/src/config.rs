//! Run configuration: one JSON document with `network`, `task`, `training`,
//! `prune` and `output` sections. Every field has a default, so `{}` is a
//! valid config that reproduces the embedded-pattern detection setup.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use skim_core::eval::StreamScoring;
use skim_core::kernel::DEFAULT_SUPPORT_EPSILON;
use skim_core::protocol::{PatternTaskConfig, ThresholdRule};
use skim_core::solver::DEFAULT_ONLINE_REGULARIZATION;
use skim_core::{EmbeddedTaskParams, KernelFamily, NetworkParams, SolveOptions, SolverKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream (weights, kernels, task, noise).
    pub seed: u64,
    pub network: NetworkSection,
    pub task: TaskSection,
    pub training: TrainingSection,
    pub prune: PruneSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Must match the task's channel count when given.
    pub num_inputs: Option<usize>,
    pub num_dendrites: usize,
    /// 1 for the generated task; the class count for datasets.
    pub num_outputs: Option<usize>,
    /// Defaults to alpha kernels with `tau ~ U(0, span / 2)`.
    pub kernel_family: Option<KernelFamily>,
    pub weight_range: (f64, f64),
    pub threshold: f64,
    pub threshold_rule: ThresholdRule,
    pub soma_reset: bool,
    pub swapped_order: bool,
    pub support_epsilon: f64,
    /// Trained network read by `test` and `prune`; defaults to
    /// `<output.dir>/network.json`.
    pub file: Option<PathBuf>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            num_inputs: None,
            num_dendrites: 80,
            num_outputs: None,
            kernel_family: None,
            weight_range: (-0.5, 0.5),
            threshold: 0.5,
            threshold_rule: ThresholdRule::Calibrated,
            soma_reset: false,
            swapped_order: false,
            support_epsilon: DEFAULT_SUPPORT_EPSILON,
            file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// A fixed pattern hidden in a Poisson stream.
    #[default]
    Embedded,
    /// Labeled raster-set files.
    Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub num_channels: usize,
    pub pattern_len: usize,
    pub pattern_spike_count: usize,
    pub stream_len: usize,
    pub num_embeddings: usize,
    pub noise_ratio: f64,
    pub test_stream_len: usize,
    pub test_embeddings: usize,
    pub train_set: Option<PathBuf>,
    /// Falls back to `train_set`.
    pub test_set: Option<PathBuf>,
}

impl Default for TaskSection {
    fn default() -> Self {
        let t = EmbeddedTaskParams::default();
        TaskSection {
            kind: TaskKind::Embedded,
            num_channels: t.num_channels,
            pattern_len: t.pattern_len,
            pattern_spike_count: t.pattern_spike_count,
            stream_len: t.stream_len,
            num_embeddings: t.num_embeddings,
            noise_ratio: t.noise_ratio,
            test_stream_len: 30_000,
            test_embeddings: 60,
            train_set: None,
            test_set: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub solver: SolverKind,
    /// Ridge parameter of the online solver.
    pub regularization: f64,
    /// Singular-value cutoff of the batch solver.
    pub tolerance: Option<f64>,
    pub target_amplitude: f64,
    pub target_width: usize,
    pub target_delay: usize,
    /// Time-warp augmentation of dataset presentations.
    pub warp_min: f64,
    pub warp_max: f64,
    pub warp_steps: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = EmbeddedTaskParams::default();
        TrainingSection {
            solver: SolverKind::Batch,
            regularization: DEFAULT_ONLINE_REGULARIZATION,
            tolerance: None,
            target_amplitude: t.target_amplitude,
            target_width: t.target_width,
            target_delay: t.target_delay,
            warp_min: 1.0,
            warp_max: 1.0,
            warp_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    #[default]
    TwoPass,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub strategy: PruneStrategy,
    /// Dendrites kept by `two_pass`.
    pub keep: Option<usize>,
    /// When set, `prune` trains a fresh network of this many dendrites
    /// instead of reading a trained one.
    pub pool: Option<usize>,
    /// Share of dendrites replaced per `iterative` round.
    pub fraction: f64,
    pub rounds: usize,
    pub accept_only_improvements: bool,
}

impl Default for PruneSection {
    fn default() -> Self {
        PruneSection {
            strategy: PruneStrategy::TwoPass,
            keep: None,
            pool: None,
            fraction: 0.2,
            rounds: 5,
            accept_only_improvements: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write per-timestep traces of the evaluated presentation.
    pub traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("skim_out"),
            traces: true,
        }
    }
}

impl RunConfig {
    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            solver: self.training.solver,
            tolerance: self.training.tolerance,
            regularization: self.training.regularization,
        }
    }

    pub fn embedded_params(&self) -> EmbeddedTaskParams {
        let t = &self.task;
        EmbeddedTaskParams {
            num_channels: t.num_channels,
            pattern_len: t.pattern_len,
            pattern_spike_count: t.pattern_spike_count,
            stream_len: t.stream_len,
            num_embeddings: t.num_embeddings,
            noise_ratio: t.noise_ratio,
            target_delay: self.training.target_delay,
            target_width: self.training.target_width,
            target_amplitude: self.training.target_amplitude,
            seed: self.seed,
        }
    }

    /// Network parameters for `num_inputs` channels and `num_outputs`
    /// outputs; `span` sizes the default kernel family.
    pub fn network_params(
        &self,
        num_inputs: usize,
        num_outputs: usize,
        span: f64,
    ) -> NetworkParams {
        let n = &self.network;
        let family = n
            .kernel_family
            .clone()
            .unwrap_or_else(|| KernelFamily::alpha_for_span(span));
        NetworkParams {
            weight_range: n.weight_range,
            threshold: n.threshold,
            target_amplitude: self.training.target_amplitude,
            soma_reset: n.soma_reset,
            swapped_order: n.swapped_order,
            support_epsilon: n.support_epsilon,
            ..NetworkParams::new(num_inputs, n.num_dendrites, num_outputs, family).seed(self.seed)
        }
    }

    pub fn pattern_task(&self) -> PatternTaskConfig {
        PatternTaskConfig {
            task: self.embedded_params(),
            test_embeddings: self.task.test_embeddings,
            test_stream_len: self.task.test_stream_len,
            network: self.network_params(self.task.num_channels, 1, self.task.pattern_len as f64),
            solve: self.solve_options(),
            threshold_rule: self.network.threshold_rule,
            scoring: StreamScoring::new(self.training.target_width),
        }
    }

    pub fn network_file(&self) -> PathBuf {
        self.network
            .file
            .clone()
            .unwrap_or_else(|| self.output.dir.join("network.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let p = cfg.pattern_task();
        let standard = PatternTaskConfig::standard(0);
        assert_eq!(p, standard);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err =
            serde_json::from_str::<RunConfig>(r#"{"network": {"dendrites": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("dendrites"));
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig {
            seed: 9,
            ..Default::default()
        };
        cfg.task.kind = TaskKind::Dataset;
        cfg.prune.keep = Some(4);
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
