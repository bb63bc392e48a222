//! Subcommands. Each one first builds a [`Plan`] that loads and checks every
//! input; nothing is written until planning has succeeded.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use skim_core::eval::{export_traces, per_class_counts, wills_error, ConfusionCounts, ErrorScore};
use skim_core::io::{load_network, load_raster_set, save_network, save_weights_csv, write_atomic};
use skim_core::kernel::KernelKind;
use skim_core::patterns::{
    augment_training_set, gen_embedded_task, gen_embedded_task_with_pattern, warp_factors,
};
use skim_core::protocol::{
    derive_seed, evaluate_stream, json_bytes, recalibrate, run_pattern_task, span_scaled_families,
    train_network, write_pattern_artifacts, PatternMetrics, PatternTaskConfig,
};
use skim_core::pruning::{
    cumulative_weight_fraction, prune_iterative, prune_two_pass, PruneReport,
};
use skim_core::{
    KernelFamily, LabeledRasterSet, NetworkParams, SkimNetwork, SolverKind, TrainingSet,
};

use crate::config::{PruneStrategy, RunConfig, TaskKind};

#[derive(Debug)]
pub enum Failure {
    /// Every violated field, in config order.
    Invalid(Vec<String>),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Demo,
    Train,
    Test,
    Prune,
}

enum Source {
    Embedded(Box<PatternTaskConfig>),
    Dataset {
        train: Option<LabeledRasterSet>,
        test: Option<LabeledRasterSet>,
    },
}

pub struct Plan {
    cfg: RunConfig,
    command: Command,
    source: Source,
    params: Option<NetworkParams>,
    loaded: Option<SkimNetwork>,
}

fn issue(problems: &mut Vec<String>, field: &str, e: impl Display) {
    let text = e.to_string();
    let text = text.strip_prefix("validation error: ").unwrap_or(&text);
    problems.push(format!("{field}: {text}"));
}

/// Loads and checks everything `command` needs.
pub fn plan(cfg: RunConfig, command: Command) -> Result<Plan, Vec<String>> {
    let mut problems = Vec::new();
    let tr = &cfg.training;
    if tr.solver == SolverKind::Online
        && !(tr.regularization.is_finite() && tr.regularization > 0.0)
    {
        issue(
            &mut problems,
            "training.regularization",
            format!("must be > 0, got {}", tr.regularization),
        );
    }
    if let Some(t) = tr.tolerance {
        if !(t.is_finite() && t >= 0.0) {
            issue(
                &mut problems,
                "training.tolerance",
                format!("must be >= 0, got {t}"),
            );
        }
    }
    if let Err(e) = warp_factors(tr.warp_min, tr.warp_max, tr.warp_steps) {
        issue(&mut problems, "training.warp_min/warp_max/warp_steps", e);
    }

    let needs_test = matches!(command, Command::Demo | Command::Test);
    let needs_train = matches!(command, Command::Demo | Command::Train | Command::Prune);
    // Channels, classes and kernel span of the task, when they are known.
    let mut shape: Option<(usize, usize, f64)> = None;
    let source = match cfg.task.kind {
        TaskKind::Embedded => {
            let pc = cfg.pattern_task();
            if let Err(e) = pc.task.validate() {
                issue(&mut problems, "task", e);
            }
            if needs_test {
                if let Err(e) = pc.test_task_params().validate() {
                    issue(&mut problems, "task.test_stream_len/test_embeddings", e);
                }
            }
            shape = Some((pc.task.num_channels, 1, pc.task.pattern_len as f64));
            Source::Embedded(Box::new(pc))
        }
        TaskKind::Dataset => {
            if command == Command::Demo {
                issue(
                    &mut problems,
                    "task.kind",
                    "demo runs the generated task; use train and test for datasets",
                );
            }
            let load = |problems: &mut Vec<String>, field: &str, path: &Option<PathBuf>| match path
            {
                None => {
                    issue(problems, field, "required for dataset tasks");
                    None
                }
                Some(p) => match load_raster_set(p) {
                    Ok(s) if s.is_empty() => {
                        issue(problems, field, format!("{} holds no rasters", p.display()));
                        None
                    }
                    Ok(s) => Some(s),
                    Err(e) => {
                        issue(problems, field, format!("{}: {e}", p.display()));
                        None
                    }
                },
            };
            let train = if needs_train {
                load(&mut problems, "task.train_set", &cfg.task.train_set)
            } else {
                None
            };
            let test = if needs_test {
                let (field, path) = match &cfg.task.test_set {
                    Some(_) => ("task.test_set", &cfg.task.test_set),
                    None => ("task.train_set", &cfg.task.train_set),
                };
                load(&mut problems, field, path)
            } else {
                None
            };
            if let (Some(a), Some(b)) = (&train, &test) {
                if a.num_channels != b.num_channels {
                    issue(
                        &mut problems,
                        "task.test_set",
                        format!(
                            "dimension mismatch: {} channels, training set has {}",
                            b.num_channels, a.num_channels
                        ),
                    );
                }
            }
            let reference = train.as_ref().or(test.as_ref());
            if let Some(set) = reference {
                let classes = train
                    .iter()
                    .chain(&test)
                    .map(|s| s.num_classes())
                    .max()
                    .unwrap_or(0);
                shape = Some((set.num_channels, classes, set.num_steps as f64));
            }
            Source::Dataset { train, test }
        }
    };

    let mut params = None;
    if let Some((channels, classes, span)) = shape {
        if let Some(l) = cfg.network.num_inputs {
            if l != channels {
                issue(
                    &mut problems,
                    "network.num_inputs",
                    format!("is {l} but the task has {channels} channels"),
                );
            }
        }
        let outputs = match cfg.task.kind {
            TaskKind::Embedded => {
                if let Some(n) = cfg.network.num_outputs.filter(|&n| n != 1) {
                    issue(
                        &mut problems,
                        "network.num_outputs",
                        format!("the embedded task has one output, got {n}"),
                    );
                }
                1
            }
            TaskKind::Dataset => {
                let n = cfg.network.num_outputs.unwrap_or(classes);
                if n < classes {
                    issue(
                        &mut problems,
                        "network.num_outputs",
                        format!("{n} outputs for {classes} classes"),
                    );
                }
                n
            }
        };
        let p = cfg.network_params(channels, outputs, span);
        match p.validate() {
            Ok(()) => params = Some(p),
            Err(e) => issue(&mut problems, "network", e),
        }
    }

    let wants_file =
        command == Command::Test || (command == Command::Prune && cfg.prune.pool.is_none());
    let mut loaded = None;
    if wants_file {
        let path = cfg.network_file();
        if !path.exists() {
            issue(
                &mut problems,
                "network.file",
                format!("{} does not exist (run `skim train` first)", path.display()),
            );
        } else {
            match load_network(&path) {
                Err(e) => issue(
                    &mut problems,
                    "network.file",
                    format!("{}: {e}", path.display()),
                ),
                Ok(net) => {
                    if let Some((channels, classes, _)) = shape {
                        if net.num_inputs() != channels {
                            issue(
                                &mut problems,
                                "network.file",
                                format!(
                                    "dimension mismatch: {} expects {} inputs but the task has {channels} channels",
                                    path.display(),
                                    net.num_inputs()
                                ),
                            );
                        }
                        let ok = match cfg.task.kind {
                            TaskKind::Embedded => net.num_outputs() == 1,
                            TaskKind::Dataset => net.num_outputs() >= classes,
                        };
                        if !ok {
                            issue(
                                &mut problems,
                                "network.file",
                                format!(
                                    "dimension mismatch: {} outputs for {classes} classes",
                                    net.num_outputs()
                                ),
                            );
                        }
                    }
                    if command == Command::Test && net.output_weights().is_none() {
                        issue(
                            &mut problems,
                            "network.file",
                            format!("{} is untrained", path.display()),
                        );
                    }
                    loaded = Some(net);
                }
            }
        }
    }

    if command == Command::Prune {
        let pr = &cfg.prune;
        if let Some(p) = pr.pool {
            if p < 2 {
                issue(
                    &mut problems,
                    "prune.pool",
                    format!("must be >= 2, got {p}"),
                );
            }
        }
        let m = pr.pool.or(loaded.as_ref().map(SkimNetwork::num_dendrites));
        match pr.strategy {
            PruneStrategy::TwoPass => match (pr.keep, m) {
                (None, _) => issue(&mut problems, "prune.keep", "required for two_pass"),
                (Some(k), Some(m)) if k < 1 || k >= m => issue(
                    &mut problems,
                    "prune.keep",
                    format!("must be in [1, {m}), got {k}"),
                ),
                (Some(0), None) => issue(&mut problems, "prune.keep", "must be >= 1"),
                _ => {}
            },
            PruneStrategy::Iterative => {
                if !(pr.fraction > 0.0 && pr.fraction < 1.0) {
                    issue(
                        &mut problems,
                        "prune.fraction",
                        format!("must be in (0, 1), got {}", pr.fraction),
                    );
                }
                if pr.rounds == 0 {
                    issue(&mut problems, "prune.rounds", "must be >= 1");
                }
            }
        }
    }

    if cfg.output.dir.exists() && !cfg.output.dir.is_dir() {
        issue(
            &mut problems,
            "output.dir",
            format!("{} is not a directory", cfg.output.dir.display()),
        );
    }

    if problems.is_empty() {
        Ok(Plan {
            cfg,
            command,
            source,
            params,
            loaded,
        })
    } else {
        Err(problems)
    }
}

/// Scores of a network on a labeled dataset; output `n` detects class `n`.
#[derive(Debug, Serialize)]
pub struct DatasetMetrics {
    pub num_dendrites: usize,
    pub num_synapses: usize,
    pub threshold: f64,
    pub per_class: Vec<ConfusionCounts>,
    pub per_class_wills: Vec<ErrorScore>,
    /// Counts summed over every class detector.
    pub pooled: ConfusionCounts,
    pub wills_error: ErrorScore,
}

fn put_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, &json_bytes(value)?)?;
    Ok(path)
}

impl Plan {
    pub fn execute(self) -> Result<(), Failure> {
        match self.command {
            Command::Demo => self.demo(),
            Command::Train => self.train(),
            Command::Test => self.test(),
            Command::Prune => self.prune(),
        }
    }

    fn out(&self) -> anyhow::Result<&Path> {
        let dir = self.cfg.output.dir.as_path();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn pattern_config(&self) -> &PatternTaskConfig {
        match &self.source {
            Source::Embedded(pc) => pc,
            Source::Dataset { .. } => unreachable!("planning checked the task kind"),
        }
    }

    fn training_data(&self) -> anyhow::Result<TrainingSet> {
        match &self.source {
            Source::Embedded(pc) => {
                let (raster, target, _) = gen_embedded_task(&pc.task)?;
                Ok(TrainingSet::single(raster, target)?)
            }
            Source::Dataset { train, .. } => {
                let train = train.as_ref().context("training set not loaded")?;
                let tr = &self.cfg.training;
                let augmented =
                    augment_training_set(train, tr.warp_min, tr.warp_max, tr.warp_steps)?;
                let n = self
                    .params
                    .as_ref()
                    .context("network parameters missing")?
                    .num_outputs;
                let targets = augmented.targets(n, tr.target_width, tr.target_amplitude)?;
                Ok(TrainingSet::new(augmented.rasters, targets)?)
            }
        }
    }

    fn fresh_network(&self, num_dendrites: usize) -> anyhow::Result<SkimNetwork> {
        let params = self.params.clone().context("network parameters missing")?;
        Ok(SkimNetwork::new(NetworkParams {
            num_dendrites,
            ..params
        })?)
    }

    fn demo(self) -> Result<(), Failure> {
        let pc = self.pattern_config();
        let run = run_pattern_task(pc)?;
        let out = self.out()?;
        write_pattern_artifacts(&run, out)?;
        put_json(out, "config.json", &self.cfg)?;
        let e = &run.evaluation;
        println!(
            "demo: {} dendrites, threshold {:.4}, detected {}/{} embeddings, {} false alarms, wills error {}",
            run.network.num_dendrites(),
            run.network.threshold(),
            e.counts.true_positives,
            e.counts.positives(),
            e.counts.false_positives,
            e.wills.value
        );
        Ok(())
    }

    fn train(self) -> Result<(), Failure> {
        let data = self.training_data()?;
        let mut net = self.fresh_network(self.cfg.network.num_dendrites)?;
        train_network(
            &mut net,
            &data,
            &self.cfg.solve_options(),
            self.cfg.network.threshold_rule,
        )?;
        let out = self.out()?;
        save_network(&net, &out.join("network.json"))?;
        save_weights_csv(
            net.output_weights().context("training left no weights")?,
            &out.join("weights.csv"),
        )?;
        println!(
            "train: {} dendrites, {} outputs, threshold {:.4}, wrote {}",
            net.num_dendrites(),
            net.num_outputs(),
            net.threshold(),
            out.join("network.json").display()
        );
        Ok(())
    }

    fn test(self) -> Result<(), Failure> {
        let net = self.loaded.as_ref().context("network not loaded")?;
        let w = net.output_weights().context("network is untrained")?;
        match &self.source {
            Source::Embedded(pc) => {
                let (_, _, task) = gen_embedded_task(&pc.task)?;
                let (raster, target, test_task) =
                    gen_embedded_task_with_pattern(&pc.test_task_params(), &task.pattern)?;
                let eval = evaluate_stream(net, &raster, &test_task, &pc.scoring)?;
                let metrics = PatternMetrics {
                    seed: self.cfg.seed,
                    num_dendrites: net.num_dendrites(),
                    num_synapses: net.num_synapses(),
                    threshold: net.threshold(),
                    counts: eval.counts,
                    detection_rate: eval.detection_rate,
                    wills_error: eval.wills,
                    cumulative_fraction: cumulative_weight_fraction(w)?,
                };
                let out = self.out()?;
                put_json(out, "metrics.json", &metrics)?;
                if self.cfg.output.traces {
                    export_traces(
                        &eval.trace,
                        &raster,
                        Some(&target),
                        None,
                        &out.join("traces"),
                    )?;
                }
                println!(
                    "test: detected {}/{} embeddings, {} false alarms, wills error {}",
                    eval.counts.true_positives,
                    eval.counts.positives(),
                    eval.counts.false_positives,
                    eval.wills.value
                );
            }
            Source::Dataset { test, .. } => {
                let test = test.as_ref().context("test set not loaded")?;
                let per_class = per_class_counts(net, test, self.cfg.training.target_width)?;
                let pooled = per_class
                    .iter()
                    .fold(ConfusionCounts::default(), |acc, c| acc.add(c));
                let metrics = DatasetMetrics {
                    num_dendrites: net.num_dendrites(),
                    num_synapses: net.num_synapses(),
                    threshold: net.threshold(),
                    per_class_wills: per_class.iter().map(wills_error).collect(),
                    wills_error: wills_error(&pooled),
                    per_class,
                    pooled,
                };
                let out = self.out()?;
                put_json(out, "metrics.json", &metrics)?;
                if self.cfg.output.traces {
                    let trace = net.forward(&test.rasters[0])?;
                    export_traces(&trace, &test.rasters[0], None, None, &out.join("traces"))?;
                }
                println!(
                    "test: {} presentations, pooled wills error {}",
                    test.len(),
                    metrics.wills_error.value
                );
            }
        }
        Ok(())
    }

    fn prune(self) -> Result<(), Failure> {
        let data = self.training_data()?;
        let solve = self.cfg.solve_options();
        let rule = self.cfg.network.threshold_rule;
        let pr = &self.cfg.prune;
        let base = match pr.pool {
            Some(p) => {
                let mut net = self.fresh_network(p)?;
                train_network(&mut net, &data, &solve, rule)?;
                net
            }
            None => self.loaded.clone().context("network not loaded")?,
        };
        let (mut pruned, report): (SkimNetwork, PruneReport) = match pr.strategy {
            PruneStrategy::TwoPass => {
                let keep = pr.keep.context("prune.keep missing")?;
                prune_two_pass(&base, &data, keep, &solve)?
            }
            PruneStrategy::Iterative => prune_iterative(
                &base,
                &data,
                pr.fraction,
                pr.rounds,
                derive_seed(self.cfg.seed, "prune"),
                pr.accept_only_improvements,
                &solve,
            )?,
        };
        recalibrate(&mut pruned, &data, rule)?;
        let out = self.out()?;
        save_network(&pruned, &out.join("pruned_network.json"))?;
        save_weights_csv(
            pruned.output_weights().context("pruning left no weights")?,
            &out.join("pruned_weights.csv"),
        )?;
        put_json(out, "prune_report.json", &report)?;
        println!(
            "prune: {} -> {} dendrites, training residual {:.6} -> {:.6}",
            base.num_dendrites(),
            pruned.num_dendrites(),
            report.residual_before,
            report.residual_after
        );
        Ok(())
    }
}

fn kernel_row(kind: KernelKind) -> (&'static str, &'static str) {
    match kind {
        KernelKind::Alpha => ("tau", "(t/tau) exp(-t/tau)"),
        KernelKind::DampedResonance => ("tau, omega", "exp(-t/tau) sin(omega t)"),
        KernelKind::DelayedAlpha => ("delta_t, tau", "alpha shifted right by delta_t"),
        KernelKind::DelayedGaussian => (
            "delta_t, sigma",
            "exp(-(t - delta_t)^2 / (2 sigma^2)) / (sigma sqrt(2 pi))",
        ),
        KernelKind::LeakyIntegratorNl => {
            ("tau", "a_t = exp(-1/tau) a_(t-1) / (1 + a_(t-1)^2) + v_t")
        }
        KernelKind::Custom => ("custom_table", "sampled response, one value per step"),
    }
}

fn describe_family(f: &KernelFamily) -> String {
    let mut parts = Vec::new();
    for (name, range) in [
        ("tau", f.tau),
        ("delta_t", f.delta_t),
        ("omega", f.omega),
        ("sigma", f.sigma),
    ] {
        if range.lo != 0.0 || range.hi != 0.0 {
            parts.push(format!("{name} ~ U({}, {})", range.lo, range.hi));
        }
    }
    parts.push(format!("logistic_gain {}", f.logistic_gain));
    format!("{}: {}", f.kind.name(), parts.join(", "))
}

/// The kernel catalog, the configured family and the span-scaled families
/// for the configured pattern length.
pub fn kernels(cfg: &RunConfig) -> String {
    let mut s = String::from("kernel catalog\n");
    for kind in KernelKind::ALL {
        let (params, response) = kernel_row(kind);
        s.push_str(&format!(
            "  {:<20} {:<16} {}\n",
            kind.name(),
            params,
            response
        ));
    }
    let span = cfg.task.pattern_len as f64;
    let configured = cfg
        .network
        .kernel_family
        .clone()
        .unwrap_or_else(|| KernelFamily::alpha_for_span(span));
    s.push_str(&format!(
        "configured family\n  {}\n",
        describe_family(&configured)
    ));
    s.push_str(&format!("families scaled to a {span}-step span\n"));
    for (_, family) in span_scaled_families(span) {
        s.push_str(&format!("  {}\n", describe_family(&family)));
    }
    s
}
