//! Scoring of output spike trains and trace export.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result};
use crate::io::{csv_string, fmt_float, write_atomic};
use crate::network::{ForwardTrace, SkimNetwork, SpikeRaster};
use crate::patterns::LabeledRasterSet;
use crate::solver::TargetSignal;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl ConfusionCounts {
    pub fn positives(&self) -> usize {
        self.true_positives + self.false_negatives
    }

    pub fn negatives(&self) -> usize {
        self.false_positives + self.true_negatives
    }

    pub fn add(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            true_positives: self.true_positives + other.true_positives,
            false_positives: self.false_positives + other.false_positives,
            false_negatives: self.false_negatives + other.false_negatives,
            true_negatives: self.true_negatives + other.true_negatives,
        }
    }

    /// `TP / (TP + FN)`; `None` without positives.
    pub fn detection_rate(&self) -> Option<f64> {
        (self.positives() > 0).then(|| self.true_positives as f64 / self.positives() as f64)
    }
}

/// An error value plus whether a zero denominator was hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorScore {
    #[serde(with = "nonfinite")]
    pub value: f64,
    pub degenerate: bool,
}

/// JSON has no infinities or NaN; those are written as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}

// num / den, with 0/0 = 0 and x/0 = +inf, both flagged.
fn ratio(num: usize, den: usize) -> (f64, bool) {
    match (num, den) {
        (_, d) if d > 0 => (num as f64 / d as f64, false),
        (0, _) => (0.0, true),
        _ => (f64::INFINITY, true),
    }
}

/// `FN/TP + FP/TN`, literally as published.
pub fn wills_error(c: &ConfusionCounts) -> ErrorScore {
    let (a, da) = ratio(c.false_negatives, c.true_positives);
    let (b, db) = ratio(c.false_positives, c.true_negatives);
    ErrorScore {
        value: a + b,
        degenerate: da || db,
    }
}

/// Conventional miss rate plus false-alarm rate, `FN/P + FP/N`. Not the
/// published measure; kept for comparison.
pub fn rate_error(c: &ConfusionCounts) -> ErrorScore {
    let (a, da) = ratio(c.false_negatives, c.positives());
    let (b, db) = ratio(c.false_positives, c.negatives());
    ErrorScore {
        value: a + b,
        degenerate: da || db,
    }
}

/// Scores one output against a labeled set. A target-class presentation is a
/// hit if the output spikes in `[ref, ref + window_width)`; any spike in a
/// non-target presentation is a false positive.
pub fn match_presentations(
    outputs: &[Vec<usize>],
    set: &LabeledRasterSet,
    target_class: usize,
    window_width: usize,
) -> Result<ConfusionCounts> {
    if outputs.len() != set.len() {
        return Err(dimension(format!(
            "{} output trains for {} presentations",
            outputs.len(),
            set.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((spikes, &label), &reference) in outputs.iter().zip(&set.labels).zip(&set.reference_times)
    {
        if label == target_class {
            let end = reference + window_width;
            if spikes.iter().any(|&t| t >= reference && t < end) {
                c.true_positives += 1;
            } else {
                c.false_negatives += 1;
            }
        } else if spikes.is_empty() {
            c.true_negatives += 1;
        } else {
            c.false_positives += 1;
        }
    }
    Ok(c)
}

/// Output spike times per presentation and output: `result[raster][output]`.
pub fn output_spike_trains(
    net: &SkimNetwork,
    rasters: &[SpikeRaster],
) -> Result<Vec<Vec<Vec<usize>>>> {
    rasters
        .iter()
        .map(|r| {
            let trace = net.forward(r)?;
            (0..net.num_outputs())
                .map(|n| trace.spike_times(n))
                .collect()
        })
        .collect()
}

/// Scores every output `n` as the detector of class `n` and returns the
/// per-class counts.
pub fn per_class_counts(
    net: &SkimNetwork,
    set: &LabeledRasterSet,
    window_width: usize,
) -> Result<Vec<ConfusionCounts>> {
    let trains = output_spike_trains(net, &set.rasters)?;
    (0..net.num_outputs())
        .map(|n| {
            let outputs: Vec<Vec<usize>> =
                trains.iter().map(|per_out| per_out[n].clone()).collect();
            match_presentations(&outputs, set, n, window_width)
        })
        .collect()
}

/// How a continuous stream with embedded targets is cut into presentations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamScoring {
    /// Width of the background slots that count as non-target presentations.
    pub slot_width: usize,
    /// Steps on either side of each target window excluded from background.
    pub guard: usize,
    /// Steps by which a target window is widened on either side for hits.
    pub slack: usize,
}

impl StreamScoring {
    pub fn new(slot_width: usize) -> Self {
        StreamScoring {
            slot_width,
            guard: slot_width,
            slack: 0,
        }
    }
}

/// Scores a single output over a stream. Each target window is one target
/// presentation (hit if any spike falls in it, widened by `slack`). The rest
/// of the stream, minus a guard band around every window, is tiled into
/// `slot_width` slots; each slot is one non-target presentation, false
/// positive if it holds a spike.
pub fn score_stream(
    spike_times: &[usize],
    windows: &[(usize, usize)],
    stream_len: usize,
    scoring: &StreamScoring,
) -> Result<ConfusionCounts> {
    if scoring.slot_width == 0 {
        return Err(validation("slot_width must be >= 1"));
    }
    let mut spiking = vec![false; stream_len];
    for &t in spike_times {
        if t >= stream_len {
            return Err(validation(format!(
                "spike at {t} outside stream of {stream_len} steps"
            )));
        }
        spiking[t] = true;
    }
    let mut excluded = vec![false; stream_len];
    let mut c = ConfusionCounts::default();
    for &(start, end) in windows {
        if start >= end || end > stream_len {
            return Err(validation(format!(
                "target window [{start}, {end}) outside stream of {stream_len} steps"
            )));
        }
        let lo = start.saturating_sub(scoring.slack);
        let hi = (end + scoring.slack).min(stream_len);
        if spiking[lo..hi].iter().any(|&s| s) {
            c.true_positives += 1;
        } else {
            c.false_negatives += 1;
        }
        let glo = start.saturating_sub(scoring.guard.max(scoring.slack));
        let ghi = (end + scoring.guard.max(scoring.slack)).min(stream_len);
        excluded[glo..ghi].iter_mut().for_each(|e| *e = true);
    }
    let mut t = 0;
    while t < stream_len {
        if excluded[t] {
            t += 1;
            continue;
        }
        let end = t + scoring.slot_width;
        if end > stream_len || excluded[t..end].iter().any(|&e| e) {
            // Partial slot: skip to the next excluded region or the end.
            t = (t..stream_len.min(end))
                .find(|&u| excluded[u])
                .unwrap_or(stream_len.min(end));
            continue;
        }
        if spiking[t..end].iter().any(|&s| s) {
            c.false_positives += 1;
        } else {
            c.true_negatives += 1;
        }
        t = end;
    }
    Ok(c)
}

/// Writes the five CSV panels of a forward pass into `dir`: input events,
/// dendritic potentials (optionally a subset), soma potentials, output spikes
/// and target. Returns the paths written.
pub fn export_traces(
    trace: &ForwardTrace,
    input: &SpikeRaster,
    target: Option<&TargetSignal>,
    dendrites: Option<&[usize]>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let a = trace.activations.values();
    let k = a.ncols();
    if input.num_steps() != k {
        return Err(dimension(format!(
            "input has {} steps, trace has {k}",
            input.num_steps()
        )));
    }
    if let Some(y) = target {
        if y.num_steps() != k {
            return Err(dimension(format!(
                "target has {} steps, trace has {k}",
                y.num_steps()
            )));
        }
    }
    let rows: Vec<usize> = match dendrites {
        Some(sel) => {
            if let Some(&j) = sel.iter().find(|&&j| j >= a.nrows()) {
                return Err(validation(format!("dendrite index {j} out of range")));
            }
            sel.to_vec()
        }
        None => (0..a.nrows()).collect(),
    };
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
        Ok(())
    };

    let header = |prefix: &str, ids: &[usize]| -> Vec<String> {
        std::iter::once("time".to_string())
            .chain(ids.iter().map(|j| format!("{prefix}{j}")))
            .collect()
    };
    let time_rows = |m: &nalgebra::DMatrix<f64>, ids: &[usize]| -> Vec<Vec<String>> {
        (0..m.ncols())
            .map(|t| {
                std::iter::once(t.to_string())
                    .chain(ids.iter().map(|&j| fmt_float(m[(j, t)])))
                    .collect()
            })
            .collect()
    };

    emit(
        "input_events.csv",
        csv_string(
            &["channel".into(), "time".into()],
            input
                .events()
                .iter()
                .map(|&(c, t)| vec![c.to_string(), t.to_string()]),
        ),
    )?;
    emit(
        "dendrites.csv",
        csv_string(&header("a", &rows), time_rows(a, &rows)),
    )?;

    let (soma_ids, soma_rows) = match &trace.soma {
        Some(y) => {
            let ids: Vec<usize> = (0..y.nrows()).collect();
            let r = time_rows(y, &ids);
            (ids, r)
        }
        None => (Vec::new(), Vec::new()),
    };
    emit("soma.csv", csv_string(&header("y", &soma_ids), soma_rows))?;

    let mut spikes = Vec::new();
    if let Some(z) = &trace.output_spikes {
        for t in 0..z.ncols() {
            for n in 0..z.nrows() {
                if z[(n, t)] {
                    spikes.push(vec![n.to_string(), t.to_string()]);
                }
            }
        }
    }
    emit(
        "output_spikes.csv",
        csv_string(&["output".into(), "time".into()], spikes),
    )?;

    let (target_ids, target_rows) = match target {
        Some(y) => {
            let ids: Vec<usize> = (0..y.num_outputs()).collect();
            let r = time_rows(y.values(), &ids);
            (ids, r)
        }
        None => (Vec::new(), Vec::new()),
    };
    emit(
        "target.csv",
        csv_string(&header("target", &target_ids), target_rows),
    )?;
    Ok(written)
}
