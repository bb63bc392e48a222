//! Task generators and dataset shaping: a fixed spatio-temporal pattern
//! hidden in Poisson noise, target-window construction, time-warp
//! augmentation, and a synthetic stand-in for sparse spoken-digit encodings.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{dimension, domain, validation, Result};
use crate::network::SpikeRaster;
use crate::rng::{substream, SkimRng};
use crate::solver::TargetSignal;

/// Generator parameters for the embedded-pattern detection task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedTaskParams {
    pub num_channels: usize,
    /// Pattern offsets lie in `[0, pattern_len)`.
    pub pattern_len: usize,
    pub pattern_spike_count: usize,
    pub stream_len: usize,
    pub num_embeddings: usize,
    /// Expected noise spikes per pattern spike.
    pub noise_ratio: f64,
    pub target_delay: usize,
    pub target_width: usize,
    pub target_amplitude: f64,
    pub seed: u64,
}

impl Default for EmbeddedTaskParams {
    fn default() -> Self {
        EmbeddedTaskParams {
            num_channels: 4,
            pattern_len: 200,
            pattern_spike_count: 4,
            stream_len: 40_000,
            num_embeddings: 100,
            noise_ratio: 1.0,
            target_delay: 20,
            target_width: 10,
            target_amplitude: 1.0,
            seed: 0,
        }
    }
}

impl EmbeddedTaskParams {
    /// Steps reserved per embedding: pattern, delay and target window.
    pub fn block_len(&self) -> usize {
        self.pattern_len + self.target_delay + self.target_width
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_channels == 0 {
            problems.push("num_channels must be >= 1".to_string());
        }
        if self.pattern_len == 0 {
            problems.push("pattern_len must be >= 1".to_string());
        }
        if self.pattern_spike_count == 0 || self.pattern_spike_count > self.num_channels {
            problems.push(format!(
                "pattern_spike_count must lie in 1..={} (one spike per channel), got {}",
                self.num_channels, self.pattern_spike_count
            ));
        }
        if self.target_width == 0 {
            problems.push("target_width must be >= 1".to_string());
        }
        if !(self.noise_ratio.is_finite() && self.noise_ratio >= 0.0) {
            problems.push(format!(
                "noise_ratio must be >= 0, got {}",
                self.noise_ratio
            ));
        }
        if !(self.target_amplitude.is_finite() && self.target_amplitude > 0.0) {
            problems.push(format!(
                "target_amplitude must be > 0, got {}",
                self.target_amplitude
            ));
        }
        if self.num_embeddings * self.block_len() > self.stream_len {
            problems.push(format!(
                "{} embeddings of {} steps do not fit in a stream of {} steps",
                self.num_embeddings,
                self.block_len(),
                self.stream_len
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(validation(problems.join("; ")))
        }
    }
}

/// Ground truth of a generated embedded-pattern stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPatternTask {
    pub num_channels: usize,
    /// `(channel, offset)` placements.
    pub pattern: Vec<(usize, usize)>,
    pub pattern_len: usize,
    pub stream_len: usize,
    pub pattern_times: Vec<usize>,
    pub noise_events: Vec<(usize, usize)>,
    pub target_delay: usize,
    pub target_width: usize,
    pub target_amplitude: f64,
}

impl EmbeddedPatternTask {
    pub fn last_offset(&self) -> usize {
        self.pattern.iter().map(|&(_, o)| o).max().unwrap_or(0)
    }

    /// Start of each embedding's target window.
    pub fn target_starts(&self) -> Vec<usize> {
        let lag = self.last_offset() + self.target_delay;
        self.pattern_times.iter().map(|&s| s + lag).collect()
    }

    /// Half-open target windows `[start, start + width)`.
    pub fn target_windows(&self) -> Vec<(usize, usize)> {
        self.target_starts()
            .into_iter()
            .map(|s| (s, s + self.target_width))
            .collect()
    }
}

/// Draws a random pattern for the task's seed.
fn draw_pattern(p: &EmbeddedTaskParams, rng: &mut SkimRng) -> Vec<(usize, usize)> {
    let channels = sample(rng, p.num_channels, p.pattern_spike_count).into_vec();
    let mut pattern: Vec<(usize, usize)> = channels
        .into_iter()
        .map(|c| (c, rng.random_range(0..p.pattern_len)))
        .collect();
    pattern.sort_unstable_by_key(|&(c, o)| (o, c));
    pattern
}

/// Embedding start times: a Poisson process conditioned on the count, with a
/// refractory block after each embedding so that presentations never overlap.
fn draw_embedding_times(p: &EmbeddedTaskParams, rng: &mut SkimRng) -> Vec<usize> {
    let n = p.num_embeddings;
    if n == 0 {
        return Vec::new();
    }
    let slack = (p.stream_len - n * p.block_len()) as f64;
    let gaps: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = gaps.iter().sum();
    let mut acc = 0.0;
    (0..n)
        .map(|i| {
            acc += gaps[i];
            let free = ((slack * acc / total).floor() as usize).min(slack as usize);
            i * p.block_len() + free
        })
        .collect()
}

/// Generates the pattern-in-noise stream, its target signal and ground truth.
///
/// Sub-streams of `seed`: `pattern` fixes the pattern, `embeddings` its
/// occurrence times and `noise` the background spikes, so a test stream with
/// the same pattern but fresh occurrences comes from [`gen_embedded_task_with_pattern`].
pub fn gen_embedded_task(
    params: &EmbeddedTaskParams,
) -> Result<(SpikeRaster, TargetSignal, EmbeddedPatternTask)> {
    params.validate()?;
    let pattern = draw_pattern(params, &mut substream(params.seed, "pattern"));
    gen_embedded_task_with_pattern(params, &pattern)
}

/// As [`gen_embedded_task`] but with an explicit pattern.
pub fn gen_embedded_task_with_pattern(
    params: &EmbeddedTaskParams,
    pattern: &[(usize, usize)],
) -> Result<(SpikeRaster, TargetSignal, EmbeddedPatternTask)> {
    params.validate()?;
    if pattern.is_empty() {
        return Err(validation("pattern must contain at least one spike"));
    }
    if let Some(&(c, o)) = pattern
        .iter()
        .find(|&&(c, o)| c >= params.num_channels || o >= params.pattern_len)
    {
        return Err(validation(format!(
            "pattern spike ({c}, {o}) outside the pattern geometry"
        )));
    }
    let times = draw_embedding_times(params, &mut substream(params.seed, "embeddings"));

    let mut occupied = vec![false; params.num_channels * params.stream_len];
    let mut events = Vec::with_capacity(times.len() * pattern.len());
    for &s in &times {
        for &(c, o) in pattern {
            let idx = c * params.stream_len + s + o;
            if !occupied[idx] {
                occupied[idx] = true;
                events.push((c, s + o));
            }
        }
    }

    let mut noise_rng = substream(params.seed, "noise");
    let expected = params.noise_ratio * (times.len() * pattern.len()) as f64;
    let free = occupied.len() - events.len();
    let count = if expected > 0.0 {
        let draw: f64 = Poisson::new(expected)
            .map_err(|e| domain(e.to_string()))?
            .sample(&mut noise_rng);
        (draw as usize).min(free)
    } else {
        0
    };
    let mut noise_events = Vec::with_capacity(count);
    while noise_events.len() < count {
        let c = noise_rng.random_range(0..params.num_channels);
        let t = noise_rng.random_range(0..params.stream_len);
        let idx = c * params.stream_len + t;
        if !occupied[idx] {
            occupied[idx] = true;
            noise_events.push((c, t));
        }
    }
    noise_events.sort_unstable_by_key(|&(c, t)| (t, c));
    events.extend_from_slice(&noise_events);

    let raster = SpikeRaster::new(params.num_channels, params.stream_len, events)?;
    let task = EmbeddedPatternTask {
        num_channels: params.num_channels,
        pattern: pattern.to_vec(),
        pattern_len: params.pattern_len,
        stream_len: params.stream_len,
        pattern_times: times,
        noise_events,
        target_delay: params.target_delay,
        target_width: params.target_width,
        target_amplitude: params.target_amplitude,
    };
    let starts = task.target_starts();
    let classes = vec![0; starts.len()];
    let target = make_target_signal(
        &starts,
        params.target_width,
        params.target_amplitude,
        params.stream_len,
        1,
        &classes,
    )?;
    Ok((raster, target, task))
}

/// Target signal with `amplitude` over `[ref, ref + width)` on the row of
/// each reference's class, zero elsewhere. Overlapping windows merge.
pub fn make_target_signal(
    reference_times: &[usize],
    width: usize,
    amplitude: f64,
    num_steps: usize,
    num_outputs: usize,
    class_per_time: &[usize],
) -> Result<TargetSignal> {
    if reference_times.len() != class_per_time.len() {
        return Err(dimension("one class is required per reference time"));
    }
    if !amplitude.is_finite() {
        return Err(domain("target amplitude must be finite"));
    }
    let mut y = DMatrix::zeros(num_outputs, num_steps);
    for (&r, &c) in reference_times.iter().zip(class_per_time) {
        if c >= num_outputs {
            return Err(validation(format!(
                "class {c} has no output row (N = {num_outputs})"
            )));
        }
        if r + width > num_steps {
            return Err(validation(format!(
                "target window [{r}, {}) exceeds {num_steps} steps",
                r + width
            )));
        }
        for t in r..r + width {
            y[(c, t)] = amplitude;
        }
    }
    Ok(TargetSignal(y))
}

/// Rescales event times by `factor`: `t -> round(t * factor)` (half away from
/// zero), length `ceil(K * factor)`; events colliding on a channel merge.
pub fn time_warp(raster: &SpikeRaster, factor: f64) -> Result<SpikeRaster> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(domain(format!("warp factor must be > 0, got {factor}")));
    }
    let k = (raster.num_steps() as f64 * factor).ceil() as usize;
    let events = raster
        .events()
        .iter()
        .map(|&(c, t)| (c, warp_time(t, factor).min(k.saturating_sub(1))))
        .collect();
    SpikeRaster::merged(raster.num_channels(), k, events)
}

fn warp_time(t: usize, factor: f64) -> usize {
    (t as f64 * factor).round() as usize
}

/// Presentations with class labels and the timestep each target anchors to.
/// All rasters share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRasterSet {
    pub num_channels: usize,
    pub num_steps: usize,
    pub rasters: Vec<SpikeRaster>,
    pub labels: Vec<usize>,
    pub reference_times: Vec<usize>,
}

impl LabeledRasterSet {
    pub fn new(
        num_channels: usize,
        num_steps: usize,
        rasters: Vec<SpikeRaster>,
        labels: Vec<usize>,
        reference_times: Vec<usize>,
    ) -> Result<Self> {
        if rasters.len() != labels.len() || rasters.len() != reference_times.len() {
            return Err(dimension(
                "rasters, labels and reference times must have equal length",
            ));
        }
        for (i, (r, &t)) in rasters.iter().zip(&reference_times).enumerate() {
            if r.num_channels() != num_channels {
                return Err(dimension(format!(
                    "raster {i} has {} channels, set has {num_channels}",
                    r.num_channels()
                )));
            }
            if r.num_steps() != num_steps {
                return Err(dimension(format!(
                    "raster {i} has {} steps, set has {num_steps}",
                    r.num_steps()
                )));
            }
            if t >= num_steps {
                return Err(validation(format!(
                    "raster {i} reference time {t} outside {num_steps} steps"
                )));
            }
        }
        Ok(LabeledRasterSet {
            num_channels,
            num_steps,
            rasters,
            labels,
            reference_times,
        })
    }

    pub fn len(&self) -> usize {
        self.rasters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rasters.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&c| c + 1)
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<LabeledRasterSet> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(validation(format!(
                "index {i} outside set of {}",
                self.len()
            )));
        }
        Ok(LabeledRasterSet {
            num_channels: self.num_channels,
            num_steps: self.num_steps,
            rasters: indices.iter().map(|&i| self.rasters[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            reference_times: indices.iter().map(|&i| self.reference_times[i]).collect(),
        })
    }

    /// One target signal per raster: `amplitude` on the label's row over
    /// `[ref, ref + width)`, clipped to the raster.
    pub fn targets(
        &self,
        num_outputs: usize,
        width: usize,
        amplitude: f64,
    ) -> Result<Vec<TargetSignal>> {
        self.rasters
            .iter()
            .zip(self.labels.iter().zip(&self.reference_times))
            .map(|(r, (&c, &t))| {
                let w = width.min(r.num_steps() - t);
                make_target_signal(&[t], w, amplitude, r.num_steps(), num_outputs, &[c])
            })
            .collect()
    }
}

/// Evenly spaced warp factors over `[warp_min, warp_max]`; a single step
/// uses the midpoint.
pub fn warp_factors(warp_min: f64, warp_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(validation("warp steps must be >= 1"));
    }
    if !(warp_min > 0.0 && warp_min <= warp_max && warp_max.is_finite()) {
        return Err(validation(format!(
            "warp range must satisfy 0 < min <= max, got ({warp_min}, {warp_max})"
        )));
    }
    if steps == 1 {
        return Ok(vec![0.5 * (warp_min + warp_max)]);
    }
    let step = (warp_max - warp_min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            if i == steps - 1 {
                warp_max
            } else {
                warp_min + step * i as f64
            }
        })
        .collect())
}

/// Replicates every exemplar at each warp factor (exemplar-major order).
/// Rasters are padded to the longest warped length so the set stays uniform.
pub fn augment_training_set(
    exemplars: &LabeledRasterSet,
    warp_min: f64,
    warp_max: f64,
    steps: usize,
) -> Result<LabeledRasterSet> {
    let factors = warp_factors(warp_min, warp_max, steps)?;
    let k = factors
        .iter()
        .map(|&f| (exemplars.num_steps as f64 * f).ceil() as usize)
        .max()
        .unwrap_or(exemplars.num_steps);
    let mut rasters = Vec::with_capacity(exemplars.len() * factors.len());
    let mut labels = Vec::with_capacity(rasters.capacity());
    let mut refs = Vec::with_capacity(rasters.capacity());
    for ((r, &label), &t) in exemplars
        .rasters
        .iter()
        .zip(&exemplars.labels)
        .zip(&exemplars.reference_times)
    {
        for &f in &factors {
            let warped = time_warp(r, f)?;
            let padded = SpikeRaster::new(warped.num_channels(), k, warped.events().to_vec())?;
            rasters.push(padded);
            labels.push(label);
            refs.push(warp_time(t, f).min(k - 1));
        }
    }
    LabeledRasterSet::new(exemplars.num_channels, k, rasters, labels, refs)
}

/// Parameters of the synthetic sparse "spoken digit" corpus: each class has a
/// template of at most one spike per channel; utterances are warped, jittered
/// and thinned copies of their class template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDigitParams {
    pub num_channels: usize,
    pub num_classes: usize,
    pub num_steps: usize,
    pub per_class: usize,
    /// Probability that a channel carries a spike in a class template. At 1
    /// every channel fires and classes differ only in timing.
    pub active_prob: f64,
    /// Template spike times are uniform in this half-open range.
    pub onset_range: (usize, usize),
    /// Each utterance is time-warped by a factor uniform in this range.
    pub warp_range: (f64, f64),
    /// Standard deviation of per-spike timing jitter, in steps.
    pub jitter: f64,
    /// Probability that an individual template spike is missing.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SyntheticDigitParams {
    fn default() -> Self {
        SyntheticDigitParams {
            num_channels: 40,
            num_classes: 10,
            num_steps: 1000,
            per_class: 50,
            active_prob: 1.0,
            onset_range: (50, 550),
            warp_range: (0.8, 1.2),
            jitter: 10.0,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticDigitParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_channels == 0 || self.num_classes == 0 || self.per_class == 0 {
            problems.push("num_channels, num_classes and per_class must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.active_prob) || !(0.0..1.0).contains(&self.dropout) {
            problems.push("active_prob must lie in [0, 1] and dropout in [0, 1)".to_string());
        }
        let (a, b) = self.onset_range;
        if a >= b {
            problems.push("onset_range must be non-empty".to_string());
        }
        let (lo, hi) = self.warp_range;
        if !(lo > 0.0 && lo <= hi) {
            problems.push("warp_range must satisfy 0 < lo <= hi".to_string());
        }
        if (b as f64 * hi + 4.0 * self.jitter) as usize >= self.num_steps {
            problems.push("warped templates may run past num_steps".to_string());
        }
        if self.jitter.is_nan() || self.jitter < 0.0 {
            problems.push("jitter must be >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(validation(problems.join("; ")))
        }
    }
}

/// Generates a class-balanced synthetic corpus ordered class-major. The
/// reference time of each utterance is its last spike.
pub fn gen_synthetic_digits(p: &SyntheticDigitParams) -> Result<LabeledRasterSet> {
    p.validate()?;
    let mut template_rng = substream(p.seed, "templates");
    let templates: Vec<Vec<(usize, f64)>> = (0..p.num_classes)
        .map(|_| {
            let mut spikes = Vec::new();
            while spikes.is_empty() {
                for c in 0..p.num_channels {
                    if template_rng.random_bool(p.active_prob) {
                        let t = template_rng
                            .random_range(p.onset_range.0 as f64..p.onset_range.1 as f64);
                        spikes.push((c, t));
                    }
                }
            }
            spikes
        })
        .collect();
    let jitter =
        Normal::new(0.0, p.jitter.max(f64::MIN_POSITIVE)).map_err(|e| domain(e.to_string()))?;
    let mut rng = substream(p.seed, "utterances");
    let (mut rasters, mut labels, mut refs) = (Vec::new(), Vec::new(), Vec::new());
    for (class, template) in templates.iter().enumerate() {
        for _ in 0..p.per_class {
            let warp = if p.warp_range.0 == p.warp_range.1 {
                p.warp_range.0
            } else {
                rng.random_range(p.warp_range.0..p.warp_range.1)
            };
            let mut events = Vec::new();
            for &(c, t) in template {
                let keep = !rng.random_bool(p.dropout);
                let noise = if p.jitter > 0.0 {
                    jitter.sample(&mut rng)
                } else {
                    0.0
                };
                if keep {
                    let time = (t * warp + noise)
                        .round()
                        .clamp(0.0, (p.num_steps - 1) as f64);
                    events.push((c, time as usize));
                }
            }
            if events.is_empty() {
                let &(c, t) = &template[0];
                events.push((c, (t * warp).round() as usize));
            }
            let raster = SpikeRaster::new(p.num_channels, p.num_steps, events)?;
            refs.push(raster.last_spike_time().unwrap_or(0));
            rasters.push(raster);
            labels.push(class);
        }
    }
    LabeledRasterSet::new(p.num_channels, p.num_steps, rasters, labels, refs)
}

/// Picks one random presentation per class (in class order) as the
/// single-exemplar training set.
pub fn pick_exemplars<R: Rng + ?Sized>(
    set: &LabeledRasterSet,
    rng: &mut R,
) -> Result<LabeledRasterSet> {
    let mut picks = Vec::new();
    for class in 0..set.num_classes() {
        let members: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] == class).collect();
        if members.is_empty() {
            return Err(validation(format!("class {class} has no presentations")));
        }
        picks.push(members[rng.random_range(0..members.len())]);
    }
    set.select(&picks)
}
