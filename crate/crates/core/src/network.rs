//! SKIM network structure and deterministic forward simulation.
//!
//! Each dendrite `j` sums the spikes arriving on its synapses with fixed
//! random weights, compresses the sum with a logistic, and launches its
//! kernel scaled by that value. Launched responses superpose on the
//! dendritic potential `a[j, t]`. The soma is a linear readout of the
//! dendritic potentials thresholded at `theta`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dimension, validation, Result, SkimError};
use crate::kernel::{
    logistic_unchecked, response_support, response_table, step_leaky_unchecked, KernelFamily,
    KernelSpec, DEFAULT_SUPPORT_EPSILON,
};
use crate::rng::substream;

/// Launch amplitudes below this magnitude are treated as exactly zero.
const LAUNCH_FLOOR: f64 = 1e-15;

/// Binary spike events over `num_channels` inputs and `num_steps` timesteps.
///
/// Events are kept sorted by `(timestep, channel)` with no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeRaster {
    num_channels: usize,
    num_steps: usize,
    // (channel, timestep)
    events: Vec<(usize, usize)>,
}

impl SpikeRaster {
    /// Builds a raster, rejecting out-of-range and duplicated events.
    pub fn new(num_channels: usize, num_steps: usize, events: Vec<(usize, usize)>) -> Result<Self> {
        let mut raster = Self::build(num_channels, num_steps, events)?;
        let before = raster.events.len();
        raster.events.dedup();
        if raster.events.len() != before {
            return Err(validation(
                "raster has more than one event per (channel, timestep)",
            ));
        }
        Ok(raster)
    }

    /// Like [`SpikeRaster::new`] but collapses duplicated events into one.
    pub fn merged(
        num_channels: usize,
        num_steps: usize,
        events: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let mut raster = Self::build(num_channels, num_steps, events)?;
        raster.events.dedup();
        Ok(raster)
    }

    pub fn empty(num_channels: usize, num_steps: usize) -> Self {
        SpikeRaster {
            num_channels,
            num_steps,
            events: Vec::new(),
        }
    }

    fn build(
        num_channels: usize,
        num_steps: usize,
        mut events: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if num_channels == 0 {
            return Err(validation("raster needs at least one channel"));
        }
        if let Some(&(c, t)) = events
            .iter()
            .find(|&&(c, t)| c >= num_channels || t >= num_steps)
        {
            return Err(validation(format!(
                "event ({c}, {t}) outside raster of {num_channels} channels x {num_steps} steps"
            )));
        }
        events.sort_unstable_by_key(|&(c, t)| (t, c));
        Ok(SpikeRaster {
            num_channels,
            num_steps,
            events,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    /// `(channel, timestep)` pairs in time order.
    pub fn events(&self) -> &[(usize, usize)] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Timestep of the latest event, if any.
    pub fn last_spike_time(&self) -> Option<usize> {
        self.events.last().map(|&(_, t)| t)
    }

    /// Concatenates rasters end to end in time.
    pub fn concat(rasters: &[SpikeRaster]) -> Result<SpikeRaster> {
        let first = rasters
            .first()
            .ok_or_else(|| validation("nothing to concatenate"))?;
        let mut offset = 0;
        let mut events = Vec::new();
        for r in rasters {
            if r.num_channels != first.num_channels {
                return Err(dimension("rasters differ in channel count"));
            }
            events.extend(r.events.iter().map(|&(c, t)| (c, t + offset)));
            offset += r.num_steps;
        }
        Ok(SpikeRaster {
            num_channels: first.num_channels,
            num_steps: offset,
            events,
        })
    }
}

/// Construction parameters for [`SkimNetwork::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub num_inputs: usize,
    pub num_dendrites: usize,
    pub num_outputs: usize,
    pub kernel_family: KernelFamily,
    /// Input weights are drawn uniformly from `[lo, hi)`.
    pub weight_range: (f64, f64),
    pub threshold: f64,
    /// Soma value trained for a spike; the threshold must lie strictly inside `(0, target_amplitude)`.
    pub target_amplitude: f64,
    pub seed: u64,
    pub soma_reset: bool,
    /// Apply the kernel to the summed input before the logistic.
    pub swapped_order: bool,
    pub support_epsilon: f64,
}

impl NetworkParams {
    pub fn new(
        num_inputs: usize,
        num_dendrites: usize,
        num_outputs: usize,
        kernel_family: KernelFamily,
    ) -> Self {
        NetworkParams {
            num_inputs,
            num_dendrites,
            num_outputs,
            kernel_family,
            weight_range: (-0.5, 0.5),
            threshold: 0.5,
            target_amplitude: 1.0,
            seed: 0,
            soma_reset: false,
            swapped_order: false,
            support_epsilon: DEFAULT_SUPPORT_EPSILON,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_inputs == 0 {
            problems.push("num_inputs must be >= 1".to_string());
        }
        if self.num_dendrites == 0 {
            problems.push("num_dendrites must be >= 1".to_string());
        }
        if self.num_outputs == 0 {
            problems.push("num_outputs must be >= 1".to_string());
        }
        let (lo, hi) = self.weight_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            problems.push(format!(
                "weight_range must satisfy lo < hi, got ({lo}, {hi})"
            ));
        }
        if !(self.target_amplitude.is_finite() && self.target_amplitude > 0.0) {
            problems.push(format!(
                "target_amplitude must be > 0, got {}",
                self.target_amplitude
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < self.target_amplitude) {
            problems.push(format!(
                "threshold must lie in (0, {}), got {}",
                self.target_amplitude, self.threshold
            ));
        }
        if !(self.support_epsilon.is_finite() && self.support_epsilon > 0.0) {
            problems.push(format!(
                "support_epsilon must be > 0, got {}",
                self.support_epsilon
            ));
        }
        if let Err(e) = self.kernel_family.validate() {
            problems.push(e.to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SkimError::Validation(problems.join("; ")))
        }
    }
}

/// Dendritic potentials, one row per dendrite and one column per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix(pub DMatrix<f64>);

impl ActivationMatrix {
    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn num_dendrites(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_steps(&self) -> usize {
        self.0.ncols()
    }

    /// Keeps only the listed dendrite rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> ActivationMatrix {
        ActivationMatrix(self.0.select_rows(rows))
    }
}

/// Everything produced by one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub activations: ActivationMatrix,
    /// `N x K` soma potentials; absent when the network has no output weights.
    pub soma: Option<DMatrix<f64>>,
    /// `N x K` output spikes; absent when the network has no output weights.
    pub output_spikes: Option<DMatrix<bool>>,
}

impl ForwardTrace {
    pub fn soma(&self) -> Result<&DMatrix<f64>> {
        self.soma.as_ref().ok_or_else(|| {
            SkimError::State("network has no output weights; soma not computed".into())
        })
    }

    pub fn spikes(&self) -> Result<&DMatrix<bool>> {
        self.output_spikes.as_ref().ok_or_else(|| {
            SkimError::State("network has no output weights; spikes not computed".into())
        })
    }

    /// Spike times of output `n`.
    pub fn spike_times(&self, n: usize) -> Result<Vec<usize>> {
        let z = self.spikes()?;
        Ok((0..z.ncols()).filter(|&t| z[(n, t)]).collect())
    }
}

/// Knobs for kernel truncation during simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub epsilon: f64,
    /// Multiplies every kernel's support horizon.
    pub horizon_scale: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            epsilon: DEFAULT_SUPPORT_EPSILON,
            horizon_scale: 1,
        }
    }
}

/// A single-layer SKIM network: `L` inputs, `M` dendrites, `N` output somas.
#[derive(Debug, Clone, PartialEq)]
pub struct SkimNetwork {
    params: NetworkParams,
    input_weights: DMatrix<f64>,
    kernels: Vec<KernelSpec>,
    output_weights: Option<DMatrix<f64>>,
}

impl SkimNetwork {
    /// Draws input weights and per-dendrite kernels from the seeded streams
    /// `weights` and `kernels`.
    pub fn new(params: NetworkParams) -> Result<Self> {
        params.validate()?;
        let (m, l) = (params.num_dendrites, params.num_inputs);
        let mut weight_rng = substream(params.seed, "weights");
        let mut kernel_rng = substream(params.seed, "kernels");
        let (lo, hi) = params.weight_range;
        let rows: Vec<f64> = (0..m * l)
            .map(|_| weight_rng.random_range(lo..hi))
            .collect();
        let input_weights = DMatrix::from_row_slice(m, l, &rows);
        let kernels = (0..m)
            .map(|_| params.kernel_family.sample(&mut kernel_rng))
            .collect();
        Ok(SkimNetwork {
            params,
            input_weights,
            kernels,
            output_weights: None,
        })
    }

    /// Assembles a network from explicit parts.
    pub fn from_parts(
        params: NetworkParams,
        input_weights: DMatrix<f64>,
        kernels: Vec<KernelSpec>,
        output_weights: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut params = params;
        params.num_dendrites = kernels.len();
        params.validate()?;
        if input_weights.shape() != (params.num_dendrites, params.num_inputs) {
            return Err(dimension(format!(
                "input weights are {:?}, expected ({}, {})",
                input_weights.shape(),
                params.num_dendrites,
                params.num_inputs
            )));
        }
        if input_weights.iter().any(|w| !w.is_finite()) {
            return Err(validation("input weights must be finite"));
        }
        for k in &kernels {
            k.validate()?;
        }
        let mut net = SkimNetwork {
            params,
            input_weights,
            kernels,
            output_weights: None,
        };
        if let Some(w) = output_weights {
            net.set_output_weights(w)?;
        }
        Ok(net)
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn num_inputs(&self) -> usize {
        self.params.num_inputs
    }

    pub fn num_dendrites(&self) -> usize {
        self.params.num_dendrites
    }

    pub fn num_outputs(&self) -> usize {
        self.params.num_outputs
    }

    pub fn num_synapses(&self) -> usize {
        self.num_inputs() * self.num_dendrites()
    }

    pub fn threshold(&self) -> f64 {
        self.params.threshold
    }

    pub fn seed(&self) -> u64 {
        self.params.seed
    }

    pub fn input_weights(&self) -> &DMatrix<f64> {
        &self.input_weights
    }

    pub fn kernels(&self) -> &[KernelSpec] {
        &self.kernels
    }

    pub fn output_weights(&self) -> Option<&DMatrix<f64>> {
        self.output_weights.as_ref()
    }

    /// Replaces the soma threshold; it must stay in `(0, target_amplitude)`.
    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        if !(threshold > 0.0 && threshold < self.params.target_amplitude) {
            return Err(validation(format!(
                "threshold must lie in (0, {}), got {threshold}",
                self.params.target_amplitude
            )));
        }
        self.params.threshold = threshold;
        Ok(())
    }

    pub fn set_output_weights(&mut self, w: DMatrix<f64>) -> Result<()> {
        if w.shape() != (self.num_outputs(), self.num_dendrites()) {
            return Err(dimension(format!(
                "output weights are {:?}, expected ({}, {})",
                w.shape(),
                self.num_outputs(),
                self.num_dendrites()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(SkimError::Domain("output weights must be finite".into()));
        }
        self.output_weights = Some(w);
        Ok(())
    }

    /// Copy of the network restricted to the listed dendrites. Output weights
    /// are dropped because they must be re-solved for the new dendrite set.
    pub fn with_dendrites(&self, keep: &[usize]) -> Result<SkimNetwork> {
        if keep.is_empty() {
            return Err(validation("a network needs at least one dendrite"));
        }
        if let Some(&j) = keep.iter().find(|&&j| j >= self.num_dendrites()) {
            return Err(validation(format!("dendrite index {j} out of range")));
        }
        let mut params = self.params.clone();
        params.num_dendrites = keep.len();
        Ok(SkimNetwork {
            params,
            input_weights: self.input_weights.select_rows(keep),
            kernels: keep.iter().map(|&j| self.kernels[j].clone()).collect(),
            output_weights: None,
        })
    }

    /// Copy of the network with the listed dendrites redrawn from the
    /// network's weight range and kernel family. Output weights are dropped.
    pub fn with_redrawn_dendrites<R: Rng + ?Sized>(
        &self,
        redraw: &[usize],
        rng: &mut R,
    ) -> Result<SkimNetwork> {
        let mut next = self.clone();
        next.output_weights = None;
        let (lo, hi) = self.params.weight_range;
        for &j in redraw {
            if j >= self.num_dendrites() {
                return Err(validation(format!("dendrite index {j} out of range")));
            }
            for i in 0..self.num_inputs() {
                next.input_weights[(j, i)] = rng.random_range(lo..hi);
            }
            next.kernels[j] = self.params.kernel_family.sample(rng);
        }
        Ok(next)
    }

    fn sim_options(&self) -> SimOptions {
        SimOptions {
            epsilon: self.params.support_epsilon,
            horizon_scale: 1,
        }
    }

    /// Simulates the network on one raster from rest.
    pub fn forward(&self, input: &SpikeRaster) -> Result<ForwardTrace> {
        self.forward_with(input, &self.sim_options())
    }

    pub fn forward_with(&self, input: &SpikeRaster, opts: &SimOptions) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let tables = self.prepare(input.num_steps(), opts)?;
        Ok(self.simulate(input, &tables))
    }

    /// Activation matrices of several presentations, concatenated column-wise.
    /// Dendritic state is reset between presentations.
    pub fn collect_activations(&self, inputs: &[SpikeRaster]) -> Result<ActivationMatrix> {
        if inputs.is_empty() {
            return Err(validation("collect_activations needs at least one raster"));
        }
        for r in inputs {
            self.check_input(r)?;
        }
        let max_len = inputs.iter().map(SpikeRaster::num_steps).max().unwrap_or(0);
        let tables = self.prepare(max_len, &self.sim_options())?;
        let total: usize = inputs.iter().map(SpikeRaster::num_steps).sum();
        let mut out = DMatrix::zeros(self.num_dendrites(), total);
        let mut col = 0;
        for r in inputs {
            let rows = self.dendrite_rows(r, &tables, None).0;
            for (j, row) in rows.iter().enumerate() {
                for (t, &v) in row.iter().enumerate() {
                    out[(j, col + t)] = v;
                }
            }
            col += r.num_steps();
        }
        Ok(ActivationMatrix(out))
    }

    /// Activations of the presentations played back to back without any reset.
    pub fn collect_activations_streaming(
        &self,
        inputs: &[SpikeRaster],
    ) -> Result<ActivationMatrix> {
        let joined = SpikeRaster::concat(inputs)?;
        Ok(self.forward(&joined)?.activations)
    }

    fn check_input(&self, input: &SpikeRaster) -> Result<()> {
        if input.num_channels() != self.num_inputs() {
            return Err(dimension(format!(
                "raster has {} channels, network expects {}",
                input.num_channels(),
                self.num_inputs()
            )));
        }
        Ok(())
    }

    /// Truncated response tables, `None` for stateful dendrites.
    fn prepare(&self, max_len: usize, opts: &SimOptions) -> Result<Vec<Option<Vec<f64>>>> {
        self.kernels
            .iter()
            .map(|k| {
                if k.kind.is_stateful() {
                    Ok(None)
                } else {
                    let h = response_support(k, opts.epsilon)?.saturating_mul(opts.horizon_scale);
                    response_table(k, h.min(max_len)).map(Some)
                }
            })
            .collect()
    }

    fn simulate(&self, input: &SpikeRaster, tables: &[Option<Vec<f64>>]) -> ForwardTrace {
        let k = input.num_steps();
        let (rows, soma_cols) = self.dendrite_rows(input, tables, self.output_weights.as_ref());
        let activations = DMatrix::from_fn(self.num_dendrites(), k, |j, t| rows[j][t]);
        let Some(w2) = self.output_weights.as_ref() else {
            return ForwardTrace {
                activations: ActivationMatrix(activations),
                soma: None,
                output_spikes: None,
            };
        };
        let soma = match soma_cols {
            Some(s) => s,
            None => w2 * &activations,
        };
        let theta = self.params.threshold;
        let spikes = soma.map(|y| y > theta);
        ForwardTrace {
            activations: ActivationMatrix(activations),
            soma: Some(soma),
            output_spikes: Some(spikes),
        }
    }

    /// Core time-stepped simulation. Returns per-dendrite potentials and, when
    /// the soma must be evaluated step by step (reset enabled), the soma matrix.
    fn dendrite_rows(
        &self,
        input: &SpikeRaster,
        tables: &[Option<Vec<f64>>],
        w2: Option<&DMatrix<f64>>,
    ) -> (Vec<Vec<f64>>, Option<DMatrix<f64>>) {
        let (m, k) = (self.num_dendrites(), input.num_steps());
        let swapped = self.params.swapped_order;
        let reset_w2 = if self.params.soma_reset { w2 } else { None };
        // Stateless dendrites accumulate launched responses into `drive`;
        // stateful ones keep their integrator value in `state`.
        let mut drive = vec![vec![0.0; k]; m];
        let mut state = vec![0.0; m];
        let mut out = vec![vec![0.0; k]; m];
        let leaks: Vec<f64> = self.kernels.iter().map(KernelSpec::leak).collect();
        let mut soma = reset_w2.map(|w| DMatrix::zeros(w.nrows(), k));
        let mut summed = vec![0.0; m];
        let events = input.events();
        let mut cursor = 0;
        let mut reset_pending = false;

        for t in 0..k {
            if reset_pending {
                for j in 0..m {
                    // Pending launches never reach past one table length.
                    let reach = tables[j].as_ref().map_or(0, Vec::len).min(k - t);
                    drive[j][t..t + reach].iter_mut().for_each(|v| *v = 0.0);
                    state[j] = 0.0;
                }
                reset_pending = false;
            }
            // Weighted sum of the spikes arriving at t.
            summed.iter_mut().for_each(|u| *u = 0.0);
            let mut any = false;
            while cursor < events.len() && events[cursor].1 == t {
                let ch = events[cursor].0;
                for (j, u) in summed.iter_mut().enumerate() {
                    *u += self.input_weights[(j, ch)];
                }
                any = true;
                cursor += 1;
            }
            for j in 0..m {
                let kernel = &self.kernels[j];
                let gain = kernel.logistic_gain;
                let u = summed[j];
                match &tables[j] {
                    Some(table) => {
                        let amp = if !any {
                            0.0
                        } else if swapped {
                            u
                        } else {
                            logistic_unchecked(u, gain)
                        };
                        if amp.abs() >= LAUNCH_FLOOR {
                            let span = table.len().min(k - t);
                            for (d, r) in drive[j][t..t + span].iter_mut().zip(&table[..span]) {
                                *d += amp * r;
                            }
                        }
                        out[j][t] = if swapped {
                            logistic_unchecked(drive[j][t], gain)
                        } else {
                            drive[j][t]
                        };
                    }
                    None => {
                        let input_term = if swapped {
                            u
                        } else {
                            let v = logistic_unchecked(u, gain);
                            if v.abs() < LAUNCH_FLOOR {
                                0.0
                            } else {
                                v
                            }
                        };
                        state[j] = step_leaky_unchecked(state[j], input_term, leaks[j]);
                        out[j][t] = if swapped {
                            logistic_unchecked(state[j], gain)
                        } else {
                            state[j]
                        };
                    }
                }
            }
            if let (Some(w), Some(s)) = (reset_w2, soma.as_mut()) {
                let theta = self.params.threshold;
                for n in 0..w.nrows() {
                    let y: f64 = (0..m).map(|j| w[(n, j)] * out[j][t]).sum();
                    s[(n, t)] = y;
                    if y > theta {
                        reset_pending = true;
                    }
                }
            }
        }
        (out, soma)
    }
}
