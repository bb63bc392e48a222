//! Synaptic kernels: the temporal response a dendrite applies to each
//! incoming (weighted, compressed) spike, and the logistic compression that
//! precedes it.
//!
//! Time is discrete with unit steps. Every time-like parameter (`tau`,
//! `delta_t`, `sigma`) is measured in timesteps and `omega` in radians per
//! timestep.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, validation, Result, SkimError};

/// Amplitude floor used when truncating kernel responses.
pub const DEFAULT_SUPPORT_EPSILON: f64 = 1e-6;

/// Logistic gain used throughout the worked examples.
pub const DEFAULT_LOGISTIC_GAIN: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Alpha,
    DampedResonance,
    DelayedAlpha,
    DelayedGaussian,
    /// Stateful leaky integrator with a compressive leak; see [`step_leaky`].
    LeakyIntegratorNl,
    /// Arbitrary sampled response, one amplitude per timestep offset.
    Custom,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::Alpha,
        KernelKind::DampedResonance,
        KernelKind::DelayedAlpha,
        KernelKind::DelayedGaussian,
        KernelKind::LeakyIntegratorNl,
        KernelKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Alpha => "alpha",
            KernelKind::DampedResonance => "damped_resonance",
            KernelKind::DelayedAlpha => "delayed_alpha",
            KernelKind::DelayedGaussian => "delayed_gaussian",
            KernelKind::LeakyIntegratorNl => "leaky_integrator_nl",
            KernelKind::Custom => "custom",
        }
    }

    pub fn is_stateful(self) -> bool {
        self == KernelKind::LeakyIntegratorNl
    }
}

impl std::str::FromStr for KernelKind {
    type Err = SkimError;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| validation(format!("unknown kernel kind `{s}`")))
    }
}

/// One dendrite's synaptic kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub delta_t: f64,
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_gain")]
    pub logistic_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_table: Option<Vec<f64>>,
}

fn default_gain() -> f64 {
    DEFAULT_LOGISTIC_GAIN
}

impl KernelSpec {
    fn base(kind: KernelKind) -> Self {
        KernelSpec {
            kind,
            tau: 0.0,
            delta_t: 0.0,
            omega: 0.0,
            sigma: 0.0,
            logistic_gain: DEFAULT_LOGISTIC_GAIN,
            custom_table: None,
        }
    }

    pub fn alpha(tau: f64) -> Self {
        KernelSpec {
            tau,
            ..Self::base(KernelKind::Alpha)
        }
    }

    pub fn damped_resonance(tau: f64, omega: f64) -> Self {
        KernelSpec {
            tau,
            omega,
            ..Self::base(KernelKind::DampedResonance)
        }
    }

    pub fn delayed_alpha(delta_t: f64, tau: f64) -> Self {
        KernelSpec {
            tau,
            delta_t,
            ..Self::base(KernelKind::DelayedAlpha)
        }
    }

    pub fn delayed_gaussian(delta_t: f64, sigma: f64) -> Self {
        KernelSpec {
            delta_t,
            sigma,
            ..Self::base(KernelKind::DelayedGaussian)
        }
    }

    pub fn leaky(tau: f64) -> Self {
        KernelSpec {
            tau,
            ..Self::base(KernelKind::LeakyIntegratorNl)
        }
    }

    pub fn custom(table: Vec<f64>) -> Self {
        KernelSpec {
            custom_table: Some(table),
            ..Self::base(KernelKind::Custom)
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.logistic_gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(validation(format!(
                    "{} kernel requires {name} > 0, got {v}",
                    self.kind.name()
                )))
            }
        };
        if !(self.logistic_gain.is_finite() && self.logistic_gain > 0.0) {
            return Err(validation(format!(
                "logistic_gain must be > 0, got {}",
                self.logistic_gain
            )));
        }
        if !(self.delta_t.is_finite() && self.delta_t >= 0.0) {
            return Err(validation(format!(
                "delta_t must be >= 0, got {}",
                self.delta_t
            )));
        }
        match self.kind {
            KernelKind::Alpha | KernelKind::DelayedAlpha | KernelKind::LeakyIntegratorNl => {
                positive("tau", self.tau)
            }
            KernelKind::DampedResonance => {
                positive("tau", self.tau)?;
                positive("omega", self.omega)
            }
            KernelKind::DelayedGaussian => positive("sigma", self.sigma),
            KernelKind::Custom => match &self.custom_table {
                Some(t) if t.iter().all(|v| v.is_finite()) => Ok(()),
                Some(_) => Err(validation("custom_table contains non-finite entries")),
                None => Err(validation("custom kernel requires custom_table")),
            },
        }
    }

    /// Leak factor of the stateful integrator, `exp(-1/tau)`.
    pub fn leak(&self) -> f64 {
        (-1.0 / self.tau).exp()
    }
}

/// Zero-centred logistic compression `1/(1+e^{-gain*u}) - 0.5`.
///
/// Evaluated as `tanh(gain*u/2)/2`, which is algebraically identical and
/// exactly odd in floating point.
pub fn logistic(u: f64, gain: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(domain(format!("logistic input must be finite, got {u}")));
    }
    if !(gain.is_finite() && gain > 0.0) {
        return Err(domain(format!("logistic gain must be > 0, got {gain}")));
    }
    Ok(logistic_unchecked(u, gain))
}

#[inline]
pub(crate) fn logistic_unchecked(u: f64, gain: f64) -> f64 {
    0.5 * (0.5 * gain * u).tanh()
}

#[inline]
fn alpha_shape(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (-x).exp()
    }
}

/// Response of a stateless kernel `dt` timesteps after a unit-amplitude trigger.
pub fn eval_response(spec: &KernelSpec, dt: f64) -> Result<f64> {
    if spec.kind.is_stateful() {
        return Err(SkimError::Misuse(
            "leaky_integrator_nl is stateful; use step_leaky".into(),
        ));
    }
    spec.validate()?;
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(domain(format!("dt must be finite and >= 0, got {dt}")));
    }
    Ok(response_unchecked(spec, dt))
}

pub(crate) fn response_unchecked(spec: &KernelSpec, dt: f64) -> f64 {
    match spec.kind {
        KernelKind::Alpha => alpha_shape(dt / spec.tau),
        KernelKind::DampedResonance => (-dt / spec.tau).exp() * (spec.omega * dt).sin(),
        KernelKind::DelayedAlpha => {
            if dt < spec.delta_t {
                0.0
            } else {
                alpha_shape((dt - spec.delta_t) / spec.tau)
            }
        }
        KernelKind::DelayedGaussian => {
            let z = (dt - spec.delta_t) / spec.sigma;
            (-0.5 * z * z).exp() / (spec.sigma * (2.0 * PI).sqrt())
        }
        KernelKind::Custom => {
            let table = spec.custom_table.as_deref().unwrap_or(&[]);
            // Table entries sit on integer offsets.
            let idx = dt.floor();
            if dt != idx || idx >= table.len() as f64 {
                0.0
            } else {
                table[idx as usize]
            }
        }
        KernelKind::LeakyIntegratorNl => 0.0,
    }
}

/// Smallest horizon `H` (in whole timesteps) such that the response magnitude
/// stays below `epsilon` for every integer offset `dt >= H`.
pub fn response_support(spec: &KernelSpec, epsilon: f64) -> Result<usize> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    if spec.kind.is_stateful() {
        return Err(SkimError::Misuse(
            "leaky_integrator_nl has no finite response table".into(),
        ));
    }
    spec.validate()?;
    let horizon = match spec.kind {
        KernelKind::DampedResonance => {
            // Envelope e^{-dt/tau} >= eps  <=>  dt <= tau * ln(1/eps).
            if epsilon > 1.0 {
                0
            } else {
                let mut h = (spec.tau * (1.0 / epsilon).ln()).floor() as usize + 1;
                while h > 0 && (-((h - 1) as f64) / spec.tau).exp() < epsilon {
                    h -= 1;
                }
                while (-(h as f64) / spec.tau).exp() >= epsilon {
                    h += 1;
                }
                h
            }
        }
        KernelKind::Custom => {
            let table = spec.custom_table.as_deref().unwrap_or(&[]);
            table
                .iter()
                .rposition(|v| v.abs() >= epsilon)
                .map_or(0, |i| i + 1)
        }
        _ => {
            // Unimodal shapes: the magnitude decreases monotonically past the peak.
            let peak = match spec.kind {
                KernelKind::DelayedGaussian => spec.delta_t,
                KernelKind::DelayedAlpha => spec.delta_t + spec.tau,
                _ => spec.tau,
            };
            let mut last_above = None;
            let mut dt = 0usize;
            loop {
                let v = response_unchecked(spec, dt as f64).abs();
                if v >= epsilon {
                    last_above = Some(dt);
                } else if dt as f64 >= peak {
                    break;
                }
                dt += 1;
            }
            last_above.map_or(0, |d| d + 1)
        }
    };
    Ok(horizon)
}

/// Response sampled at integer offsets `0..len`.
pub fn response_table(spec: &KernelSpec, len: usize) -> Result<Vec<f64>> {
    if spec.kind.is_stateful() {
        return Err(SkimError::Misuse(
            "leaky_integrator_nl has no response table".into(),
        ));
    }
    spec.validate()?;
    Ok((0..len)
        .map(|dt| response_unchecked(spec, dt as f64))
        .collect())
}

/// One step of the compressive leaky integrator:
/// `a_t = leak * a_{t-1} / (1 + a_{t-1}^2) + input`.
pub fn step_leaky(state: f64, input: f64, leak: f64) -> Result<f64> {
    if !(leak > 0.0 && leak < 1.0) {
        return Err(validation(format!("leak must lie in (0, 1), got {leak}")));
    }
    if !state.is_finite() || !input.is_finite() {
        return Err(domain("leaky integrator state and input must be finite"));
    }
    Ok(step_leaky_unchecked(state, input, leak))
}

#[inline]
pub(crate) fn step_leaky_unchecked(state: f64, input: f64, leak: f64) -> f64 {
    leak * state / (1.0 + state * state) + input
}

/// Closed interval from which a kernel parameter is drawn uniformly.
/// `lo == hi` pins the parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub lo: f64,
    pub hi: f64,
}

impl ParamRange {
    pub const fn new(lo: f64, hi: f64) -> Self {
        ParamRange { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        ParamRange { lo: v, hi: v }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            let mut v = rng.random_range(self.lo..self.hi);
            // Open lower bound: strictly positive parameters must not hit zero.
            while v == self.lo {
                v = rng.random_range(self.lo..self.hi);
            }
            v
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(validation(format!(
                "{name} range must satisfy lo <= hi, got ({}, {})",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Template from which each dendrite's kernel is drawn at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFamily {
    pub kind: KernelKind,
    #[serde(default = "zero_range")]
    pub tau: ParamRange,
    #[serde(default = "zero_range")]
    pub delta_t: ParamRange,
    #[serde(default = "zero_range")]
    pub omega: ParamRange,
    #[serde(default = "zero_range")]
    pub sigma: ParamRange,
    #[serde(default = "default_gain")]
    pub logistic_gain: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_table: Option<Vec<f64>>,
}

fn zero_range() -> ParamRange {
    ParamRange::fixed(0.0)
}

impl KernelFamily {
    fn base(kind: KernelKind) -> Self {
        KernelFamily {
            kind,
            tau: zero_range(),
            delta_t: zero_range(),
            omega: zero_range(),
            sigma: zero_range(),
            logistic_gain: DEFAULT_LOGISTIC_GAIN,
            custom_table: None,
        }
    }

    /// Alpha kernels with `tau ~ U(0, t_max/2)`, the persistence heuristic for
    /// patterns spanning `t_max` steps.
    pub fn alpha_for_span(t_max: f64) -> Self {
        KernelFamily {
            tau: ParamRange::new(0.0, t_max / 2.0),
            ..Self::base(KernelKind::Alpha)
        }
    }

    pub fn alpha(tau: ParamRange) -> Self {
        KernelFamily {
            tau,
            ..Self::base(KernelKind::Alpha)
        }
    }

    pub fn damped_resonance(tau: ParamRange, omega: ParamRange) -> Self {
        KernelFamily {
            tau,
            omega,
            ..Self::base(KernelKind::DampedResonance)
        }
    }

    pub fn delayed_alpha(delta_t: ParamRange, tau: ParamRange) -> Self {
        KernelFamily {
            delta_t,
            tau,
            ..Self::base(KernelKind::DelayedAlpha)
        }
    }

    pub fn delayed_gaussian(delta_t: ParamRange, sigma: ParamRange) -> Self {
        KernelFamily {
            delta_t,
            sigma,
            ..Self::base(KernelKind::DelayedGaussian)
        }
    }

    pub fn leaky(tau: ParamRange) -> Self {
        KernelFamily {
            tau,
            ..Self::base(KernelKind::LeakyIntegratorNl)
        }
    }

    pub fn custom(table: Vec<f64>) -> Self {
        KernelFamily {
            custom_table: Some(table),
            ..Self::base(KernelKind::Custom)
        }
    }

    pub fn with_gain(mut self, gain: f64) -> Self {
        self.logistic_gain = gain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.tau.validate("tau")?;
        self.delta_t.validate("delta_t")?;
        self.omega.validate("omega")?;
        self.sigma.validate("sigma")?;
        // Probe the extremes of each range through the kernel validator. A lower
        // bound of zero is open for strictly positive parameters.
        let probe = |pick: fn(&ParamRange) -> f64| KernelSpec {
            kind: self.kind,
            tau: open_low(pick(&self.tau), &self.tau),
            delta_t: pick(&self.delta_t),
            omega: open_low(pick(&self.omega), &self.omega),
            sigma: open_low(pick(&self.sigma), &self.sigma),
            logistic_gain: self.logistic_gain,
            custom_table: self.custom_table.clone(),
        };
        probe(|r| r.lo).validate()?;
        probe(|r| r.hi).validate()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> KernelSpec {
        KernelSpec {
            kind: self.kind,
            tau: self.tau.sample(rng),
            delta_t: self.delta_t.sample(rng),
            omega: self.omega.sample(rng),
            sigma: self.sigma.sample(rng),
            logistic_gain: self.logistic_gain,
            custom_table: self.custom_table.clone(),
        }
    }
}

fn open_low(v: f64, r: &ParamRange) -> f64 {
    if v == 0.0 && r.lo == 0.0 && r.hi > 0.0 {
        f64::MIN_POSITIVE
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(0.0, 5.0).unwrap(), 0.0);
        assert!((logistic(100.0, 5.0).unwrap() - 0.5).abs() < 1e-12);
        // 1/(1+e^-5) - 0.5
        let expected = 1.0 / (1.0 + (-5.0f64).exp()) - 0.5;
        assert!((logistic(1.0, 5.0).unwrap() - expected).abs() < 1e-15);
        assert!((logistic(1.0, 5.0).unwrap() - 0.493307).abs() < 1e-6);
        assert!(matches!(logistic(f64::NAN, 5.0), Err(SkimError::Domain(_))));
        assert!(matches!(
            logistic(f64::INFINITY, 5.0),
            Err(SkimError::Domain(_))
        ));
    }

    #[test]
    fn response_examples() {
        let a = KernelSpec::alpha(100.0);
        assert!((eval_response(&a, 100.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!((eval_response(&a, 200.0).unwrap() - 2.0 / (E * E)).abs() < 1e-15);
        assert!((eval_response(&a, 200.0).unwrap() - 0.270671).abs() < 1e-6);

        let d = KernelSpec::delayed_alpha(50.0, 100.0);
        assert_eq!(eval_response(&d, 30.0).unwrap(), 0.0);

        let g = KernelSpec::delayed_gaussian(100.0, 10.0);
        let peak = 1.0 / (10.0 * (2.0 * PI).sqrt());
        assert!((eval_response(&g, 100.0).unwrap() - peak).abs() < 1e-15);
        assert!((peak - 0.039894).abs() < 1e-6);
    }

    #[test]
    fn response_misuse_and_validation() {
        assert!(matches!(
            eval_response(&KernelSpec::leaky(10.0), 1.0),
            Err(SkimError::Misuse(_))
        ));
        assert!(matches!(
            eval_response(&KernelSpec::alpha(0.0), 1.0),
            Err(SkimError::Validation(_))
        ));
        assert!(matches!(
            eval_response(&KernelSpec::damped_resonance(10.0, 0.0), 1.0),
            Err(SkimError::Validation(_))
        ));
        assert!(matches!(
            eval_response(&KernelSpec::delayed_gaussian(-1.0, 2.0), 1.0),
            Err(SkimError::Validation(_))
        ));
        assert!(eval_response(&KernelSpec::alpha(1.0).with_gain(0.0), 1.0).is_err());
        assert!(eval_response(&KernelSpec::custom(vec![1.0, f64::NAN]), 0.0).is_err());
    }

    #[test]
    fn custom_table_lookup() {
        let c = KernelSpec::custom(vec![0.5, -1.0, 2.0]);
        assert_eq!(eval_response(&c, 1.0).unwrap(), -1.0);
        assert_eq!(eval_response(&c, 3.0).unwrap(), 0.0);
        assert_eq!(eval_response(&c, 1000.0).unwrap(), 0.0);
    }

    #[test]
    fn support_examples() {
        // Floor above the e^-1 peak: nothing ever reaches it.
        assert_eq!(response_support(&KernelSpec::alpha(100.0), 0.5).unwrap(), 0);

        // Analytic Gaussian tail: last dt with f(dt) >= eps is
        // floor(dT + sigma * sqrt(2 ln(peak/eps))).
        let g = KernelSpec::delayed_gaussian(100.0, 10.0);
        let eps = 1e-12;
        let peak = 1.0 / (10.0 * (2.0 * PI).sqrt());
        let tail = 100.0 + 10.0 * (2.0 * (peak / eps).ln()).sqrt();
        let h = response_support(&g, eps).unwrap();
        assert_eq!(h, tail.floor() as usize + 1);
        assert!((h as f64 - 172.0).abs() <= 3.0);

        let table: Vec<f64> = (0..300).map(|i| 1.0 + i as f64).collect();
        let h = response_support(&KernelSpec::custom(table), 1e-6).unwrap();
        assert!(h <= 300);
        assert_eq!(h, 300);

        assert!(matches!(
            response_support(&KernelSpec::alpha(1.0), 0.0),
            Err(SkimError::Domain(_))
        ));
        assert!(matches!(
            response_support(&KernelSpec::leaky(1.0), 1e-6),
            Err(SkimError::Misuse(_))
        ));
    }

    #[test]
    fn support_bounds_every_kind() {
        let specs = [
            KernelSpec::alpha(37.5),
            KernelSpec::alpha(0.3),
            KernelSpec::damped_resonance(20.0, 0.3),
            KernelSpec::delayed_alpha(40.0, 12.0),
            KernelSpec::delayed_gaussian(60.0, 4.0),
            KernelSpec::custom(vec![0.0, 1.0, 1e-9, -0.3, 0.0, 0.0]),
        ];
        for spec in &specs {
            let h = response_support(spec, DEFAULT_SUPPORT_EPSILON).unwrap();
            for dt in h..(10 * h.max(1)) {
                assert!(
                    response_unchecked(spec, dt as f64).abs() < DEFAULT_SUPPORT_EPSILON,
                    "{spec:?} dt={dt}"
                );
            }
            if h > 0 {
                // Minimality, except for the envelope bound used by the resonant kernel.
                let below = response_unchecked(spec, (h - 1) as f64).abs();
                if spec.kind != KernelKind::DampedResonance {
                    assert!(below >= DEFAULT_SUPPORT_EPSILON, "{spec:?}");
                }
            }
        }
    }

    #[test]
    fn alpha_peak_by_dense_scan() {
        for (delay, tau) in [(0.0, 100.0), (0.0, 7.25), (50.0, 100.0), (13.0, 3.5)] {
            let spec = KernelSpec::delayed_alpha(delay, tau);
            let step = 0.01;
            let (mut best_t, mut best_v) = (0.0, f64::MIN);
            let n = ((delay + 4.0 * tau) / step) as usize;
            for i in 0..=n {
                let t = i as f64 * step;
                let v = eval_response(&spec, t).unwrap();
                assert!(v >= 0.0);
                if v > best_v {
                    best_v = v;
                    best_t = t;
                }
            }
            assert!((best_t - (delay + tau)).abs() <= step);
            assert!((best_v - (-1.0f64).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn damped_resonance_zeros() {
        let spec = KernelSpec::damped_resonance(50.0, 0.37);
        for n in 0..20 {
            let t = n as f64 * PI / 0.37;
            assert!(eval_response(&spec, t).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn leaky_examples() {
        assert_eq!(step_leaky(0.0, 0.0, 0.9).unwrap(), 0.0);
        assert_eq!(step_leaky(0.0, 0.5, 0.9).unwrap(), 0.5);
        assert!((step_leaky(1.0, 0.0, 0.9).unwrap() - 0.45).abs() < 1e-15);
        assert!(matches!(
            step_leaky(0.0, 0.0, 1.0),
            Err(SkimError::Validation(_))
        ));
        assert!(matches!(
            step_leaky(0.0, 0.0, 0.0),
            Err(SkimError::Validation(_))
        ));
        assert!(matches!(
            step_leaky(f64::NAN, 0.0, 0.5),
            Err(SkimError::Domain(_))
        ));
    }

    #[test]
    fn leaky_decays_to_rest() {
        for start in [0.1, -0.1, 1.0, -1.0, 10.0, -10.0] {
            let mut a: f64 = start;
            for _ in 0..10_000 {
                let next = step_leaky(a, 0.0, 0.9).unwrap();
                assert!(next.abs() <= a.abs());
                a = next;
            }
            assert!(a.abs() < 1e-12, "start {start} ended at {a}");
        }
    }

    #[test]
    fn kernel_json_shape() {
        let spec = KernelSpec::alpha(63.2);
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"kind": "alpha", "tau": 63.2, "delta_t": 0.0, "omega": 0.0, "sigma": 0.0, "logistic_gain": 5.0})
        );
        let back: KernelSpec = serde_json::from_str(
            r#"{"kind": "alpha", "tau": 63.2, "delta_t": 0, "omega": 0, "sigma": 0, "logistic_gain": 5.0}"#,
        )
        .unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn family_sampling_respects_ranges() {
        use rand::SeedableRng;
        let fam = KernelFamily::alpha_for_span(200.0);
        fam.validate().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = fam.sample(&mut rng);
            assert!(k.tau > 0.0 && k.tau < 100.0);
            k.validate().unwrap();
        }
        assert!(KernelFamily::alpha(ParamRange::new(5.0, 1.0))
            .validate()
            .is_err());
        assert!(
            KernelFamily::damped_resonance(ParamRange::new(1.0, 2.0), ParamRange::fixed(0.0))
                .validate()
                .is_err()
        );
    }

    proptest! {
        #[test]
        fn logistic_odd_monotone_bounded(u in -2.0f64..2.0, d in 1e-3f64..1.0, k in 0.1f64..5.0) {
            let v = logistic(u, k).unwrap();
            prop_assert_eq!(logistic(-u, k).unwrap(), -v);
            prop_assert!(v.abs() < 0.5);
            prop_assert!(logistic(u + d, k).unwrap() > v);
        }

        #[test]
        fn alpha_nonnegative(tau in 0.1f64..500.0, delay in 0.0f64..100.0, dt in 0.0f64..2000.0) {
            prop_assert!(eval_response(&KernelSpec::alpha(tau), dt).unwrap() >= 0.0);
            prop_assert!(eval_response(&KernelSpec::delayed_alpha(delay, tau), dt).unwrap() >= 0.0);
        }

        #[test]
        fn support_holds_for_random_kernels(tau in 0.2f64..150.0, delay in 0.0f64..80.0, sigma in 0.5f64..30.0, omega in 0.01f64..1.0) {
            let eps = DEFAULT_SUPPORT_EPSILON;
            for spec in [
                KernelSpec::alpha(tau),
                KernelSpec::delayed_alpha(delay, tau),
                KernelSpec::delayed_gaussian(delay, sigma),
                KernelSpec::damped_resonance(tau, omega),
            ] {
                let h = response_support(&spec, eps).unwrap();
                for dt in h..(10 * h.max(1)) {
                    prop_assert!(response_unchecked(&spec, dt as f64).abs() < eps);
                }
            }
        }
    }
}
