//! Overshift fault injection and the fidelity experiment harness.
//!
//! Every physical track owns a seeded random stream keyed by its location.
//! A stream is advanced once per logical shift of its track whether or not
//! the shift is issued, so two runs that differ only in error-detection
//! settings see the same fault events.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fixedpoint::FixedQ8_8;
use crate::lstm::{CellKind, LayerWeights};
use crate::mapping::{LayerSpec, NetworkSpec, Placement, SpecError};
use crate::nonlinear::ActivationImpl;
use crate::sim::{simulate, SimError};

/// Default overshift probability per shift event.
pub const DEFAULT_P_OVERSHIFT: f64 = 4.55e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultSite {
    InputChains,
    WeightArrays,
    Logic,
}

impl FaultSite {
    pub fn name(self) -> &'static str {
        match self {
            Self::InputChains => "input_chains",
            Self::WeightArrays => "weight_arrays",
            Self::Logic => "logic",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitRegion {
    #[default]
    All,
    IntegerOnly,
    FractionOnly,
    SignOnly,
}

impl BitRegion {
    pub fn name(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::IntegerOnly => "integer_only",
            Self::FractionOnly => "fraction_only",
            Self::SignOnly => "sign_only",
        }
    }

    /// Word bits covered by the region.
    pub fn bits(self) -> u16 {
        match self {
            Self::All => 0xffff,
            Self::IntegerOnly => 0xff00,
            Self::FractionOnly => 0x00ff,
            Self::SignOnly => 0x8000,
        }
    }
}

/// Whether bit `index` of a word lies in `region`.
pub fn region_mask(index: usize, region: BitRegion) -> bool {
    assert!(index < 16, "bit index out of range");
    region.bits() >> index & 1 == 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorConfig {
    pub p_overshift: f64,
    pub sites: BTreeSet<FaultSite>,
    pub bit_region: BitRegion,
    pub edc_inputs: bool,
    pub edc_weights: bool,
    pub seed: Option<u64>,
}

impl Default for ErrorConfig {
    fn default() -> Self {
        Self::none()
    }
}

impl ErrorConfig {
    /// Error-free configuration.
    pub fn none() -> Self {
        Self {
            p_overshift: 0.0,
            sites: BTreeSet::new(),
            bit_region: BitRegion::All,
            edc_inputs: false,
            edc_weights: false,
            seed: None,
        }
    }

    pub fn new(p: f64, sites: &[FaultSite], seed: u64) -> Self {
        Self { p_overshift: p, sites: sites.iter().copied().collect(), seed: Some(seed), ..Self::none() }
    }

    pub fn all_sites(p: f64, seed: u64) -> Self {
        Self::new(p, &[FaultSite::InputChains, FaultSite::WeightArrays, FaultSite::Logic], seed)
    }

    pub fn with_edc(mut self, inputs: bool, weights: bool) -> Self {
        self.edc_inputs = inputs;
        self.edc_weights = weights;
        self
    }

    pub fn with_region(mut self, region: BitRegion) -> Self {
        self.bit_region = region;
        self
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let invalid = |field: &str, message: &str| SpecError::Invalid { field: field.into(), message: message.into() };
        if !(0.0..=1.0).contains(&self.p_overshift) {
            return Err(invalid("error.p_overshift", "must lie in [0, 1]"));
        }
        if self.p_overshift > 0.0 && self.sites.is_empty() {
            return Err(invalid("error.sites", "must be nonempty when p_overshift > 0"));
        }
        if self.p_overshift > 0.0 && self.seed.is_none() {
            return Err(invalid("error.seed", "required for error-injection runs"));
        }
        Ok(())
    }

    /// True if faults can fire at `site`.
    pub fn active(&self, site: FaultSite) -> bool {
        self.p_overshift > 0.0 && self.sites.contains(&site)
    }

    pub fn sites_label(&self) -> String {
        if self.sites.is_empty() {
            return "none".into();
        }
        self.sites.iter().map(|s| s.name()).collect::<Vec<_>>().join("+")
    }
}

/// Identity of a physical track, used to key its random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrackKey {
    InputChain { layer: usize, recurrent: bool, segment: usize, plane: usize },
    Weight { layer: usize, neuron: usize, share: usize, engine: usize, bit: usize },
    Mac { layer: usize, neuron: usize, share: usize, engine: usize },
    Activation { layer: usize, neuron: usize },
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl TrackKey {
    /// Stable 64-bit stream identifier.
    pub fn stream_id(&self) -> u64 {
        let fields: [u64; 6] = match *self {
            Self::InputChain { layer, recurrent, segment, plane } => {
                [1, layer as u64, u64::from(recurrent), segment as u64, plane as u64, 0]
            }
            Self::Weight { layer, neuron, share, engine, bit } => {
                [2, layer as u64, neuron as u64, share as u64, engine as u64, bit as u64]
            }
            Self::Mac { layer, neuron, share, engine } => [3, layer as u64, neuron as u64, share as u64, engine as u64, 0],
            Self::Activation { layer, neuron } => [4, layer as u64, neuron as u64, 0, 0, 0],
        };
        fields.iter().fold(0u64, |h, &f| splitmix(h ^ f))
    }
}

/// Outcome of one shift event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftFault {
    None,
    OvershiftByOne,
}

/// Bernoulli(p) event stream with geometric skip sampling.
#[derive(Clone, Debug)]
pub struct FaultStream {
    rng: ChaCha8Rng,
    gap: Option<Geometric>,
    /// Events remaining before the next fault.
    countdown: u64,
    always: bool,
}

impl FaultStream {
    pub fn new(seed: u64, key: TrackKey, p: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(key.stream_id());
        let always = p >= 1.0;
        let gap = (p > 0.0 && !always).then(|| Geometric::new(p).expect("probability in (0, 1)"));
        let countdown = gap.as_ref().map_or(u64::MAX, |g| g.sample(&mut rng));
        Self { rng, gap, countdown, always }
    }

    /// Stream that never fires.
    pub fn silent() -> Self {
        Self::new(0, TrackKey::Activation { layer: 0, neuron: 0 }, 0.0)
    }

    pub fn inject(&mut self) -> ShiftFault {
        if self.next() {
            ShiftFault::OvershiftByOne
        } else {
            ShiftFault::None
        }
    }

    /// Advance by one event; true if it faults.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> bool {
        if self.always {
            return true;
        }
        let Some(gap) = &self.gap else {
            return false;
        };
        if self.countdown == 0 {
            self.countdown = gap.sample(&mut self.rng);
            true
        } else {
            self.countdown -= 1;
            false
        }
    }
}

/// Builds streams for a run.
#[derive(Clone, Debug)]
pub struct Injector {
    cfg: ErrorConfig,
}

impl Injector {
    pub fn new(cfg: &ErrorConfig) -> Self {
        Self { cfg: cfg.clone() }
    }

    pub fn config(&self) -> &ErrorConfig {
        &self.cfg
    }

    /// Stream for a track at `site`, or `None` if the site is inactive.
    pub fn stream(&self, site: FaultSite, key: TrackKey) -> Option<FaultStream> {
        self.cfg.active(site).then(|| FaultStream::new(self.cfg.seed.unwrap_or(0), key, self.cfg.p_overshift))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSummary {
    pub input_overshifts: u64,
    pub input_corrected: u64,
    pub weight_overshifts: u64,
    pub weight_zeroed: u64,
    pub logic_faults: u64,
}

impl std::ops::AddAssign for FaultSummary {
    fn add_assign(&mut self, o: Self) {
        self.input_overshifts += o.input_overshifts;
        self.input_corrected += o.input_corrected;
        self.weight_overshifts += o.weight_overshifts;
        self.weight_zeroed += o.weight_zeroed;
        self.logic_faults += o.logic_faults;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityMetrics {
    pub argmax_agreement: f64,
    pub nrmse: f64,
}

/// First index of the largest element.
pub fn argmax(v: &[FixedQ8_8]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

/// Compare a run's final-layer outputs (`[timestep][neuron]`) with the clean run.
pub fn fidelity(clean: &[Vec<FixedQ8_8>], faulty: &[Vec<FixedQ8_8>]) -> FidelityMetrics {
    if clean.is_empty() {
        return FidelityMetrics { argmax_agreement: 1.0, nrmse: 0.0 };
    }
    let agree = clean.iter().zip(faulty).filter(|(a, b)| argmax(a) == argmax(b)).count();
    let (last_c, last_f) = (clean.last().unwrap(), faulty.last().unwrap());
    let n = last_c.len().max(1) as f64;
    let mse = last_c.iter().zip(last_f).map(|(a, b)| (a.to_real() - b.to_real()).powi(2)).sum::<f64>() / n;
    let rms = (last_c.iter().map(|a| a.to_real().powi(2)).sum::<f64>() / n).sqrt();
    let nrmse = if rms > 0.0 { mse.sqrt() / rms } else { mse.sqrt() };
    FidelityMetrics { argmax_agreement: agree as f64 / clean.len() as f64, nrmse }
}

/// Evaluation fixture: one LSTM layer, fixed weights and input stream.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub spec: NetworkSpec,
    pub weights: Vec<LayerWeights<FixedQ8_8>>,
    pub inputs: Vec<Vec<FixedQ8_8>>,
}

pub const FIXTURE_SEED: u64 = 0x5eed_f1de;

impl Fixture {
    /// 1×128 LSTM, 128 inputs in [-1, 1], 32 timesteps, weights in [-0.5, 0.5].
    pub fn reference() -> Self {
        Self::lstm(128, 128, 32, FIXTURE_SEED)
    }

    pub fn lstm(neurons: usize, inputs: usize, timesteps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetworkSpec {
            layers: vec![LayerSpec { cell_type: CellKind::Lstm, neurons, inputs }],
            timesteps,
            activation_impl: ActivationImpl::Approx,
        };
        let weights = vec![LayerWeights::random(CellKind::Lstm, inputs, neurons, 0.5, &mut rng)];
        let inputs = (0..timesteps)
            .map(|_| (0..inputs).map(|_| FixedQ8_8::from_raw(rng.random_range(-256..=256))).collect())
            .collect();
        Self { spec, weights, inputs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityRow {
    pub p: f64,
    pub sites: String,
    pub region: BitRegion,
    pub edc_inputs: bool,
    pub edc_weights: bool,
    pub seed: u64,
    pub argmax_agreement: f64,
    pub nrmse: f64,
    pub faults: FaultSummary,
}

/// Run every configuration against the shared clean reference, in parallel.
/// Rows come back in grid order.
pub fn run_fidelity_experiment(
    placement: &Placement,
    weights: &[LayerWeights<FixedQ8_8>],
    inputs: &[Vec<FixedQ8_8>],
    grid: &[ErrorConfig],
) -> Result<Vec<FidelityRow>, SimError> {
    assert!(!grid.is_empty(), "fidelity grid must be nonempty");
    let clean = simulate(placement, weights, inputs, &ErrorConfig::none())?;
    let reference = clean.outputs.last().cloned().unwrap_or_default();
    grid.par_iter()
        .map(|cfg| {
            let run = simulate(placement, weights, inputs, cfg)?;
            let m = fidelity(&reference, run.outputs.last().map(Vec::as_slice).unwrap_or(&[]));
            Ok(FidelityRow {
                p: cfg.p_overshift,
                sites: cfg.sites_label(),
                region: cfg.bit_region,
                edc_inputs: cfg.edc_inputs,
                edc_weights: cfg.edc_weights,
                seed: cfg.seed.unwrap_or(0),
                argmax_agreement: m.argmax_agreement,
                nrmse: m.nrmse,
                faults: run.faults,
            })
        })
        .collect()
}

pub fn fidelity_csv(rows: &[FidelityRow]) -> String {
    let mut out = String::from("p,sites,region,edc_inputs,edc_weights,seed,argmax_agreement,nrmse\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.p,
            r.sites,
            r.region.name(),
            r.edc_inputs,
            r.edc_weights,
            r.seed,
            r.argmax_agreement,
            r.nrmse
        ));
    }
    out
}

/// The overshift probabilities swept for the degradation curve.
pub const P_SWEEP: [f64; 7] = [1e-7, 1e-6, 1e-5, 4.55e-5, 1e-4, 1e-3, 1e-2];

/// `P_SWEEP` × EDC off/on (both EDCs together) × `seeds`, all sites.
pub fn sweep_grid(seeds: &[u64]) -> Vec<ErrorConfig> {
    let mut grid = Vec::new();
    for &p in &P_SWEEP {
        for edc in [false, true] {
            for &seed in seeds {
                grid.push(ErrorConfig::all_sites(p, seed).with_edc(edc, edc));
            }
        }
    }
    grid
}

/// One-sided paired t-test of `mean(a - b) > 0`; returns the p-value.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    if d.len() < 2 {
        return 1.0;
    }
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("valid degrees of freedom");
    1.0 - dist.cdf(t)
}
