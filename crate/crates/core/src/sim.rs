//! Discrete-cycle execution of a placed network.
//!
//! Per layer and timestep the input chain (`x`) and the recurrent chain
//! (`h`) are loaded and rotated once around; every MAC engine issues one
//! multiply for each chain word inside its weight range, at the step that
//! word passes its tile. Partial sums are reduced along each neuron's
//! aggregation tree and finished by the aggregation unit.
//!
//! Timing: step `k` of a chain issues at `start + read + stall + k * interval`.
//! Layer `l` at timestep `t` starts once layer `l - 1` finished timestep `t`,
//! layer `l` finished timestep `t - 1` and its weight tracks have rewound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{energy_report, EnergyLedger, EnergyReport, EventCounts};
use crate::error_model::{ErrorConfig, FaultSite, FaultStream, FaultSummary, Injector, TrackKey};
use crate::fixedpoint::{FixedQ8_8, WideAccumulator, WORD_BITS};
use crate::lstm::{
    aggregate, gru_finish, lstm_finish, vanilla_finish, ActivationUnit, CellError, CellKind, CellState, LayerWeights,
    MacPipeline,
};
use crate::mapping::{chain_plan, ChainLayout, HardwareConfig, LayerChains, LayerPlacement, Placement, SpecError};
use crate::nonlinear::ActivationImpl;
use crate::racetrack::{InputTrackChain, ShiftEffect, WeightOutcome, WeightTrackGroup};

type Fx = FixedQ8_8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("placement has {placement} layers but {weights} weight sets were given")]
    LayerCount { placement: usize, weights: usize },
    #[error("layer {layer} weights: {source}")]
    Weights { layer: usize, source: CellError },
    #[error("timestep {timestep}: expected {expected} input words, got {got}")]
    InputShape { timestep: usize, expected: usize, got: usize },
    #[error("scheduling contract violated: {0}")]
    Schedule(CellError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerStepTiming {
    pub layer: usize,
    pub timestep: usize,
    pub start: u64,
    pub done: u64,
    pub rewind_end: u64,
    pub stall: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    LayerStart,
    LayerDone,
    ChainStall,
    InputOvershift,
    InputCorrected,
    WeightOvershift,
    WeightZeroed,
    LogicFault,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub layer: usize,
    pub timestep: usize,
    pub kind: TraceKind,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// `h_t` indexed `[layer][timestep][neuron]`.
    pub outputs: Vec<Vec<Vec<Fx>>>,
    pub total_cycles: u64,
    pub total_energy_pj: f64,
    pub ledger: EnergyLedger,
    pub energy: EnergyReport,
    pub timing: Vec<LayerStepTiming>,
    pub stall_cycles: u64,
    pub faults: FaultSummary,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

impl RunResult {
    pub fn final_outputs(&self) -> &[Vec<Fx>] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn trace_csv(events: &[TraceEvent]) -> String {
    let mut out = String::from("cycle,layer,timestep,kind,detail\n");
    for e in events {
        let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", e.cycle, e.layer, e.timestep, kind, e.detail));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Part {
    X,
    H,
}

/// Static description of one MAC engine's work for one neuron share.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct EngineSpec {
    share: usize,
    gate: usize,
    part: Part,
    /// Half-open word range on the engine's chain.
    lo: usize,
    hi: usize,
    /// Segment the engine's tile reads.
    reader: usize,
    /// Chain word index under the reader at step 0.
    offset: usize,
    words: usize,
}

impl EngineSpec {
    fn len(&self) -> usize {
        self.hi - self.lo
    }

    fn step_of(&self, w: usize) -> usize {
        (w + self.words - self.offset) % self.words
    }

    /// Word indices in the order they pass the reader.
    fn order(&self) -> impl Iterator<Item = usize> {
        let (lo, hi, o) = (self.lo, self.hi, self.offset);
        let (first, second) = if lo < o && o < hi { (o..hi, lo..o) } else { (lo..hi, 0..0) };
        first.chain(second)
    }

    /// Step of the last consumed word, in closed form.
    fn last_step(&self) -> Option<usize> {
        let (a, b, o, n) = (self.lo, self.hi, self.offset, self.words);
        if a >= b {
            None
        } else if o <= a {
            Some(b - 1 - o)
        } else if o >= b {
            Some(b - 1 + n - o)
        } else {
            Some(n - 1)
        }
    }
}

struct NeuronSpec {
    neuron: usize,
    engines: Vec<EngineSpec>,
    shares: usize,
    /// Share whose accumulator is preloaded with the biases.
    bias_share: usize,
    hops: u32,
}

fn engine_gates(kind: CellKind) -> &'static [(usize, Part)] {
    match kind {
        CellKind::Lstm => &[(0, Part::X), (0, Part::H), (1, Part::X), (1, Part::H), (2, Part::X), (2, Part::H), (3, Part::X), (3, Part::H)],
        // z, r on two full PEs; the candidate's x and h halves on one engine each
        CellKind::Gru => &[(0, Part::X), (0, Part::H), (1, Part::X), (1, Part::H), (2, Part::X), (2, Part::H)],
        CellKind::Vanilla => &[(0, Part::X), (0, Part::H)],
    }
}

fn neuron_specs(lp: &LayerPlacement, chains: &LayerChains) -> Vec<NeuronSpec> {
    let nx = lp.spec.inputs;
    let nh = lp.spec.neurons;
    let bias_at = nx + nh;
    lp.neurons
        .iter()
        .map(|np| {
            let mut engines = Vec::new();
            let mut bias_share = 0;
            for (s, share) in np.shares.iter().enumerate() {
                let (c0, c1) = share.chunk;
                if c0 <= bias_at && bias_at < c1 {
                    bias_share = s;
                }
                for &(gate, part) in engine_gates(lp.spec.cell_type) {
                    let (layout, lo, hi) = match part {
                        Part::X => (&chains.input, c0.min(nx), c1.min(nx)),
                        Part::H => (&chains.recurrent, c0.clamp(nx, bias_at) - nx, c1.clamp(nx, bias_at) - nx),
                    };
                    if lo >= hi {
                        continue;
                    }
                    let reader = layout.tile_reader[share.tile_index];
                    engines.push(EngineSpec {
                        share: s,
                        gate,
                        part,
                        lo,
                        hi,
                        reader,
                        offset: layout.segments[reader].offset,
                        words: layout.words,
                    });
                }
            }
            NeuronSpec { neuron: np.neuron, engines, shares: np.shares.len(), bias_share, hops: np.aggregation_hops }
        })
        .collect()
}

/// Closed-form cycle count for an error-free run of `timesteps` steps.
pub fn analytic_cycles(placement: &Placement) -> u64 {
    let hw = &placement.hardware;
    let act = placement.spec.activation_impl;
    let lat = hw.mac_latency();
    let interval = hw.mac_issue_interval;
    let per_layer: Vec<(u64, u64)> = placement
        .layers
        .iter()
        .map(|lp| {
            let chains = chain_plan(lp, hw);
            let specs = neuron_specs(lp, &chains);
            // (done, rewind_end) as offsets from the layer's start
            let read = hw.latency.read;
            let issue0 = |p: Part| {
                read + match p {
                    Part::X => chains.input.stall_cycles,
                    Part::H => chains.recurrent.stall_cycles,
                }
            };
            let finish = hw.finish_cycles(lp.spec.cell_type, act);
            let mut done = 0;
            let mut rewind = 0;
            for n in &specs {
                let mut pe_done = 0;
                for e in &n.engines {
                    if let Some(k) = e.last_step() {
                        let last_issue = issue0(e.part) + interval * k as u64;
                        pe_done = pe_done.max(last_issue + lat);
                        rewind = rewind.max(last_issue + hw.rewind.shifts(e.len()) * hw.latency.shift);
                    }
                }
                done = done.max(pe_done + u64::from(n.hops) * hw.aggregation_hop_cycles + finish);
            }
            (done + hw.latency.write, rewind)
        })
        .collect();
    let mut prev_t: Vec<(u64, u64)> = vec![(0, 0); per_layer.len()];
    let mut total = 0;
    for _ in 0..placement.spec.timesteps {
        let mut below = 0;
        for (l, &(done_off, rewind_off)) in per_layer.iter().enumerate() {
            let start = below.max(prev_t[l].0).max(prev_t[l].1);
            let done = start + done_off;
            prev_t[l] = (done, start + rewind_off);
            below = done;
            total = total.max(done);
        }
    }
    total
}

/// Per-run state of one MAC engine.
struct EngineRt {
    spec: EngineSpec,
    track: Option<WeightTrackGroup>,
    bit_streams: Vec<FaultStream>,
    mac_stream: Option<FaultStream>,
    pipe: MacPipeline,
}

struct NeuronRt {
    spec_index: usize,
    engines: Vec<EngineRt>,
    act_stream: Option<FaultStream>,
}

struct ChainRt {
    layout: ChainLayout,
    chain: InputTrackChain,
    /// `[segment][plane]` streams when input-chain faults are active.
    streams: Option<Vec<Vec<FaultStream>>>,
}

struct LayerRt {
    neurons: Vec<NeuronRt>,
    specs: Vec<NeuronSpec>,
    x: ChainRt,
    h: ChainRt,
    state: CellState,
}

/// Activation unit that counts evaluations and applies logic faults.
struct FaultyActivation<'a> {
    act: ActivationImpl,
    stream: Option<&'a mut FaultStream>,
    evals: u64,
    faults: u64,
}

impl FaultyActivation<'_> {
    fn out(&mut self, y: Fx) -> Fx {
        self.evals += 1;
        let fired = self.stream.as_mut().is_some_and(|s| s.next());
        if fired {
            self.faults += 1;
            y.shr(1)
        } else {
            y
        }
    }
}

impl ActivationUnit for FaultyActivation<'_> {
    fn sigmoid(&mut self, z: Fx) -> Fx {
        let y = self.act.sigmoid(z);
        self.out(y)
    }
    fn tanh(&mut self, z: Fx) -> Fx {
        let y = self.act.tanh(z);
        self.out(y)
    }
}

struct NeuronOut {
    h: Fx,
    c: Fx,
    done: u64,
    rewind_end: u64,
    weights: EventCounts,
    compute: EventCounts,
    faults: FaultSummary,
    events: Vec<TraceEvent>,
}

struct StepCtx<'a> {
    hw: &'a HardwareConfig,
    kind: CellKind,
    act: ActivationImpl,
    w: &'a LayerWeights<Fx>,
    x_obs: &'a [Vec<Fx>],
    h_obs: &'a [Vec<Fx>],
    issue0_x: u64,
    issue0_h: u64,
    c_prev: &'a [Fx],
    h_prev: &'a [Fx],
    region_bits: u16,
    edc_weights: bool,
    layer: usize,
    timestep: usize,
    trace: bool,
}

fn eval_neuron(rt: &mut NeuronRt, spec: &NeuronSpec, ctx: &StepCtx<'_>) -> Result<NeuronOut, CellError> {
    let j = spec.neuron;
    let hw = ctx.hw;
    let mut weights = EventCounts::default();
    let mut compute = EventCounts::default();
    let mut faults = FaultSummary::default();
    let mut events = Vec::new();
    let mut acc = vec![[[WideAccumulator::ZERO; 2]; 4]; spec.shares];
    for (g, gate) in ctx.w.gates.iter().enumerate() {
        acc[spec.bias_share][g][0] = WideAccumulator::from_fixed(gate.bias[j]);
    }
    let mut pe_done = 0;
    let mut rewind_end = 0;
    for e in &mut rt.engines {
        let s = e.spec;
        let (obs, issue0) = match s.part {
            Part::X => (&ctx.x_obs[s.reader], ctx.issue0_x),
            Part::H => (&ctx.h_obs[s.reader], ctx.issue0_h),
        };
        let gate = &ctx.w.gates[s.gate];
        let mut last_issue = 0;
        let mut last_done = 0;
        for (i, word) in s.order().enumerate() {
            let k = s.step_of(word) as u64;
            let cycle = issue0 + hw.mac_issue_interval * k;
            let stored = match s.part {
                Part::X => gate.w_x.get(j, word),
                Part::H => gate.w_h.get(j, word),
            };
            let weight = match e.track.as_mut() {
                Some(track) => {
                    let mut mask = 0u16;
                    if i > 0 {
                        for (b, stream) in e.bit_streams.iter_mut().enumerate() {
                            mask |= u16::from(stream.next()) << b;
                        }
                        mask &= ctx.region_bits;
                    }
                    if mask != 0 {
                        faults.weight_overshifts += u64::from(mask.count_ones());
                        if ctx.trace {
                            events.push(TraceEvent {
                                cycle,
                                layer: ctx.layer,
                                timestep: ctx.timestep,
                                kind: TraceKind::WeightOvershift,
                                detail: format!("neuron {j} gate {} word {word} mask {mask:#06x}", s.gate),
                            });
                        }
                    }
                    match track.fetch(mask, &mut weights) {
                        WeightOutcome::Ok(v) => v,
                        WeightOutcome::SubstitutedZero => {
                            faults.weight_zeroed += 1;
                            if ctx.trace {
                                events.push(TraceEvent {
                                    cycle,
                                    layer: ctx.layer,
                                    timestep: ctx.timestep,
                                    kind: TraceKind::WeightZeroed,
                                    detail: format!("neuron {j} gate {} word {word}", s.gate),
                                });
                            }
                            Fx::ZERO
                        }
                    }
                }
                None => {
                    weights.track_read += WORD_BITS as u64;
                    if i > 0 {
                        weights.track_shift += WORD_BITS as u64;
                    }
                    if ctx.edc_weights {
                        weights.edc_read += 1;
                    }
                    stored
                }
            };
            let mut product = i64::from(weight.raw()) * i64::from(obs[k as usize].raw());
            if let Some(stream) = e.mac_stream.as_mut() {
                if stream.next() {
                    product >>= 1;
                    faults.logic_faults += 1;
                }
            }
            last_done = e.pipe.issue_product(cycle, product)?;
            last_issue = cycle;
            compute.mac_issue += 1;
        }
        let idx = match s.part {
            Part::X => 0,
            Part::H => 1,
        };
        acc[s.share][s.gate][idx] = acc[s.share][s.gate][idx].add(e.pipe.drain());
        pe_done = pe_done.max(last_done);
        let shifts = match e.track.as_mut() {
            Some(track) => track.rewind(hw.rewind, &mut weights),
            None => {
                let n = hw.rewind.shifts(s.len());
                weights.track_shift += n * WORD_BITS as u64;
                n
            }
        };
        rewind_end = rewind_end.max(last_issue + shifts * hw.latency.shift);
    }

    let reduce = |g: usize, p: usize| {
        let partials: Vec<WideAccumulator> = acc.iter().map(|a| a[g][p]).collect();
        aggregate(&partials)
    };
    let first = reduce(0, 0);
    compute.aggregation_hop += first.transfers.len() as u64;
    let sum = |g: usize, p: usize| if (g, p) == (0, 0) { first.sum } else { reduce(g, p).sum };
    let mut unit = FaultyActivation { act: ctx.act, stream: rt.act_stream.as_mut(), evals: 0, faults: 0 };
    let (h, c) = match ctx.kind {
        CellKind::Lstm => {
            let pre = std::array::from_fn(|g| sum(g, 0).add(sum(g, 1)).narrow());
            let out = lstm_finish(pre, ctx.c_prev[j], &mut unit);
            (out.h, out.c)
        }
        CellKind::Gru => {
            let z = sum(0, 0).add(sum(0, 1)).narrow();
            let r = sum(1, 0).add(sum(1, 1)).narrow();
            (gru_finish(z, r, sum(2, 0), sum(2, 1), ctx.h_prev[j], &mut unit), ctx.c_prev[j])
        }
        CellKind::Vanilla => (vanilla_finish(sum(0, 0).add(sum(0, 1)).narrow(), &mut unit), ctx.c_prev[j]),
    };
    compute.nonlinear_eval += unit.evals;
    faults.logic_faults += unit.faults;
    let done = pe_done + u64::from(spec.hops) * hw.aggregation_hop_cycles + hw.finish_cycles(ctx.kind, ctx.act);
    Ok(NeuronOut { h, c, done, rewind_end, weights, compute, faults, events })
}

/// Trace sink for chain faults: events, first issue cycle, issue interval,
/// layer, timestep, recurrent chain.
type ChainTrace<'a> = (&'a mut Vec<TraceEvent>, u64, u64, usize, usize, bool);

/// Load a chain and rotate it once; returns the word each segment read at
/// every step.
#[allow(clippy::too_many_arguments)]
fn rotate_chain(
    rt: &mut ChainRt,
    words: &[Fx],
    region_bits: u16,
    counts: &mut EventCounts,
    faults: &mut FaultSummary,
    trace: Option<ChainTrace<'_>>,
) -> Vec<Vec<Fx>> {
    counts.track_write += (words.len() * WORD_BITS) as u64;
    rt.chain.load(words);
    let n_seg = rt.layout.segments.len();
    let cross = rt.layout.cross_group_links() as u64;
    let mut observed = vec![Vec::with_capacity(words.len()); n_seg];
    let mut trace = trace;
    for k in 0..words.len() {
        let streams = &mut rt.streams;
        let out = rt.chain.rotate_step(
            |g, b| match streams.as_mut() {
                Some(s) => s[g][b].next() && region_bits >> b & 1 == 1,
                None => false,
            },
            counts,
        );
        counts.interconnect_word += cross;
        for ev in &out.events {
            match ev.effect {
                ShiftEffect::Overshift => faults.input_overshifts += 1,
                ShiftEffect::Corrected => {
                    faults.input_overshifts += 1;
                    faults.input_corrected += 1;
                }
                _ => {}
            }
            if let Some((events, issue0, interval, layer, timestep, recurrent)) = trace.as_mut() {
                let kind = match ev.effect {
                    ShiftEffect::Overshift => TraceKind::InputOvershift,
                    ShiftEffect::Corrected => TraceKind::InputCorrected,
                    _ => continue,
                };
                let chain = if *recurrent { "h" } else { "x" };
                events.push(TraceEvent {
                    cycle: *issue0 + *interval * k as u64,
                    layer: *layer,
                    timestep: *timestep,
                    kind,
                    detail: format!("{chain} chain segment {} plane {}", ev.segment, ev.plane),
                });
            }
        }
        for (g, w) in out.words.into_iter().enumerate() {
            observed[g].push(w);
        }
    }
    observed
}

fn chain_rt(layout: ChainLayout, injector: &Injector, edc: bool, layer: usize, recurrent: bool) -> ChainRt {
    let chain = InputTrackChain::new(&layout.segment_words(), edc);
    let streams = injector.config().active(FaultSite::InputChains).then(|| {
        (0..layout.segments.len())
            .map(|segment| {
                (0..WORD_BITS)
                    .map(|plane| {
                        injector
                            .stream(FaultSite::InputChains, TrackKey::InputChain { layer, recurrent, segment, plane })
                            .expect("site active")
                    })
                    .collect()
            })
            .collect()
    });
    ChainRt { layout, chain, streams }
}

fn build_layer(
    l: usize,
    lp: &LayerPlacement,
    w: &LayerWeights<Fx>,
    hw: &HardwareConfig,
    injector: &Injector,
) -> LayerRt {
    let cfg = injector.config();
    let chains = chain_plan(lp, hw);
    let specs = neuron_specs(lp, &chains);
    let weight_faults = cfg.active(FaultSite::WeightArrays);
    let neurons = specs
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let j = n.neuron;
            let engines = n
                .engines
                .iter()
                .enumerate()
                .map(|(e, s)| {
                    let track = weight_faults.then(|| {
                        let gate = &w.gates[s.gate];
                        let values = s
                            .order()
                            .map(|word| match s.part {
                                Part::X => gate.w_x.get(j, word),
                                Part::H => gate.w_h.get(j, word),
                            })
                            .collect();
                        WeightTrackGroup::new(values, cfg.edc_weights)
                    });
                    let bit_streams = if weight_faults {
                        (0..WORD_BITS)
                            .filter_map(|bit| {
                                injector.stream(
                                    FaultSite::WeightArrays,
                                    TrackKey::Weight { layer: l, neuron: j, share: s.share, engine: e, bit },
                                )
                            })
                            .collect()
                    } else {
                        Vec::new()
                    };
                    let mac_stream = injector
                        .stream(FaultSite::Logic, TrackKey::Mac { layer: l, neuron: j, share: s.share, engine: e });
                    EngineRt {
                        spec: *s,
                        track,
                        bit_streams,
                        mac_stream,
                        pipe: MacPipeline::new(hw.mac_stages, hw.mac_cycles_per_stage, hw.mac_issue_interval),
                    }
                })
                .collect();
            let act_stream = injector.stream(FaultSite::Logic, TrackKey::Activation { layer: l, neuron: j });
            NeuronRt { spec_index: i, engines, act_stream }
        })
        .collect();
    LayerRt {
        neurons,
        specs,
        x: chain_rt(chains.input, injector, cfg.edc_inputs, l, false),
        h: chain_rt(chains.recurrent, injector, cfg.edc_inputs, l, true),
        state: CellState::zeros(lp.spec.neurons),
    }
}

fn check_shapes(placement: &Placement, weights: &[LayerWeights<Fx>], inputs: &[Vec<Fx>]) -> Result<(), SimError> {
    placement.spec.validate()?;
    if placement.layers.len() != weights.len() {
        return Err(SimError::LayerCount { placement: placement.layers.len(), weights: weights.len() });
    }
    for (l, (lp, w)) in placement.layers.iter().zip(weights).enumerate() {
        w.validate().map_err(|source| SimError::Weights { layer: l, source })?;
        let mismatch = |what, expected, got| SimError::Weights {
            layer: l,
            source: CellError::DimensionMismatch { what, expected, got },
        };
        if w.kind != lp.spec.cell_type {
            return Err(mismatch("cell kind gates", lp.spec.cell_type.gate_count(), w.kind.gate_count()));
        }
        if w.inputs() != lp.spec.inputs {
            return Err(mismatch("layer inputs", lp.spec.inputs, w.inputs()));
        }
        if w.neurons() != lp.spec.neurons {
            return Err(mismatch("layer neurons", lp.spec.neurons, w.neurons()));
        }
    }
    let expected = placement.spec.inputs();
    for (t, x) in inputs.iter().enumerate() {
        if x.len() != expected {
            return Err(SimError::InputShape { timestep: t, expected, got: x.len() });
        }
    }
    Ok(())
}

/// Run `inputs` (timestep-major) through the placed network.
pub fn simulate(
    placement: &Placement,
    weights: &[LayerWeights<Fx>],
    inputs: &[Vec<Fx>],
    error: &ErrorConfig,
) -> Result<RunResult, SimError> {
    simulate_traced(placement, weights, inputs, error, false)
}

pub fn simulate_traced(
    placement: &Placement,
    weights: &[LayerWeights<Fx>],
    inputs: &[Vec<Fx>],
    error: &ErrorConfig,
    trace: bool,
) -> Result<RunResult, SimError> {
    check_shapes(placement, weights, inputs)?;
    error.validate()?;
    let hw = &placement.hardware;
    let act = placement.spec.activation_impl;
    let injector = Injector::new(error);
    let region_bits = error.bit_region.bits();
    let mut layers: Vec<LayerRt> = placement
        .layers
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(l, (lp, w))| build_layer(l, lp, w, hw, &injector))
        .collect();

    let mut ledger = EnergyLedger::default();
    let mut faults = FaultSummary::default();
    let mut events = Vec::new();
    let mut timing = Vec::new();
    let mut outputs = vec![Vec::with_capacity(inputs.len()); layers.len()];
    let mut prev: Vec<(u64, u64)> = vec![(0, 0); layers.len()];
    let mut total_cycles = 0;
    let mut stall_cycles = 0;

    for (t, x_t) in inputs.iter().enumerate() {
        let mut feed = x_t.clone();
        let mut below_done = 0;
        for (l, rt) in layers.iter_mut().enumerate() {
            let lp = &placement.layers[l];
            let start = below_done.max(prev[l].0).max(prev[l].1);
            let stall_x = rt.x.layout.stall_cycles;
            let stall_h = rt.h.layout.stall_cycles;
            let issue0_x = start + hw.latency.read + stall_x;
            let issue0_h = start + hw.latency.read + stall_h;
            if trace {
                events.push(TraceEvent {
                    cycle: start,
                    layer: l,
                    timestep: t,
                    kind: TraceKind::LayerStart,
                    detail: String::new(),
                });
                if stall_x.max(stall_h) > 0 {
                    events.push(TraceEvent {
                        cycle: start + hw.latency.read,
                        layer: l,
                        timestep: t,
                        kind: TraceKind::ChainStall,
                        detail: format!("{} cycles", stall_x.max(stall_h)),
                    });
                }
            }
            let interval = hw.mac_issue_interval;
            let x_obs = rotate_chain(
                &mut rt.x,
                &feed,
                region_bits,
                &mut ledger.input_chains,
                &mut faults,
                trace.then_some((&mut events, issue0_x, interval, l, t, false)),
            );
            let h_prev = rt.state.h.clone();
            let h_obs = rotate_chain(
                &mut rt.h,
                &h_prev,
                region_bits,
                &mut ledger.recurrent_chains,
                &mut faults,
                trace.then_some((&mut events, issue0_h, interval, l, t, true)),
            );
            let ctx = StepCtx {
                hw,
                kind: lp.spec.cell_type,
                act,
                w: &weights[l],
                x_obs: &x_obs,
                h_obs: &h_obs,
                issue0_x,
                issue0_h,
                c_prev: &rt.state.c,
                h_prev: &h_prev,
                region_bits,
                edc_weights: error.edc_weights,
                layer: l,
                timestep: t,
                trace,
            };
            let specs = &rt.specs;
            let results: Vec<NeuronOut> = rt
                .neurons
                .par_iter_mut()
                .map(|n| eval_neuron(n, &specs[n.spec_index], &ctx))
                .collect::<Result<_, _>>()
                .map_err(SimError::Schedule)?;
            let mut h = vec![Fx::ZERO; lp.spec.neurons];
            let mut c = rt.state.c.clone();
            let mut done = 0;
            let mut rewind_end = 0;
            for (n, out) in rt.neurons.iter().zip(results) {
                let j = specs[n.spec_index].neuron;
                h[j] = out.h;
                c[j] = out.c;
                done = done.max(out.done);
                rewind_end = rewind_end.max(out.rewind_end);
                ledger.weight_arrays += out.weights;
                ledger.compute += out.compute;
                faults += out.faults;
                events.extend(out.events);
            }
            let done = done + hw.latency.write;
            if trace {
                events.push(TraceEvent { cycle: done, layer: l, timestep: t, kind: TraceKind::LayerDone, detail: String::new() });
            }
            let stall = stall_x.max(stall_h);
            stall_cycles += stall;
            timing.push(LayerStepTiming { layer: l, timestep: t, start, done, rewind_end, stall });
            prev[l] = (done, rewind_end);
            below_done = done;
            total_cycles = total_cycles.max(done);
            rt.state = CellState { h: h.clone(), c };
            outputs[l].push(h.clone());
            feed = h;
        }
    }
    events.sort_by_key(|e| e.cycle);
    let energy = energy_report(&ledger, &hw.energy);
    Ok(RunResult {
        outputs,
        total_cycles,
        total_energy_pj: energy.total_energy_pj,
        ledger,
        energy,
        timing,
        stall_cycles,
        faults,
        trace: events,
    })
}
