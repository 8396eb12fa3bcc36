//! Fixed-point recurrent cells and the compute blocks that evaluate them.
//!
//! A gate pre-activation is one wide accumulation of the bias, the input
//! dot product and the recurrent dot product, narrowed once. The cell
//! "finish" functions model the aggregation unit: activations, the cell
//! state update and the output product. They are shared by the monolithic
//! cell steps here and by the partitioned evaluation in the simulator.

use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{FixedQ8_8, WideAccumulator, FRAC_BITS};
use crate::nonlinear::ActivationImpl;

type Fx = FixedQ8_8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CellError {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("MAC issue at cycle {cycle} before the pipeline accepts input at {earliest}")]
    IssueTooSoon { cycle: u64, earliest: u64 },
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), CellError> {
    if expected == got {
        Ok(())
    } else {
        Err(CellError::DimensionMismatch { what, expected, got })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "LSTM", alias = "lstm")]
    Lstm,
    #[serde(rename = "GRU", alias = "gru")]
    Gru,
    #[serde(rename = "Vanilla", alias = "vanilla")]
    Vanilla,
}

impl CellKind {
    /// Gates in storage order: LSTM `[i, f, o, c]`, GRU `[z, r, h]`, Vanilla `[h]`.
    pub fn gate_count(self) -> usize {
        match self {
            Self::Lstm => 4,
            Self::Gru => 3,
            Self::Vanilla => 1,
        }
    }

    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            Self::Lstm => &["i", "f", "o", "c"],
            Self::Gru => &["z", "r", "h"],
            Self::Vanilla => &["h"],
        }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, CellError> {
        check("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols.max(1), k % cols.max(1))).collect();
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self
    where
        T: Zero,
    {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<U>(&self, f: impl FnMut(T) -> U) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().copied().map(f).collect() }
    }
}

/// Weights of one gate for every neuron of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateWeights<T> {
    /// neurons x inputs
    pub w_x: Matrix<T>,
    /// neurons x neurons
    pub w_h: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Copy> GateWeights<T> {
    pub fn neurons(&self) -> usize {
        self.w_x.rows()
    }

    pub fn inputs(&self) -> usize {
        self.w_x.cols()
    }

    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> GateWeights<U> {
        GateWeights { w_x: self.w_x.map(&mut f), w_h: self.w_h.map(&mut f), bias: self.bias.iter().copied().map(f).collect() }
    }

    /// Weight `k` of neuron `j` in the concatenated `[w_x | w_h | bias]` row.
    pub fn concat(&self, j: usize, k: usize) -> T {
        let nx = self.w_x.cols();
        let nh = self.w_h.cols();
        if k < nx {
            self.w_x.get(j, k)
        } else if k < nx + nh {
            self.w_h.get(j, k - nx)
        } else {
            self.bias[j]
        }
    }

    pub fn zeros(inputs: usize, neurons: usize) -> Self
    where
        T: Zero,
    {
        Self { w_x: Matrix::zeros(neurons, inputs), w_h: Matrix::zeros(neurons, neurons), bias: vec![T::zero(); neurons] }
    }
}

/// All gate weights of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights<T> {
    pub kind: CellKind,
    pub gates: Vec<GateWeights<T>>,
}

impl<T: Copy> LayerWeights<T> {
    pub fn new(kind: CellKind, gates: Vec<GateWeights<T>>) -> Result<Self, CellError> {
        let layer = Self { kind, gates };
        layer.validate()?;
        Ok(layer)
    }

    pub fn zeros(kind: CellKind, inputs: usize, neurons: usize) -> Self
    where
        T: Zero,
    {
        Self { kind, gates: (0..kind.gate_count()).map(|_| GateWeights::zeros(inputs, neurons)).collect() }
    }

    pub fn validate(&self) -> Result<(), CellError> {
        check("gate count", self.kind.gate_count(), self.gates.len())?;
        let n = self.neurons();
        let nx = self.inputs();
        for g in &self.gates {
            check("gate neurons", n, g.w_x.rows())?;
            check("gate inputs", nx, g.w_x.cols())?;
            check("recurrent rows", n, g.w_h.rows())?;
            check("recurrent cols", n, g.w_h.cols())?;
            check("bias length", n, g.bias.len())?;
        }
        Ok(())
    }

    pub fn neurons(&self) -> usize {
        self.gates.first().map_or(0, |g| g.neurons())
    }

    pub fn inputs(&self) -> usize {
        self.gates.first().map_or(0, |g| g.inputs())
    }

    pub fn map<U>(&self, mut f: impl FnMut(T) -> U) -> LayerWeights<U> {
        LayerWeights { kind: self.kind, gates: self.gates.iter().map(|g| g.map(&mut f)).collect() }
    }

    /// Flatten gate-major, then row-major over `[w_x | w_h | bias]` rows.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for g in &self.gates {
            for j in 0..g.neurons() {
                out.extend_from_slice(g.w_x.row(j));
                out.extend_from_slice(g.w_h.row(j));
                out.push(g.bias[j]);
            }
        }
        out
    }

    /// Inverse of [`LayerWeights::flatten`].
    pub fn unflatten(kind: CellKind, inputs: usize, neurons: usize, values: &[T]) -> Result<Self, CellError> {
        let row = inputs + neurons + 1;
        check("layer weight count", kind.gate_count() * neurons * row, values.len())?;
        let gates = values
            .chunks_exact((neurons * row).max(1))
            .take(kind.gate_count())
            .map(|gate| {
                let rows: Vec<&[T]> = gate.chunks_exact(row).collect();
                GateWeights {
                    w_x: Matrix::from_fn(neurons, inputs, |j, k| rows[j][k]),
                    w_h: Matrix::from_fn(neurons, neurons, |j, k| rows[j][inputs + k]),
                    bias: rows.iter().map(|r| r[inputs + neurons]).collect(),
                }
            })
            .collect::<Vec<_>>();
        if neurons == 0 {
            return Ok(Self::zeros_like(kind, inputs));
        }
        Self::new(kind, gates)
    }

    fn zeros_like(kind: CellKind, inputs: usize) -> Self {
        Self {
            kind,
            gates: (0..kind.gate_count())
                .map(|_| GateWeights {
                    w_x: Matrix { rows: 0, cols: inputs, data: Vec::new() },
                    w_h: Matrix { rows: 0, cols: 0, data: Vec::new() },
                    bias: Vec::new(),
                })
                .collect(),
        }
    }
}

impl LayerWeights<Fx> {
    /// Weights with raw values drawn uniformly from `[-scale, scale]`,
    /// so the fixed-point and real views hold the same numbers.
    pub fn random<R: Rng + ?Sized>(kind: CellKind, inputs: usize, neurons: usize, scale: f64, rng: &mut R) -> Self {
        let bound = (scale * f64::from(1u32 << FRAC_BITS)).round() as i16;
        let mut draw = |_, _| Fx::from_raw(rng.random_range(-bound..=bound));
        let gates = (0..kind.gate_count())
            .map(|_| GateWeights {
                w_x: Matrix::from_fn(neurons, inputs, &mut draw),
                w_h: Matrix::from_fn(neurons, neurons, &mut draw),
                bias: (0..neurons).map(|j| draw(j, 0)).collect(),
            })
            .collect();
        Self { kind, gates }
    }

    pub fn to_real(&self) -> LayerWeights<f64> {
        self.map(Fx::to_real)
    }
}

impl LayerWeights<f64> {
    pub fn quantize(&self) -> LayerWeights<Fx> {
        self.map(Fx::from_real)
    }
}

/// Evaluates sigmoid and tanh for an aggregation unit.
pub trait ActivationUnit {
    fn sigmoid(&mut self, z: Fx) -> Fx;
    fn tanh(&mut self, z: Fx) -> Fx;
}

impl ActivationUnit for ActivationImpl {
    fn sigmoid(&mut self, z: Fx) -> Fx {
        ActivationImpl::sigmoid(*self, z)
    }
    fn tanh(&mut self, z: Fx) -> Fx {
        ActivationImpl::tanh(*self, z)
    }
}

/// `bias + w_x·x + w_h·h` for neuron `j`, unrounded.
pub fn gate_accumulate(g: &GateWeights<Fx>, j: usize, x: &[Fx], h: &[Fx]) -> WideAccumulator {
    let acc = WideAccumulator::from_fixed(g.bias[j]);
    let acc = g.w_x.row(j).iter().zip(x).fold(acc, |a, (&w, &v)| a.mac(w, v));
    g.w_h.row(j).iter().zip(h).fold(acc, |a, (&w, &v)| a.mac(w, v))
}

/// Gate activations and new state of one LSTM neuron.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmNeuronOut {
    pub i: Fx,
    pub f: Fx,
    pub o: Fx,
    pub g: Fx,
    pub c: Fx,
    pub h: Fx,
}

/// Aggregation-unit finish for LSTM. `pre` holds the narrowed `[i, f, o, c]`
/// pre-activations. The two multipliers form `f⊙c_prev + i⊙g` (summed wide)
/// and then `o⊙tanh(c)`.
pub fn lstm_finish(pre: [Fx; 4], c_prev: Fx, act: &mut impl ActivationUnit) -> LstmNeuronOut {
    let i = act.sigmoid(pre[0]);
    let f = act.sigmoid(pre[1]);
    let o = act.sigmoid(pre[2]);
    let g = act.tanh(pre[3]);
    let c = WideAccumulator::ZERO.mac(f, c_prev).mac(i, g).narrow();
    let h = o * act.tanh(c);
    LstmNeuronOut { i, f, o, g, c, h }
}

/// Aggregation-unit finish for GRU: `h̃ = tanh(Wx·x + b + r⊙(Wh·h))`,
/// `h = (1 - z)⊙h_prev + z⊙h̃`.
pub fn gru_finish(
    pre_z: Fx,
    pre_r: Fx,
    candidate_x: WideAccumulator,
    candidate_h: WideAccumulator,
    h_prev: Fx,
    act: &mut impl ActivationUnit,
) -> Fx {
    let z = act.sigmoid(pre_z);
    let r = act.sigmoid(pre_r);
    let candidate = act.tanh(candidate_x.mac(r, candidate_h.narrow()).narrow());
    WideAccumulator::ZERO.mac(Fx::ONE - z, h_prev).mac(z, candidate).narrow()
}

pub fn vanilla_finish(pre: Fx, act: &mut impl ActivationUnit) -> Fx {
    act.tanh(pre)
}

fn check_step(w: &LayerWeights<Fx>, kind: CellKind, x: &[Fx], h_prev: &[Fx]) -> Result<(), CellError> {
    w.validate()?;
    check("cell kind", kind.gate_count(), w.kind.gate_count())?;
    check("input vector", w.inputs(), x.len())?;
    check("hidden vector", w.neurons(), h_prev.len())
}

/// One LSTM time step for a whole layer. Returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    x: &[Fx],
    h_prev: &[Fx],
    c_prev: &[Fx],
    w: &LayerWeights<Fx>,
    act: ActivationImpl,
) -> Result<(Vec<Fx>, Vec<Fx>), CellError> {
    check_step(w, CellKind::Lstm, x, h_prev)?;
    check("cell state", w.neurons(), c_prev.len())?;
    let mut unit = act;
    let (h, c) = (0..w.neurons())
        .map(|j| {
            let pre = std::array::from_fn(|g| gate_accumulate(&w.gates[g], j, x, h_prev).narrow());
            let out = lstm_finish(pre, c_prev[j], &mut unit);
            (out.h, out.c)
        })
        .unzip();
    Ok((h, c))
}

pub fn gru_cell_step(x: &[Fx], h_prev: &[Fx], w: &LayerWeights<Fx>, act: ActivationImpl) -> Result<Vec<Fx>, CellError> {
    check_step(w, CellKind::Gru, x, h_prev)?;
    let mut unit = act;
    Ok((0..w.neurons())
        .map(|j| {
            let z = gate_accumulate(&w.gates[0], j, x, h_prev).narrow();
            let r = gate_accumulate(&w.gates[1], j, x, h_prev).narrow();
            let cand = &w.gates[2];
            let cx = gate_accumulate(cand, j, x, &[]);
            let ch = cand.w_h.row(j).iter().zip(h_prev).fold(WideAccumulator::ZERO, |a, (&w, &v)| a.mac(w, v));
            gru_finish(z, r, cx, ch, h_prev[j], &mut unit)
        })
        .collect())
}

pub fn vanilla_cell_step(x: &[Fx], h_prev: &[Fx], w: &LayerWeights<Fx>, act: ActivationImpl) -> Result<Vec<Fx>, CellError> {
    check_step(w, CellKind::Vanilla, x, h_prev)?;
    let mut unit = act;
    Ok((0..w.neurons()).map(|j| vanilla_finish(gate_accumulate(&w.gates[0], j, x, h_prev).narrow(), &mut unit)).collect())
}

/// Recurrent state of one layer. `c` is only meaningful for LSTM layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellState {
    pub h: Vec<Fx>,
    pub c: Vec<Fx>,
}

impl CellState {
    pub fn zeros(neurons: usize) -> Self {
        Self { h: vec![Fx::ZERO; neurons], c: vec![Fx::ZERO; neurons] }
    }
}

pub fn layer_step(w: &LayerWeights<Fx>, x: &[Fx], state: &CellState, act: ActivationImpl) -> Result<CellState, CellError> {
    match w.kind {
        CellKind::Lstm => {
            let (h, c) = lstm_cell_step(x, &state.h, &state.c, w, act)?;
            Ok(CellState { h, c })
        }
        CellKind::Gru => Ok(CellState { h: gru_cell_step(x, &state.h, w, act)?, c: state.c.clone() }),
        CellKind::Vanilla => Ok(CellState { h: vanilla_cell_step(x, &state.h, w, act)?, c: state.c.clone() }),
    }
}

/// Run a stacked network from zero state. Output is indexed
/// `[layer][timestep][neuron]`.
pub fn network_forward(
    layers: &[LayerWeights<Fx>],
    inputs: &[Vec<Fx>],
    act: ActivationImpl,
) -> Result<Vec<Vec<Vec<Fx>>>, CellError> {
    let mut states: Vec<CellState> = layers.iter().map(|l| CellState::zeros(l.neurons())).collect();
    let mut outputs = vec![Vec::with_capacity(inputs.len()); layers.len()];
    for x in inputs {
        let mut feed = x.clone();
        for (l, w) in layers.iter().enumerate() {
            states[l] = layer_step(w, &feed, &states[l], act)?;
            feed = states[l].h.clone();
            outputs[l].push(feed.clone());
        }
    }
    Ok(outputs)
}

/// A MAC engine: 48 stages of 2 cycles, one issue every 2 cycles.
#[derive(Clone, Debug)]
pub struct MacPipeline {
    latency: u64,
    issue_interval: u64,
    last_issue: Option<u64>,
    acc: WideAccumulator,
    issued: u64,
    last_completion: Option<u64>,
}

pub const MAC_STAGES: u64 = 48;
pub const MAC_CYCLES_PER_STAGE: u64 = 2;
pub const MAC_LATENCY: u64 = MAC_STAGES * MAC_CYCLES_PER_STAGE;
pub const MAC_ISSUE_INTERVAL: u64 = 2;

impl Default for MacPipeline {
    fn default() -> Self {
        Self::new(MAC_STAGES, MAC_CYCLES_PER_STAGE, MAC_ISSUE_INTERVAL)
    }
}

impl MacPipeline {
    pub fn new(stages: u64, cycles_per_stage: u64, issue_interval: u64) -> Self {
        Self {
            latency: stages * cycles_per_stage,
            issue_interval,
            last_issue: None,
            acc: WideAccumulator::ZERO,
            issued: 0,
            last_completion: None,
        }
    }

    pub fn latency(&self) -> u64 {
        self.latency
    }

    pub fn issue_interval(&self) -> u64 {
        self.issue_interval
    }

    /// Issue `a * b` at `cycle`; returns the completion cycle.
    pub fn issue(&mut self, cycle: u64, a: Fx, b: Fx) -> Result<u64, CellError> {
        self.issue_product(cycle, i64::from(a.raw()) * i64::from(b.raw()))
    }

    /// Issue an already-formed product (the fault path perturbs it).
    pub fn issue_product(&mut self, cycle: u64, product: i64) -> Result<u64, CellError> {
        if let Some(last) = self.last_issue {
            let earliest = last + self.issue_interval;
            if cycle < earliest {
                return Err(CellError::IssueTooSoon { cycle, earliest });
            }
        }
        self.last_issue = Some(cycle);
        self.acc = self.acc.add_raw(product);
        self.issued += 1;
        let done = cycle + self.latency;
        self.last_completion = Some(done);
        Ok(done)
    }

    /// Seed the accumulator (bias preload).
    pub fn preload(&mut self, value: WideAccumulator) {
        self.acc = self.acc.add(value);
    }

    pub fn accumulator(&self) -> WideAccumulator {
        self.acc
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn last_completion(&self) -> Option<u64> {
        self.last_completion
    }

    /// Clear the accumulator for the next time step; issue timing persists.
    pub fn drain(&mut self) -> WideAccumulator {
        std::mem::take(&mut self.acc)
    }
}

/// Radix-4 Booth recoding of a 16-bit multiplier into 8 digits in `[-2, 2]`.
/// One decoder output can drive several multiplicands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoothDecoder {
    digits: [i8; 8],
}

impl BoothDecoder {
    pub fn new(multiplier: Fx) -> Self {
        let y = u32::from(multiplier.bits());
        let bit = |i: i32| -> i8 {
            if i < 0 {
                0
            } else {
                ((y >> i) & 1) as i8
            }
        };
        let digits = std::array::from_fn(|k| {
            let i = 2 * k as i32;
            -2 * bit(i + 1) + bit(i) + bit(i - 1)
        });
        Self { digits }
    }

    pub fn digits(&self) -> [i8; 8] {
        self.digits
    }

    /// Sum of shifted partial products; the exact 32-bit product.
    pub fn product(&self, multiplicand: Fx) -> i64 {
        let a = i64::from(multiplicand.raw());
        self.digits
            .iter()
            .enumerate()
            .map(|(k, &d)| {
                let partial = match d {
                    0 => 0,
                    1 => a,
                    -1 => -a,
                    2 => a << 1,
                    -2 => -(a << 1),
                    _ => unreachable!("radix-4 digit out of range"),
                };
                partial << (2 * k)
            })
            .sum()
    }

    /// Product rounded and saturated to Q8.8.
    pub fn multiply(&self, multiplicand: Fx) -> Fx {
        WideAccumulator::from_raw(self.product(multiplicand)).narrow()
    }
}

/// Booth multiply with the same rounding and saturation as `a * b`.
pub fn booth_multiply(a: Fx, b: Fx) -> Fx {
    BoothDecoder::new(b).multiply(a)
}

/// One transfer between aggregation units during reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggregationTransfer {
    pub round: u32,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Aggregation {
    pub sum: WideAccumulator,
    pub hops: u32,
    pub transfers: Vec<AggregationTransfer>,
}

/// Number of reduction rounds for `k` units: `ceil(log2 k)`.
pub fn aggregation_hops(k: usize) -> u32 {
    if k <= 1 {
        0
    } else {
        usize::BITS - (k - 1).leading_zeros()
    }
}

/// Reduce per-unit partial sums toward the leftmost unit (index 0).
///
/// In round `r`, units are grouped with stride `2^r`; among the active
/// units the even-indexed ones consume the result arriving from their
/// right neighbor and the odd-indexed ones forward theirs.
pub fn aggregate(partials: &[WideAccumulator]) -> Aggregation {
    let mut values = partials.to_vec();
    let mut transfers = Vec::new();
    let hops = aggregation_hops(partials.len());
    for round in 0..hops {
        let stride = 1usize << round;
        let mut i = 0;
        while i + stride < values.len() {
            values[i] = values[i].add(values[i + stride]);
            transfers.push(AggregationTransfer { round, from: i + stride, to: i });
            i += 2 * stride;
        }
    }
    Aggregation { sum: values.first().copied().unwrap_or_default(), hops, transfers }
}

/// Convenience form over narrowed partials.
pub fn aggregate_fixed(partials: &[Fx]) -> (Fx, u32) {
    let wide: Vec<_> = partials.iter().map(|&p| WideAccumulator::from_fixed(p)).collect();
    let agg = aggregate(&wide);
    (agg.sum.narrow(), agg.hops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn q(x: f64) -> Fx {
        Fx::from_real(x)
    }

    #[test]
    fn zero_weight_lstm_closed_form() {
        let w = LayerWeights::<Fx>::zeros(CellKind::Lstm, 3, 2);
        let c_prev = vec![q(1.5), q(-0.75)];
        let (h, c) = lstm_cell_step(&[q(0.3); 3], &[q(0.1); 2], &c_prev, &w, ActivationImpl::Approx).unwrap();
        for j in 0..2 {
            let half_c = q(0.5) * c_prev[j];
            assert_eq!(c[j], half_c);
            assert_eq!(h[j], q(0.5) * ActivationImpl::Approx.tanh(half_c));
        }
    }

    #[test]
    fn negative_bias_gates() {
        let mut w = LayerWeights::<Fx>::zeros(CellKind::Lstm, 2, 1);
        for g in &mut w.gates {
            g.bias[0] = q(-1.0);
        }
        let mut unit = ActivationImpl::Approx;
        let pre = std::array::from_fn(|g| gate_accumulate(&w.gates[g], 0, &[Fx::ZERO; 2], &[Fx::ZERO]).narrow());
        let out = lstm_finish(pre, Fx::ZERO, &mut unit);
        assert_eq!((out.i, out.f, out.o), (q(0.25), q(0.25), q(0.25)));
    }

    #[test]
    fn zero_weight_gru_and_vanilla() {
        let w = LayerWeights::<Fx>::zeros(CellKind::Gru, 4, 3);
        let h_prev = vec![q(0.5), q(-1.0), q(0.25)];
        let h = gru_cell_step(&[q(1.0); 4], &h_prev, &w, ActivationImpl::Approx).unwrap();
        assert_eq!(h, h_prev.iter().map(|&v| q(0.5) * v).collect::<Vec<_>>());
        let w = LayerWeights::<Fx>::zeros(CellKind::Vanilla, 4, 3);
        let h = vanilla_cell_step(&[q(1.0); 4], &h_prev, &w, ActivationImpl::Lut).unwrap();
        assert_eq!(h, vec![ActivationImpl::Lut.tanh(Fx::ZERO); 3]);
    }

    #[test]
    fn dimension_errors() {
        let w = LayerWeights::<Fx>::zeros(CellKind::Lstm, 3, 2);
        let err = lstm_cell_step(&[Fx::ZERO; 2], &[Fx::ZERO; 2], &[Fx::ZERO; 2], &w, ActivationImpl::Approx);
        assert_eq!(err, Err(CellError::DimensionMismatch { what: "input vector", expected: 3, got: 2 }));
        assert!(gru_cell_step(&[Fx::ZERO; 3], &[Fx::ZERO; 2], &w, ActivationImpl::Approx).is_err());
        let mut bad = LayerWeights::<Fx>::zeros(CellKind::Vanilla, 3, 2);
        bad.gates[0].bias.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LayerWeights::random(CellKind::Gru, 5, 4, 1.0, &mut rng);
        let flat = w.flatten();
        assert_eq!(flat.len(), 3 * 4 * (5 + 4 + 1));
        assert_eq!(LayerWeights::unflatten(CellKind::Gru, 5, 4, &flat).unwrap(), w);
        assert!(LayerWeights::unflatten(CellKind::Gru, 5, 4, &flat[1..]).is_err());
    }

    #[test]
    fn mac_pipeline_timing() {
        let mut p = MacPipeline::default();
        assert_eq!(p.issue(0, q(1.0), q(2.0)), Ok(96));
        assert_eq!(p.issue(2, q(1.0), q(2.0)), Ok(98));
        assert_eq!(p.issue(4, q(1.0), q(2.0)), Ok(100));
        assert_eq!(p.issue(5, q(1.0), q(2.0)), Err(CellError::IssueTooSoon { cycle: 5, earliest: 6 }));
        assert_eq!(p.accumulator().narrow(), q(6.0));
        let mut p = MacPipeline::default();
        p.issue(0, q(1.0), q(1.0)).unwrap();
        assert!(p.issue(1, q(1.0), q(1.0)).is_err());
    }

    #[test]
    fn mac_value_independent_of_schedule() {
        let pairs: Vec<(Fx, Fx)> = (0..20).map(|i| (q(i as f64 * 0.1 - 1.0), q(0.5 - i as f64 * 0.03))).collect();
        let mut fast = MacPipeline::default();
        let mut slow = MacPipeline::default();
        for (k, &(a, b)) in pairs.iter().enumerate() {
            fast.issue(2 * k as u64, a, b).unwrap();
            slow.issue(7 * k as u64 + 3, a, b).unwrap();
        }
        let (xs, ys): (Vec<Fx>, Vec<Fx>) = pairs.into_iter().unzip();
        assert_eq!(fast.accumulator(), slow.accumulator());
        assert_eq!(fast.accumulator(), crate::fixedpoint::dot(&xs, &ys));
    }

    #[test]
    fn booth_identities() {
        for raw in i16::MIN..=i16::MAX {
            let x = Fx::from_raw(raw);
            assert_eq!(booth_multiply(x, Fx::ZERO), Fx::ZERO);
            assert_eq!(booth_multiply(x, Fx::ONE), x);
        }
    }

    #[test]
    fn booth_decoder_shared() {
        let dec = BoothDecoder::new(q(-1.75));
        for a in [q(0.5), q(-3.0), q(100.0), Fx::MIN] {
            assert_eq!(dec.multiply(a), a * q(-1.75));
        }
        assert!(dec.digits().iter().all(|d| (-2..=2).contains(d)));
    }

    #[test]
    fn aggregation_examples() {
        let one = aggregate_fixed(&[q(3.5)]);
        assert_eq!(one, (q(3.5), 0));
        let four = aggregate_fixed(&[q(1.0), q(2.0), q(3.0), q(4.0)]);
        assert_eq!(four, (q(10.0), 2));
        assert_eq!(aggregation_hops(3), 2);
        assert_eq!(aggregation_hops(5), 3);
        assert_eq!(aggregation_hops(8), 3);
        let agg = aggregate(&[WideAccumulator::ZERO; 4]);
        // round 0: 1->0, 3->2; round 1: 2->0
        let t: Vec<_> = agg.transfers.iter().map(|t| (t.round, t.from, t.to)).collect();
        assert_eq!(t, vec![(0, 1, 0), (0, 3, 2), (1, 2, 0)]);
        assert!(agg.transfers.iter().all(|t| (t.to >> t.round) % 2 == 0 && (t.from >> t.round) % 2 == 1));
    }

    #[test]
    fn network_forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layers = vec![
            LayerWeights::random(CellKind::Lstm, 3, 4, 0.5, &mut rng),
            LayerWeights::random(CellKind::Vanilla, 4, 2, 0.5, &mut rng),
        ];
        let inputs = vec![vec![q(0.5); 3]; 5];
        let out = network_forward(&layers, &inputs, ActivationImpl::Approx).unwrap();
        assert_eq!((out.len(), out[0].len(), out[0][0].len(), out[1][0].len()), (2, 5, 4, 2));
    }
}
