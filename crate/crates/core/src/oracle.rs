//! Floating-point reference cells with exact activations.
//!
//! Generic over any [`num_traits::Float`]; `f64` is the working reference.
//! Nothing here touches the fixed-point code paths.

use num_traits::Float;

use crate::lstm::{CellError, CellKind, GateWeights, LayerWeights};

fn sigmoid<F: Float>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

fn pre<F: Float>(g: &GateWeights<F>, j: usize, x: &[F], h: &[F]) -> F {
    let wx = g.w_x.row(j).iter().zip(x).fold(F::zero(), |a, (&w, &v)| a + w * v);
    let wh = g.w_h.row(j).iter().zip(h).fold(F::zero(), |a, (&w, &v)| a + w * v);
    g.bias[j] + wx + wh
}

fn dims<F: Float>(w: &LayerWeights<F>, kind: CellKind, x: &[F], h: &[F]) -> Result<(), CellError> {
    w.validate()?;
    let mismatch = |what, expected, got| Err(CellError::DimensionMismatch { what, expected, got });
    if w.kind != kind {
        return mismatch("cell kind", kind.gate_count(), w.kind.gate_count());
    }
    if x.len() != w.inputs() {
        return mismatch("input vector", w.inputs(), x.len());
    }
    if h.len() != w.neurons() {
        return mismatch("hidden vector", w.neurons(), h.len());
    }
    Ok(())
}

/// Returns `(h_t, c_t)`.
pub fn float_lstm_step<F: Float>(
    x: &[F],
    h_prev: &[F],
    c_prev: &[F],
    w: &LayerWeights<F>,
) -> Result<(Vec<F>, Vec<F>), CellError> {
    dims(w, CellKind::Lstm, x, h_prev)?;
    if c_prev.len() != w.neurons() {
        return Err(CellError::DimensionMismatch { what: "cell state", expected: w.neurons(), got: c_prev.len() });
    }
    Ok((0..w.neurons())
        .map(|j| {
            let i = sigmoid(pre(&w.gates[0], j, x, h_prev));
            let f = sigmoid(pre(&w.gates[1], j, x, h_prev));
            let o = sigmoid(pre(&w.gates[2], j, x, h_prev));
            let g = pre(&w.gates[3], j, x, h_prev).tanh();
            let c = f * c_prev[j] + i * g;
            (o * c.tanh(), c)
        })
        .unzip())
}

pub fn float_gru_step<F: Float>(x: &[F], h_prev: &[F], w: &LayerWeights<F>) -> Result<Vec<F>, CellError> {
    dims(w, CellKind::Gru, x, h_prev)?;
    Ok((0..w.neurons())
        .map(|j| {
            let z = sigmoid(pre(&w.gates[0], j, x, h_prev));
            let r = sigmoid(pre(&w.gates[1], j, x, h_prev));
            let g = &w.gates[2];
            let cx = pre(g, j, x, &[]);
            let ch = pre(g, j, &[], h_prev) - g.bias[j];
            let cand = (cx + r * ch).tanh();
            (F::one() - z) * h_prev[j] + z * cand
        })
        .collect())
}

pub fn float_vanilla_step<F: Float>(x: &[F], h_prev: &[F], w: &LayerWeights<F>) -> Result<Vec<F>, CellError> {
    dims(w, CellKind::Vanilla, x, h_prev)?;
    Ok((0..w.neurons()).map(|j| pre(&w.gates[0], j, x, h_prev).tanh()).collect())
}

/// Stacked network from zero state; output `[layer][timestep][neuron]`.
pub fn float_forward<F: Float>(layers: &[LayerWeights<F>], inputs: &[Vec<F>]) -> Result<Vec<Vec<Vec<F>>>, CellError> {
    let mut h: Vec<Vec<F>> = layers.iter().map(|l| vec![F::zero(); l.neurons()]).collect();
    let mut c = h.clone();
    let mut out = vec![Vec::with_capacity(inputs.len()); layers.len()];
    for x in inputs {
        let mut feed = x.clone();
        for (l, w) in layers.iter().enumerate() {
            match w.kind {
                CellKind::Lstm => {
                    let (nh, nc) = float_lstm_step(&feed, &h[l], &c[l], w)?;
                    h[l] = nh;
                    c[l] = nc;
                }
                CellKind::Gru => h[l] = float_gru_step(&feed, &h[l], w)?,
                CellKind::Vanilla => h[l] = float_vanilla_step(&feed, &h[l], w)?,
            }
            feed = h[l].clone();
            out[l].push(feed.clone());
        }
    }
    Ok(out)
}

/// Largest elementwise `|a - b|` over two equally shaped nests.
pub fn max_abs_diff(a: &[Vec<Vec<f64>>], b: &[Vec<Vec<f64>>]) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
