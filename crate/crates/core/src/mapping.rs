//! Placement of a logical network onto tiles, LSTM units and PEs.
//!
//! Geometry: `groups` tile groups, each with `rows_per_group` rows of
//! `tiles_per_row` tiles of `lstm_units_per_tile` units. Layer `l` occupies
//! row `l`. A layer that does not fit in one row is split evenly across as
//! many groups as it needs, always in the same row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::{EnergyTable, LatencyTable};
use crate::lstm::{aggregation_hops, CellKind, MAC_CYCLES_PER_STAGE, MAC_ISSUE_INTERVAL, MAC_STAGES};
use crate::nonlinear::ActivationImpl;
use crate::racetrack::RewindCost;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub cell_type: CellKind,
    pub neurons: usize,
    pub inputs: usize,
}

impl LayerSpec {
    /// Weights one gate of one neuron needs: inputs, recurrent inputs, bias.
    pub fn weights_per_gate(&self) -> usize {
        self.inputs + self.neurons + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub timesteps: usize,
    #[serde(default)]
    pub activation_impl: ActivationImpl,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> SpecError {
    SpecError::Invalid { field: field.into(), message: message.into() }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.neurons == 0 {
                return Err(invalid(format!("network.layers[{l}].neurons"), "must be positive"));
            }
            if layer.inputs == 0 {
                return Err(invalid(format!("network.layers[{l}].inputs"), "must be positive"));
            }
            if l > 0 && layer.inputs != self.layers[l - 1].neurons {
                return Err(invalid(
                    format!("network.layers[{l}].inputs"),
                    format!("expected {} (neurons of layer {})", self.layers[l - 1].neurons, l - 1),
                ));
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }
}

/// Hardware resources and timing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareConfig {
    pub lstm_units_per_tile: usize,
    pub pes_per_unit: usize,
    pub weights_per_pe: usize,
    pub tiles_per_row: usize,
    pub rows_per_group: usize,
    pub groups: usize,
    /// Words per input-chain track segment.
    pub chain_segment_words: usize,
    pub interconnect_latency_cycles: u64,
    /// Look-ahead of cross-group chain links; defaults to the interconnect latency.
    pub lookahead_cycles: Option<u64>,
    pub aggregation_hop_cycles: u64,
    pub multiplier_cycles: u64,
    pub sigmoid_approx_cycles: u64,
    pub lut_cycles: u64,
    pub mac_stages: u64,
    pub mac_cycles_per_stage: u64,
    pub mac_issue_interval: u64,
    pub rewind: RewindCost,
    pub latency: LatencyTable,
    pub energy: EnergyTable,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            lstm_units_per_tile: 64,
            pes_per_unit: 4,
            weights_per_pe: 1640,
            tiles_per_row: 16,
            rows_per_group: 4,
            groups: 16,
            chain_segment_words: 64,
            interconnect_latency_cycles: 4,
            lookahead_cycles: None,
            aggregation_hop_cycles: 2,
            multiplier_cycles: 2,
            sigmoid_approx_cycles: 16,
            lut_cycles: 8,
            mac_stages: MAC_STAGES,
            mac_cycles_per_stage: MAC_CYCLES_PER_STAGE,
            mac_issue_interval: MAC_ISSUE_INTERVAL,
            rewind: RewindCost::PerWeight,
            latency: LatencyTable::default(),
            energy: EnergyTable::default(),
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<(), SpecError> {
        let counts = [
            ("lstm_units_per_tile", self.lstm_units_per_tile),
            ("pes_per_unit", self.pes_per_unit),
            ("weights_per_pe", self.weights_per_pe),
            ("tiles_per_row", self.tiles_per_row),
            ("rows_per_group", self.rows_per_group),
            ("groups", self.groups),
            ("chain_segment_words", self.chain_segment_words),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(invalid(format!("hardware.{name}"), "must be positive"));
            }
        }
        if self.pes_per_unit != 4 {
            return Err(invalid("hardware.pes_per_unit", "the LSTM unit is built from exactly 4 PEs"));
        }
        if self.mac_issue_interval == 0 || self.mac_stages == 0 || self.mac_cycles_per_stage == 0 {
            return Err(invalid("hardware.mac_*", "pipeline parameters must be positive"));
        }
        Ok(())
    }

    pub fn units_per_row(&self) -> usize {
        self.tiles_per_row * self.lstm_units_per_tile
    }

    pub fn total_units(&self) -> usize {
        self.groups * self.rows_per_group * self.units_per_row()
    }

    pub fn mac_latency(&self) -> u64 {
        self.mac_stages * self.mac_cycles_per_stage
    }

    pub fn lookahead(&self) -> u64 {
        self.lookahead_cycles.unwrap_or(self.interconnect_latency_cycles)
    }

    pub fn activation_cycles(&self, act: ActivationImpl) -> u64 {
        match act {
            ActivationImpl::Approx => self.sigmoid_approx_cycles,
            ActivationImpl::Lut => self.lut_cycles,
        }
    }

    /// Aggregation-unit latency from the reduced sums to `h_t`.
    pub fn finish_cycles(&self, kind: CellKind, act: ActivationImpl) -> u64 {
        let a = self.activation_cycles(act);
        match kind {
            CellKind::Lstm | CellKind::Gru => 2 * a + 2 * self.multiplier_cycles,
            CellKind::Vanilla => a,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MappingError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(Shortfall),
}

/// Structured report of why a network does not fit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub layer: usize,
    pub reason: String,
    pub required: usize,
    pub available: usize,
}

impl std::fmt::Display for Shortfall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "layer {}: {} (required {}, available {})", self.layer, self.reason, self.required, self.available)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileLoc {
    pub group: usize,
    pub row: usize,
    pub tile: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitLoc {
    pub tile: TileLoc,
    pub unit: usize,
}

/// Work held by one LSTM unit for one neuron.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitShare {
    pub unit: UnitLoc,
    /// Index into the layer's tile list, used to find the reader chain segment.
    pub tile_index: usize,
    /// PE slots used on this unit (all four, or one for a packed Vanilla neuron).
    pub pes: Vec<usize>,
    /// Half-open range into the concatenated `[x | h | bias]` weight row.
    pub chunk: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronPlacement {
    pub neuron: usize,
    /// Leftmost first; the leftmost unit produces the final result.
    pub shares: Vec<UnitShare>,
    pub aggregation_hops: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerPlacement {
    pub layer: usize,
    pub spec: LayerSpec,
    pub row: usize,
    pub groups: Vec<usize>,
    /// Tiles used, in chain order.
    pub tiles: Vec<TileLoc>,
    pub units_used: usize,
    pub units_per_neuron: usize,
    pub neurons_per_unit: usize,
    pub neurons: Vec<NeuronPlacement>,
}

impl LayerPlacement {
    pub fn has_aggregation_trees(&self) -> bool {
        self.neurons.iter().any(|n| n.shares.len() > 1)
    }

    pub fn max_aggregation_hops(&self) -> u32 {
        self.neurons.iter().map(|n| n.aggregation_hops).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub spec: NetworkSpec,
    pub hardware: HardwareConfig,
    pub layers: Vec<LayerPlacement>,
}

impl Placement {
    pub fn units_used(&self) -> usize {
        self.layers.iter().map(|l| l.units_used).sum()
    }
}

/// Place `spec` onto `hw`, left to right within each row.
pub fn map_network(spec: &NetworkSpec, hw: &HardwareConfig) -> Result<Placement, MappingError> {
    spec.validate()?;
    hw.validate()?;
    if spec.layers.len() > hw.rows_per_group {
        return Err(MappingError::CapacityExceeded(Shortfall {
            layer: hw.rows_per_group,
            reason: "more layers than rows in a tile group".into(),
            required: spec.layers.len(),
            available: hw.rows_per_group,
        }));
    }
    let layers = spec.layers.iter().enumerate().map(|(l, layer)| place_layer(l, layer, hw)).collect::<Result<_, _>>()?;
    Ok(Placement { spec: spec.clone(), hardware: hw.clone(), layers })
}

fn place_layer(l: usize, layer: &LayerSpec, hw: &HardwareConfig) -> Result<LayerPlacement, MappingError> {
    let req = layer.weights_per_gate();
    let pes_per_neuron = req.div_ceil(hw.weights_per_pe);
    let (units_per_neuron, neurons_per_unit) = match layer.cell_type {
        CellKind::Vanilla if pes_per_neuron == 1 => (1, hw.pes_per_unit),
        _ => (pes_per_neuron, 1),
    };
    let units_for = |n: usize| n.div_ceil(neurons_per_unit) * units_per_neuron;
    let per_row = hw.units_per_row();
    let shortfall = |reason: &str, required, available| {
        MappingError::CapacityExceeded(Shortfall { layer: l, reason: reason.into(), required, available })
    };
    if units_per_neuron > per_row {
        return Err(shortfall("one neuron needs more units than a row holds", units_per_neuron, per_row));
    }
    // smallest group count whose even split fits in a row
    let n = layer.neurons;
    let n_groups = (1..=n.min(hw.groups).max(1))
        .find(|&g| units_for(n.div_ceil(g)) <= per_row)
        .ok_or_else(|| {
            let slots = per_row / units_per_neuron * neurons_per_unit * hw.groups;
            shortfall("layer has more neurons than the rows of all tile groups can place", n, slots)
        })?;

    let mut neurons = Vec::with_capacity(n);
    let mut tiles: Vec<TileLoc> = Vec::new();
    let mut units_used = 0;
    for g in 0..n_groups {
        let (lo, hi) = (g * n / n_groups, (g + 1) * n / n_groups);
        let mut slot = 0usize;
        for (k, j) in (lo..hi).enumerate() {
            let mut shares = Vec::with_capacity(units_per_neuron);
            for u in 0..units_per_neuron {
                let pos = slot + u;
                let tile = TileLoc { group: g, row: l, tile: pos / hw.lstm_units_per_tile };
                if tiles.last() != Some(&tile) {
                    tiles.push(tile);
                }
                let chunk_len = req.div_ceil(units_per_neuron);
                let chunk = (u * chunk_len, ((u + 1) * chunk_len).min(req));
                let pes = if layer.cell_type == CellKind::Vanilla { vec![k % neurons_per_unit] } else { (0..hw.pes_per_unit).collect() };
                shares.push(UnitShare {
                    unit: UnitLoc { tile, unit: pos % hw.lstm_units_per_tile },
                    tile_index: tiles.len() - 1,
                    pes,
                    chunk,
                });
            }
            if neurons_per_unit == 1 || k % neurons_per_unit == neurons_per_unit - 1 || j + 1 == hi {
                slot += units_per_neuron;
            }
            neurons.push(NeuronPlacement { neuron: j, shares, aggregation_hops: aggregation_hops(units_per_neuron) });
        }
        units_used += slot;
    }
    Ok(LayerPlacement {
        layer: l,
        spec: *layer,
        row: l,
        groups: (0..n_groups).collect(),
        tiles,
        units_used,
        units_per_neuron,
        neurons_per_unit,
        neurons,
    })
}

/// One track segment of a chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub words: usize,
    /// Index of the first word this segment holds at rest.
    pub offset: usize,
    pub tile: TileLoc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    /// Segment writing into `to`.
    pub from: usize,
    pub to: usize,
    pub cross_group: bool,
    pub lookahead_cycles: u64,
}

/// A circular chain over the layer's tiles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLayout {
    pub words: usize,
    pub segments: Vec<SegmentPlan>,
    pub links: Vec<ChainLink>,
    /// Segment each tile (by index in the layer's tile list) reads from.
    pub tile_reader: Vec<usize>,
    /// Extra cycles before the first issue of a step because a cross-group
    /// link lands late.
    pub stall_cycles: u64,
}

impl ChainLayout {
    pub fn segment_words(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.words).collect()
    }

    pub fn cross_group_links(&self) -> usize {
        self.links.iter().filter(|l| l.cross_group).count()
    }

    /// Word index read by segment `g` at rotation step `k`.
    pub fn word_at(&self, g: usize, k: usize) -> usize {
        (self.segments[g].offset + k) % self.words
    }
}

/// Chain holding `words` words spread over the tiles of a placed layer.
pub fn chain_for(words: usize, layer: &LayerPlacement, hw: &HardwareConfig) -> ChainLayout {
    let t = layer.tiles.len().max(1);
    let n_seg = words.div_ceil(hw.chain_segment_words).max(t.min(words)).max(1);
    let mut segments = Vec::with_capacity(n_seg);
    let mut offset = 0;
    for g in 0..n_seg {
        let w = (g + 1) * words / n_seg - g * words / n_seg;
        let tile = layer.tiles.get(g * t / n_seg).copied().unwrap_or(TileLoc { group: 0, row: layer.row, tile: 0 });
        segments.push(SegmentPlan { words: w, offset, tile });
        offset += w;
    }
    let mut tile_reader = vec![0; t];
    for g in (0..n_seg).rev() {
        tile_reader[g * t / n_seg] = g;
    }
    let links: Vec<ChainLink> = if n_seg > 1 {
        (0..n_seg)
            .map(|g| {
                let from = (g + 1) % n_seg;
                let cross = segments[from].tile.group != segments[g].tile.group;
                ChainLink { from, to: g, cross_group: cross, lookahead_cycles: if cross { hw.lookahead() } else { 0 } }
            })
            .collect()
    } else {
        Vec::new()
    };
    let stall_cycles = if links.iter().any(|l| l.cross_group) {
        hw.interconnect_latency_cycles.saturating_sub(hw.lookahead())
    } else {
        0
    };
    ChainLayout { words, segments, links, tile_reader, stall_cycles }
}

/// Input chain (`x`) and recurrent chain (`h`) of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerChains {
    pub input: ChainLayout,
    pub recurrent: ChainLayout,
}

pub fn chain_plan(layer: &LayerPlacement, hw: &HardwareConfig) -> LayerChains {
    LayerChains { input: chain_for(layer.spec.inputs, layer, hw), recurrent: chain_for(layer.spec.neurons, layer, hw) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerUtilization {
    pub layer: usize,
    pub cell_type: CellKind,
    pub units: usize,
    pub pes: usize,
    /// MAC engines that issue work (two per PE in LSTM mode).
    pub active_macs: usize,
    pub mac_slots: usize,
    pub mac_activity: f64,
    pub tiles: usize,
    pub groups: usize,
    pub aggregation_hops: u32,
    pub cross_group_links: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub layers: Vec<LayerUtilization>,
    pub units_used: usize,
    pub units_available: usize,
    pub pes_used: usize,
    pub pes_available: usize,
    pub active_macs: usize,
    pub mac_slots: usize,
    pub unit_utilization: f64,
    pub interconnect_latency_cycles: u64,
}

/// MAC engines a neuron keeps busy on one unit share.
fn active_engines(kind: CellKind, share: &UnitShare) -> usize {
    match kind {
        // z and r use both engines; candidate x-part and h-part one each
        CellKind::Gru => 6,
        CellKind::Lstm => 8,
        CellKind::Vanilla => 2 * share.pes.len(),
    }
}

pub fn utilization_report(placement: &Placement) -> UtilizationReport {
    let hw = &placement.hardware;
    let engines_per_unit = 2 * hw.pes_per_unit;
    let layers: Vec<LayerUtilization> = placement
        .layers
        .iter()
        .map(|lp| {
            let active: usize =
                lp.neurons.iter().flat_map(|n| n.shares.iter()).map(|s| active_engines(lp.spec.cell_type, s)).sum();
            let slots = lp.units_used * engines_per_unit;
            let chains = chain_plan(lp, hw);
            LayerUtilization {
                layer: lp.layer,
                cell_type: lp.spec.cell_type,
                units: lp.units_used,
                pes: lp.units_used * hw.pes_per_unit,
                active_macs: active,
                mac_slots: slots,
                mac_activity: if slots == 0 { 0.0 } else { active as f64 / slots as f64 },
                tiles: lp.tiles.len(),
                groups: lp.groups.len(),
                aggregation_hops: lp.max_aggregation_hops(),
                cross_group_links: chains.input.cross_group_links() + chains.recurrent.cross_group_links(),
            }
        })
        .collect();
    let units_used: usize = layers.iter().map(|l| l.units).sum();
    let available = hw.total_units();
    UtilizationReport {
        units_used,
        units_available: available,
        pes_used: units_used * hw.pes_per_unit,
        pes_available: available * hw.pes_per_unit,
        active_macs: layers.iter().map(|l| l.active_macs).sum(),
        mac_slots: layers.iter().map(|l| l.mac_slots).sum(),
        unit_utilization: if available == 0 { 0.0 } else { units_used as f64 / available as f64 },
        interconnect_latency_cycles: hw.interconnect_latency_cycles,
        layers,
    }
}

/// Independent feasibility check: total unit demand against supply, row by row.
pub fn fits(spec: &NetworkSpec, hw: &HardwareConfig) -> bool {
    if spec.validate().is_err() || hw.validate().is_err() || spec.layers.len() > hw.rows_per_group {
        return false;
    }
    spec.layers.iter().all(|l| {
        let pes = l.weights_per_gate().div_ceil(hw.weights_per_pe);
        let (per_neuron, per_unit) = if l.cell_type == CellKind::Vanilla && pes == 1 { (1, 4) } else { (pes, 1) };
        if per_neuron > hw.units_per_row() {
            return false;
        }
        // neurons that fit in one row, times available groups
        let neurons_per_row = hw.units_per_row() / per_neuron * per_unit;
        l.neurons <= neurons_per_row * hw.groups
    })
}
