//! Event counters and their conversion to energy and time.
//!
//! Energies are held as integer attojoules so that reports are an exact
//! multiply-and-sum; conversion to picojoules happens only on output.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Attojoules per picojoule.
pub const AJ_PER_PJ: u64 = 1_000_000;

/// Monotone counters for one hardware component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventCounts {
    pub track_read: u64,
    pub track_write: u64,
    pub track_shift: u64,
    pub mac_issue: u64,
    pub nonlinear_eval: u64,
    pub aggregation_hop: u64,
    pub interconnect_word: u64,
    /// Error-detection bit reads (input check bits, weight EDC bits).
    pub edc_read: u64,
    /// Error-detection pattern rewrites on input tracks.
    pub edc_write: u64,
}

impl EventCounts {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }

    /// Counters excluding the error-detection overhead.
    pub fn without_edc(mut self) -> Self {
        self.edc_read = 0;
        self.edc_write = 0;
        self
    }
}

impl Add for EventCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            track_read: self.track_read + o.track_read,
            track_write: self.track_write + o.track_write,
            track_shift: self.track_shift + o.track_shift,
            mac_issue: self.mac_issue + o.mac_issue,
            nonlinear_eval: self.nonlinear_eval + o.nonlinear_eval,
            aggregation_hop: self.aggregation_hop + o.aggregation_hop,
            interconnect_word: self.interconnect_word + o.interconnect_word,
            edc_read: self.edc_read + o.edc_read,
            edc_write: self.edc_write + o.edc_write,
        }
    }
}

impl AddAssign for EventCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// Counters split by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub input_chains: EventCounts,
    pub recurrent_chains: EventCounts,
    pub weight_arrays: EventCounts,
    pub compute: EventCounts,
}

impl EnergyLedger {
    pub fn total(&self) -> EventCounts {
        self.input_chains + self.recurrent_chains + self.weight_arrays + self.compute
    }

    pub fn merge(&mut self, other: &EnergyLedger) {
        self.input_chains += other.input_chains;
        self.recurrent_chains += other.recurrent_chains;
        self.weight_arrays += other.weight_arrays;
        self.compute += other.compute;
    }
}

/// Per-event energy in attojoules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyTable {
    pub read_aj: u64,
    pub shift_aj: u64,
    pub write_aj: u64,
    pub mac_issue_aj: u64,
    pub nonlinear_eval_aj: u64,
    pub aggregation_hop_aj: u64,
    pub interconnect_word_aj: u64,
}

impl Default for EnergyTable {
    /// Racetrack access energies: read 0.39 pJ, shift 0.24 pJ, write 9.6 fJ.
    /// A MAC issue is charged 1.215 pJ: the PE's 2.43 mW over one 1 ns issue
    /// interval, shared by its two engines. Remaining events default to zero.
    fn default() -> Self {
        Self {
            read_aj: 390_000,
            shift_aj: 240_000,
            write_aj: 9_600,
            mac_issue_aj: 1_215_000,
            nonlinear_eval_aj: 0,
            aggregation_hop_aj: 0,
            interconnect_word_aj: 0,
        }
    }
}

impl EnergyTable {
    /// Exact energy of a set of counters, in attojoules.
    pub fn energy_aj(&self, c: &EventCounts) -> u128 {
        let term = |n: u64, e: u64| u128::from(n) * u128::from(e);
        term(c.track_read + c.edc_read, self.read_aj)
            + term(c.track_shift, self.shift_aj)
            + term(c.track_write + c.edc_write, self.write_aj)
            + term(c.mac_issue, self.mac_issue_aj)
            + term(c.nonlinear_eval, self.nonlinear_eval_aj)
            + term(c.aggregation_hop, self.aggregation_hop_aj)
            + term(c.interconnect_word, self.interconnect_word_aj)
    }
}

/// Per-operation latencies in clock cycles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyTable {
    /// Clock period in picoseconds.
    pub clock_period_ps: u64,
    pub read: u64,
    pub shift: u64,
    pub write: u64,
}

impl Default for LatencyTable {
    /// 1 ns read, 0.5 ns shift and write at a 0.5 ns clock.
    fn default() -> Self {
        Self { clock_period_ps: 500, read: 2, shift: 1, write: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentEnergy {
    pub component: String,
    pub counts: EventCounts,
    pub energy_aj: u128,
    pub energy_pj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub components: Vec<ComponentEnergy>,
    pub total_counts: EventCounts,
    pub total_energy_aj: u128,
    pub total_energy_pj: f64,
    /// Energy excluding error-detection reads/writes.
    pub compute_energy_aj: u128,
}

fn to_pj(aj: u128) -> f64 {
    aj as f64 / AJ_PER_PJ as f64
}

pub fn energy_report(ledger: &EnergyLedger, table: &EnergyTable) -> EnergyReport {
    let parts = [
        ("input_chains", ledger.input_chains),
        ("recurrent_chains", ledger.recurrent_chains),
        ("weight_arrays", ledger.weight_arrays),
        ("compute", ledger.compute),
    ];
    let components = parts
        .iter()
        .map(|(name, counts)| {
            let energy_aj = table.energy_aj(counts);
            ComponentEnergy {
                component: (*name).to_string(),
                counts: *counts,
                energy_aj,
                energy_pj: to_pj(energy_aj),
            }
        })
        .collect();
    let total = ledger.total();
    let total_energy_aj = table.energy_aj(&total);
    EnergyReport {
        components,
        total_counts: total,
        total_energy_aj,
        total_energy_pj: to_pj(total_energy_aj),
        compute_energy_aj: table.energy_aj(&total.without_edc()),
    }
}

impl EnergyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "component,track_read,track_write,track_shift,mac_issue,nonlinear_eval,aggregation_hop,interconnect_word,edc_read,edc_write,energy_pj\n",
        );
        let row = |name: &str, c: &EventCounts, pj: f64| {
            format!(
                "{name},{},{},{},{},{},{},{},{},{},{pj}\n",
                c.track_read,
                c.track_write,
                c.track_shift,
                c.mac_issue,
                c.nonlinear_eval,
                c.aggregation_hop,
                c.interconnect_word,
                c.edc_read,
                c.edc_write
            )
        };
        for c in &self.components {
            out.push_str(&row(&c.component, &c.counts, c.energy_pj));
        }
        out.push_str(&row("total", &self.total_counts, self.total_energy_pj));
        out
    }
}
