use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;

use rnnfast_core::error_model::{fidelity_csv, run_fidelity_experiment, sweep_grid};
use rnnfast_core::lstm::network_forward;
use rnnfast_core::mapping::{utilization_report, UtilizationReport};
use rnnfast_core::nonlinear::{sweep, sweep_csv};
use rnnfast_core::oracle::{float_forward, max_abs_diff};
use rnnfast_core::sim::{simulate_traced, trace_csv};
use rnnfast_core::{map_network, FixedQ8_8, Placement};

use crate::manifest::{Loaded, Manifest};
use crate::{CliError, Common};

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    if let Some(p) = path {
        let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
        text.push('\n');
        write(p, &text)?;
        info!("wrote {}", p.display());
    }
    Ok(())
}

fn open(c: &Common) -> Result<(Manifest, Placement), CliError> {
    let mut manifest = Manifest::read(&c.manifest)?;
    if let Some(seed) = c.seed {
        manifest.error.seed = Some(seed);
    }
    manifest.validate()?;
    let placement = map_network(&manifest.network, &manifest.hardware)?;
    Ok((manifest, placement))
}

/// Manifest, placement and tensors; capacity is checked before any tensor is read.
fn load(c: &Common) -> Result<(Loaded, Placement), CliError> {
    let (manifest, placement) = open(c)?;
    let base = c.manifest.parent().unwrap_or(Path::new("."));
    Ok((manifest.resolve(base)?, placement))
}

fn print_utilization(u: &UtilizationReport) {
    for l in &u.layers {
        println!(
            "layer {}: {:?}, {} units, {} PEs, {} tiles in {} group(s), MAC activity {:.2}, {} aggregation hop(s)",
            l.layer, l.cell_type, l.units, l.pes, l.tiles, l.groups, l.mac_activity, l.aggregation_hops
        );
    }
    println!(
        "total: {} of {} units ({:.1}%), {} PEs",
        u.units_used,
        u.units_available,
        100.0 * u.unit_utilization,
        u.pes_used
    );
}

#[derive(Serialize)]
struct MapReport<'a> {
    utilization: &'a UtilizationReport,
    placement: &'a Placement,
}

pub fn map(c: &Common) -> Result<(), CliError> {
    let (_, placement) = open(c)?;
    let utilization = utilization_report(&placement);
    print_utilization(&utilization);
    write_json(c.out.as_deref(), &MapReport { utilization: &utilization, placement: &placement })
}

pub fn run(c: &Common, trace: Option<&Path>) -> Result<(), CliError> {
    let (loaded, placement) = load(c)?;
    let result = simulate_traced(
        &placement,
        &loaded.fixed_weights(),
        &loaded.fixed_inputs(),
        &loaded.manifest.error,
        trace.is_some(),
    )?;
    println!(
        "{} timesteps, {} cycles, {:.3} pJ, {} stall cycles",
        loaded.manifest.network.timesteps, result.total_cycles, result.total_energy_pj, result.stall_cycles
    );
    let f = result.faults;
    if f != Default::default() {
        println!(
            "faults: {} input overshifts ({} corrected), {} weight overshifts ({} zeroed), {} logic",
            f.input_overshifts, f.input_corrected, f.weight_overshifts, f.weight_zeroed, f.logic_faults
        );
    }
    if let Some(p) = trace {
        write(p, &trace_csv(&result.trace))?;
    }
    write_json(c.out.as_deref(), &result)
}

pub fn sweep_errors(c: &Common, seeds: u64) -> Result<(), CliError> {
    let (loaded, placement) = load(c)?;
    let base = loaded.manifest.error.seed.ok_or_else(|| CliError::Validation {
        field: "error.seed".into(),
        message: "required for error sweeps (or pass --seed)".into(),
    })?;
    if seeds == 0 {
        return Err(CliError::Validation { field: "--seeds".into(), message: "must be positive".into() });
    }
    let seed_list: Vec<u64> = (0..seeds).map(|k| base.wrapping_add(k)).collect();
    let grid = sweep_grid(&seed_list);
    let rows = run_fidelity_experiment(&placement, &loaded.fixed_weights(), &loaded.fixed_inputs(), &grid)?;
    let csv = fidelity_csv(&rows);
    for chunk in rows.chunks(seed_list.len()) {
        let mean = chunk.iter().map(|r| r.argmax_agreement).sum::<f64>() / chunk.len() as f64;
        println!("p={:<8} edc={:<5} agreement {mean:.4}", chunk[0].p, chunk[0].edc_inputs);
    }
    match &c.out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct OracleReport {
    /// `[layer][timestep][neuron]`
    outputs: Vec<Vec<Vec<f64>>>,
    max_abs_diff_fixed: f64,
}

pub fn oracle_run(c: &Common) -> Result<(), CliError> {
    let (loaded, _) = load(c)?;
    let outputs = float_forward(&loaded.real_weights(), &loaded.real_inputs()).map_err(|e| CliError::Validation {
        field: "weights".into(),
        message: e.to_string(),
    })?;
    let fixed = network_forward(&loaded.fixed_weights(), &loaded.fixed_inputs(), loaded.manifest.network.activation_impl)
        .map_err(|e| CliError::Validation { field: "weights".into(), message: e.to_string() })?;
    let fixed: Vec<Vec<Vec<f64>>> =
        fixed.iter().map(|l| l.iter().map(|t| t.iter().map(|v| v.to_real()).collect()).collect()).collect();
    let diff = max_abs_diff(&outputs, &fixed);
    println!("{} layer(s), {} timesteps; max |float - Q8.8| = {diff:.5}", outputs.len(), loaded.manifest.network.timesteps);
    write_json(c.out.as_deref(), &OracleReport { outputs, max_abs_diff_fixed: diff })
}

pub fn dump_activation(out: Option<&Path>, lo: f64, hi: f64) -> Result<(), CliError> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::Validation { field: "--lo/--hi".into(), message: "need finite lo <= hi".into() });
    }
    let rows = sweep(FixedQ8_8::from_real(lo), FixedQ8_8::from_real(hi));
    let worst = |f: fn(&rnnfast_core::nonlinear::SweepRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    println!(
        "{} points; max error sigmoid approx {:.5}, lut {:.5}; tanh approx {:.5}, lut {:.5}",
        rows.len(),
        worst(|r| (r.sigmoid_approx - r.sigmoid_exact).abs()),
        worst(|r| (r.sigmoid_lut - r.sigmoid_exact).abs()),
        worst(|r| (r.tanh_approx - r.tanh_exact).abs()),
        worst(|r| (r.tanh_lut - r.tanh_exact).abs()),
    );
    let csv = sweep_csv(&rows);
    match out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    total_cycles: u64,
    latency_ns: f64,
    stall_cycles: u64,
    energy: &'a rnnfast_core::energy::EnergyReport,
    utilization: &'a UtilizationReport,
    faults: rnnfast_core::error_model::FaultSummary,
}

pub fn report(c: &Common) -> Result<(), CliError> {
    let (loaded, placement) = load(c)?;
    let utilization = utilization_report(&placement);
    let result = simulate_traced(&placement, &loaded.fixed_weights(), &loaded.fixed_inputs(), &loaded.manifest.error, false)?;
    let latency_ns = result.total_cycles as f64 * loaded.manifest.hardware.latency.clock_period_ps as f64 / 1000.0;
    print_utilization(&utilization);
    println!("latency: {} cycles = {latency_ns:.1} ns", result.total_cycles);
    print!("{}", result.energy.to_csv());
    write_json(
        c.out.as_deref(),
        &Report {
            total_cycles: result.total_cycles,
            latency_ns,
            stall_cycles: result.stall_cycles,
            energy: &result.energy,
            utilization: &utilization,
            faults: result.faults,
        },
    )
}
