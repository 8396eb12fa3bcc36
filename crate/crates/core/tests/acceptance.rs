//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rnnfast_core::energy::{energy_report, EnergyLedger, EnergyTable, EventCounts};
use rnnfast_core::error_model::{
    paired_t_greater, run_fidelity_experiment, BitRegion, ErrorConfig, FaultSite, Fixture, FidelityRow,
    DEFAULT_P_OVERSHIFT,
};
use rnnfast_core::lstm::{
    booth_multiply, gru_cell_step, lstm_cell_step, network_forward, vanilla_cell_step, MacPipeline,
};
use rnnfast_core::mapping::{utilization_report, LayerSpec};
use rnnfast_core::nonlinear::{sigmoid_approx, sigmoid_exact, ActivationImpl};
use rnnfast_core::oracle::{float_gru_step, float_lstm_step, float_vanilla_step};
use rnnfast_core::racetrack::{Racetrack, ShiftDirection};
use rnnfast_core::{
    analytic_cycles, map_network, simulate, CellKind, FixedQ8_8, FloatWeights, GateWeights, HardwareConfig,
    LayerWeights, Matrix, NetworkSpec, Placement,
};

type Fx = FixedQ8_8;

const SEEDS: u64 = 30;
const CONFIDENCE_ALPHA: f64 = 0.05;

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn random_float_weights(rng: &mut ChaCha8Rng, kind: CellKind, inputs: usize, neurons: usize) -> FloatWeights {
    let gates = (0..kind.gate_count())
        .map(|_| GateWeights {
            w_x: Matrix::from_fn(neurons, inputs, |_, _| rng.random_range(-1.0..=1.0)),
            w_h: Matrix::from_fn(neurons, neurons, |_, _| rng.random_range(-1.0..=1.0)),
            bias: uniform_vec(rng, neurons),
        })
        .collect();
    LayerWeights::new(kind, gates).unwrap()
}

fn quantize(v: &[f64]) -> Vec<Fx> {
    v.iter().map(|&x| Fx::from_real(x)).collect()
}

fn worst(fixed: &[Fx], float: &[f64]) -> f64 {
    fixed.iter().zip(float).map(|(a, b)| (a.to_real() - b).abs()).fold(0.0, f64::max)
}

fn functional_equivalence() -> Outcome {
    const CELLS_PER_KIND: usize = 1000;
    const BOUND: f64 = 0.05;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut parts = Vec::new();
    let mut pass = true;
    for kind in [CellKind::Lstm, CellKind::Gru, CellKind::Vanilla] {
        let mut max_err = 0.0f64;
        let mut over = 0usize;
        for _ in 0..CELLS_PER_KIND {
            let inputs = rng.random_range(1..=64);
            let neurons = rng.random_range(1..=64);
            let w = random_float_weights(&mut rng, kind, inputs, neurons);
            let (x, h, c) = (uniform_vec(&mut rng, inputs), uniform_vec(&mut rng, neurons), uniform_vec(&mut rng, neurons));
            let wq = w.quantize();
            let (xq, hq, cq) = (quantize(&x), quantize(&h), quantize(&c));
            let act = ActivationImpl::Approx;
            let err = match kind {
                CellKind::Lstm => {
                    let (fh, _) = lstm_cell_step(&xq, &hq, &cq, &wq, act).unwrap();
                    worst(&fh, &float_lstm_step(&x, &h, &c, &w).unwrap().0)
                }
                CellKind::Gru => worst(&gru_cell_step(&xq, &hq, &wq, act).unwrap(), &float_gru_step(&x, &h, &w).unwrap()),
                CellKind::Vanilla => {
                    worst(&vanilla_cell_step(&xq, &hq, &wq, act).unwrap(), &float_vanilla_step(&x, &h, &w).unwrap())
                }
            };
            if err > BOUND {
                over += 1;
            }
            max_err = max_err.max(err);
        }
        pass &= max_err <= BOUND;
        parts.push(format!("{kind:?} max {max_err:.4} ({over}/{CELLS_PER_KIND} cells over)"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    outcome(pass, format!("{}; bound {BOUND}; {:.1?}", parts.join(", "), elapsed))
}

fn random_fx_inputs(rng: &mut ChaCha8Rng, steps: usize, width: usize) -> Vec<Vec<Fx>> {
    (0..steps).map(|_| (0..width).map(|_| Fx::from_raw(rng.random_range(-256..=256))).collect()).collect()
}

fn stacked(kind: CellKind, inputs: usize, widths: &[usize], timesteps: usize, act: ActivationImpl) -> NetworkSpec {
    let layers = widths
        .iter()
        .enumerate()
        .map(|(l, &n)| LayerSpec { cell_type: kind, neurons: n, inputs: if l == 0 { inputs } else { widths[l - 1] } })
        .collect();
    NetworkSpec { layers, timesteps, activation_impl: act }
}

fn random_weights(rng: &mut ChaCha8Rng, spec: &NetworkSpec) -> Vec<LayerWeights<Fx>> {
    spec.layers.iter().map(|l| LayerWeights::random(l.cell_type, l.inputs, l.neurons, 0.5, rng)).collect()
}

fn partition_invariance() -> Outcome {
    const TARGET: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut checked, mut with_trees, mut mismatches) = (0, 0, 0);
    while checked < TARGET {
        let kind = [CellKind::Lstm, CellKind::Gru, CellKind::Vanilla][rng.random_range(0..3)];
        let depth = rng.random_range(1..=3);
        let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=40)).collect();
        let act = if rng.random_bool(0.5) { ActivationImpl::Approx } else { ActivationImpl::Lut };
        let spec = stacked(kind, rng.random_range(1..=48), &widths, rng.random_range(1..=4), act);
        let hw = HardwareConfig {
            weights_per_pe: rng.random_range(2..=48),
            lstm_units_per_tile: rng.random_range(1..=8),
            tiles_per_row: rng.random_range(1..=4),
            groups: rng.random_range(1..=16),
            chain_segment_words: rng.random_range(4..=64),
            ..HardwareConfig::default()
        };
        let Ok(placement) = map_network(&spec, &hw) else { continue };
        let weights = random_weights(&mut rng, &spec);
        let inputs = random_fx_inputs(&mut rng, spec.timesteps, spec.inputs());
        let run = simulate(&placement, &weights, &inputs, &ErrorConfig::none()).unwrap();
        if run.outputs != network_forward(&weights, &inputs, act).unwrap() {
            mismatches += 1;
        }
        if placement.layers.iter().any(|l| l.has_aggregation_trees()) {
            with_trees += 1;
        }
        checked += 1;
    }
    outcome(
        mismatches == 0 && with_trees > 0,
        format!("{checked} placements ({with_trees} with aggregation trees), {mismatches} mismatches"),
    )
}

fn sigmoid_bound() -> Outcome {
    const BOUND: f64 = 0.04;
    let lo = Fx::from_real(-8.0).raw();
    let hi = Fx::from_real(8.0).raw();
    let mut max_err = 0.0f64;
    let mut asym = 0usize;
    for raw in lo..=hi {
        let z = Fx::from_raw(raw);
        let s = sigmoid_approx(z);
        max_err = max_err.max((s.to_real() - sigmoid_exact(z.to_real())).abs());
        if i32::from(s.raw()) + i32::from(sigmoid_approx(Fx::from_raw(-raw)).raw()) != i32::from(Fx::ONE.raw()) {
            asym += 1;
        }
    }
    outcome(
        max_err <= BOUND && asym == 0,
        format!("{} values, max error {max_err:.5} (bound {BOUND}), {asym} antisymmetry violations", hi - lo + 1),
    )
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn agreements(rows: &[FidelityRow]) -> Vec<f64> {
    rows.iter().map(|r| r.argmax_agreement).collect()
}

fn sweep(placement: &Placement, fx: &Fixture, make: impl Fn(u64) -> ErrorConfig) -> (Vec<FidelityRow>, Duration) {
    let start = Instant::now();
    let grid: Vec<ErrorConfig> = (0..SEEDS).map(make).collect();
    let rows = run_fidelity_experiment(placement, &fx.weights, &fx.inputs, &grid).unwrap();
    (rows, start.elapsed())
}

fn edc_exactness(placement: &Placement, fx: &Fixture) -> Outcome {
    const LIMIT: Duration = Duration::from_secs(300);
    let p = DEFAULT_P_OVERSHIFT;
    let clean = simulate(placement, &fx.weights, &fx.inputs, &ErrorConfig::none()).unwrap();
    let start = Instant::now();
    let mut exact = 0;
    let mut corrected = 0;
    for seed in 0..SEEDS {
        let cfg = ErrorConfig::new(p, &[FaultSite::InputChains], seed).with_edc(true, true);
        let run = simulate(placement, &fx.weights, &fx.inputs, &cfg).unwrap();
        corrected += run.faults.input_corrected;
        if run.outputs == clean.outputs {
            exact += 1;
        }
    }
    let t_inputs = start.elapsed();
    let (full, t_full) = sweep(placement, fx, |s| ErrorConfig::all_sites(p, s).with_edc(true, true));
    let (stress, t_stress) = sweep(placement, fx, |s| ErrorConfig::all_sites(1e-3, s).with_edc(true, true));
    let (a_full, a_stress) = (mean(&agreements(&full)), mean(&agreements(&stress)));
    let pass = exact == SEEDS
        && corrected > 0
        && a_full >= 0.98
        && a_stress >= 0.95
        && [t_inputs, t_full, t_stress].iter().all(|t| *t < LIMIT);
    outcome(
        pass,
        format!(
            "inputs-only exact {exact}/{SEEDS} ({corrected} overshifts corrected); all-site agreement {a_full:.4} \
             (need 0.98); p=1e-3 agreement {a_stress:.4} (need 0.95); sweeps {t_inputs:.1?}/{t_full:.1?}/{t_stress:.1?}"
        ),
    )
}

fn degradation_ordering(placement: &Placement, fx: &Fixture) -> Outcome {
    let p = DEFAULT_P_OVERSHIFT;
    let storage = [FaultSite::InputChains, FaultSite::WeightArrays];
    let logic = agreements(&sweep(placement, fx, |s| ErrorConfig::new(p, &[FaultSite::Logic], s)).0);
    let frac =
        agreements(&sweep(placement, fx, |s| ErrorConfig::new(p, &storage, s).with_region(BitRegion::FractionOnly)).0);
    let int =
        agreements(&sweep(placement, fx, |s| ErrorConfig::new(p, &storage, s).with_region(BitRegion::IntegerOnly)).0);
    let all = agreements(&sweep(placement, fx, |s| ErrorConfig::new(p, &storage, s)).0);
    let p_logic_frac = paired_t_greater(&logic, &frac);
    let p_frac_int = paired_t_greater(&frac, &int);
    let p_logic_all = paired_t_greater(&logic, &all);
    // "much less": at least ten times the agreement loss
    let loss_ratio = (1.0 - mean(&all)) / (1.0 - mean(&logic)).max(f64::EPSILON);
    let pass = p_logic_frac < CONFIDENCE_ALPHA
        && p_frac_int < CONFIDENCE_ALPHA
        && p_logic_all < CONFIDENCE_ALPHA
        && loss_ratio >= 10.0;
    outcome(
        pass,
        format!(
            "logic {:.4} > fraction {:.4} (p={p_logic_frac:.2e}) > integer {:.4} (p={p_frac_int:.2e}); \
             inputs/weights {:.4}, loss ratio {loss_ratio:.1} (p={p_logic_all:.2e})",
            mean(&logic),
            mean(&frac),
            mean(&int),
            mean(&all)
        ),
    )
}

fn timing_oracle() -> Outcome {
    const WIDTHS: [usize; 6] = [16, 32, 64, 128, 256, 512];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hw = HardwareConfig::default();
    let (mut configs, mut mismatches) = (0, 0);
    for i in 0..60 {
        let kind = [CellKind::Lstm, CellKind::Gru, CellKind::Vanilla][i % 3];
        let depth = 1 + (i / 3) % 3;
        let widths: Vec<usize> = (0..depth).map(|_| WIDTHS[rng.random_range(0..WIDTHS.len())]).collect();
        let steps = rng.random_range(1..=16);
        let spec = stacked(kind, WIDTHS[rng.random_range(0..WIDTHS.len())], &widths, steps, ActivationImpl::Approx);
        let placement = map_network(&spec, &hw).unwrap();
        let weights = random_weights(&mut rng, &spec);
        let inputs = random_fx_inputs(&mut rng, steps, spec.inputs());
        let run = simulate(&placement, &weights, &inputs, &ErrorConfig::none()).unwrap();
        if run.total_cycles != analytic_cycles(&placement) {
            mismatches += 1;
        }
        configs += 1;
    }

    let mut mac = MacPipeline::default();
    let latency_ok = mac.issue(10, Fx::ONE, Fx::ONE) == Ok(106)
        && mac.issue(11, Fx::ONE, Fx::ONE).is_err()
        && mac.issue(12, Fx::ONE, Fx::ONE) == Ok(108);

    // one neuron, growing fan-in inside one chain segment
    let single = |inputs: usize| {
        let spec = stacked(CellKind::Lstm, inputs, &[1], 1, ActivationImpl::Approx);
        let placement = map_network(&spec, &hw).unwrap();
        let weights = random_weights(&mut ChaCha8Rng::seed_from_u64(0), &spec);
        let run = simulate(&placement, &weights, &[vec![Fx::ONE; inputs]], &ErrorConfig::none()).unwrap();
        run.total_cycles
    };
    let fixed = hw.latency.read + hw.finish_cycles(CellKind::Lstm, ActivationImpl::Approx) + hw.latency.write;
    let observed_latency = single(1) - fixed;
    let intervals: Vec<u64> = (1..40).map(|n| single(n + 1) - single(n)).collect();
    let interval_ok = intervals.iter().all(|&d| d == 2);
    outcome(
        mismatches == 0 && configs >= 50 && latency_ok && observed_latency == 96 && interval_ok,
        format!(
            "{configs} configs, {mismatches} mismatches; MAC latency {observed_latency}, issue interval {:?}",
            intervals.iter().copied().min().zip(intervals.iter().copied().max())
        ),
    )
}

fn energy_exactness() -> Outcome {
    let table = EnergyTable::default();
    let mut counts = EventCounts::default();
    let mut track = Racetrack::with_head(64, 4);
    for i in 0..200 {
        let dir = if i % 2 == 0 { ShiftDirection::Left } else { ShiftDirection::Right };
        track.shift(dir, false, &mut counts).unwrap();
    }
    for i in 0..100 {
        track.read(0, &mut counts).unwrap();
        if i < 50 {
            track.shift_write(0, i % 2 == 0, &mut counts).unwrap();
        }
    }
    let ledger = EnergyLedger { input_chains: counts, ..Default::default() };
    let micro = energy_report(&ledger, &table);
    let micro_ok = micro.total_energy_aj == 87_480_000 && micro.total_energy_pj == 87.48;

    let fx = Fixture::lstm(32, 48, 6, 7);
    let placement = map_network(&fx.spec, &HardwareConfig::default()).unwrap();
    let plain = simulate(&placement, &fx.weights, &fx.inputs, &ErrorConfig::none()).unwrap();
    let guarded = ErrorConfig::new(0.0, &[FaultSite::InputChains, FaultSite::WeightArrays], 1).with_edc(true, true);
    let edc = simulate(&placement, &fx.weights, &fx.inputs, &guarded).unwrap();
    let compute_ok = edc.energy.compute_energy_aj == plain.energy.compute_energy_aj
        && edc.ledger.compute == plain.ledger.compute
        && edc.outputs == plain.outputs;
    let ledger_ok = plain.energy.total_energy_aj == table.energy_aj(&plain.ledger.total());
    outcome(
        micro_ok && compute_ok && ledger_ok,
        format!(
            "micro-run {} pJ (expect 87.48); compute energy EDC off/on {}/{} aJ; EDC overhead {} aJ",
            micro.total_energy_pj,
            plain.energy.compute_energy_aj,
            edc.energy.compute_energy_aj,
            edc.energy.total_energy_aj - edc.energy.compute_energy_aj
        ),
    )
}

fn mapping_arithmetic() -> Outcome {
    let hw = HardwareConfig::default();
    let im2txt = utilization_report(&map_network(&stacked(CellKind::Lstm, 512, &[512], 11, ActivationImpl::Approx), &hw).unwrap());
    let seq2seq = utilization_report(
        &map_network(&stacked(CellKind::Lstm, 1024, &[1024, 1024, 1024], 15, ActivationImpl::Approx), &hw).unwrap(),
    );
    let gru = utilization_report(&map_network(&stacked(CellKind::Gru, 256, &[256], 1, ActivationImpl::Approx), &hw).unwrap());
    let lstm = utilization_report(&map_network(&stacked(CellKind::Lstm, 256, &[256], 1, ActivationImpl::Approx), &hw).unwrap());
    let ratio = gru.active_macs as f64 / lstm.active_macs as f64;
    let pass = im2txt.units_used == 512
        && seq2seq.units_used == 6144
        && seq2seq.pes_used == 24_576
        && 4 * gru.active_macs == 3 * lstm.active_macs
        && gru.layers[0].mac_activity == 0.75;
    outcome(
        pass,
        format!(
            "im2txt {} units; seq2seq {} units / {} PEs; GRU/LSTM MAC activity {ratio:.4}",
            im2txt.units_used, seq2seq.units_used, seq2seq.pes_used
        ),
    )
}

fn booth_equivalence() -> Outcome {
    let mut mismatches = 0u64;
    let mut checked = 0u64;
    for a in i8::MIN..=i8::MAX {
        for b in i8::MIN..=i8::MAX {
            let (a, b) = (Fx::from_raw(a.into()), Fx::from_raw(b.into()));
            mismatches += u64::from(booth_multiply(a, b) != a.saturating_mul(b));
            checked += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1_000_000 {
        let (a, b) = (Fx::from_raw(rng.random()), Fx::from_raw(rng.random()));
        mismatches += u64::from(booth_multiply(a, b) != a.saturating_mul(b));
        checked += 1;
    }
    outcome(mismatches == 0, format!("{checked} pairs, {mismatches} mismatches"))
}

fn linear_fit_r2(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - (my + slope * (a - mx))).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (slope, 1.0 - ss_res / ss_tot)
}

fn scaling_shape() -> Outcome {
    const WIDTHS: [usize; 10] = [128, 256, 384, 512, 768, 1024, 1536, 2048, 3072, 4096];
    const INPUTS: usize = 128;
    const STEPS: usize = 4;
    // every neuron's whole gate row fits in one PE, so each neuron owns one unit
    let hw = HardwareConfig { weights_per_pe: 8192, ..HardwareConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cycles = Vec::new();
    let mut one_to_one = true;
    let mut analytic_ok = true;
    for &n in &WIDTHS {
        let spec = stacked(CellKind::Lstm, INPUTS, &[n], STEPS, ActivationImpl::Approx);
        let placement = map_network(&spec, &hw).unwrap();
        one_to_one &= placement.layers[0].units_per_neuron == 1 && placement.layers[0].units_used == n;
        let weights = random_weights(&mut rng, &spec);
        let inputs = random_fx_inputs(&mut rng, STEPS, INPUTS);
        let run = simulate(&placement, &weights, &inputs, &ErrorConfig::none()).unwrap();
        analytic_ok &= run.total_cycles == analytic_cycles(&placement);
        cycles.push(run.total_cycles as f64);
    }
    let x: Vec<f64> = WIDTHS.iter().map(|&n| n as f64).collect();
    let (slope, r2) = linear_fit_r2(&x, &cycles);
    outcome(
        one_to_one && analytic_ok && r2 >= 0.999,
        format!(
            "{} widths {}..{}, cycles {}..{}, slope {slope:.3} cycles/neuron, R^2 {r2:.6}",
            WIDTHS.len(),
            WIDTHS[0],
            WIDTHS[WIDTHS.len() - 1],
            cycles[0],
            cycles[cycles.len() - 1]
        ),
    )
}

fn main() {
    let fx = Fixture::reference();
    let placement = map_network(&fx.spec, &HardwareConfig::default()).unwrap();
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("functional equivalence", Box::new(functional_equivalence)),
        ("partition invariance", Box::new(partition_invariance)),
        ("sigmoid approximation bound", Box::new(sigmoid_bound)),
        ("EDC exactness", Box::new(|| edc_exactness(&placement, &fx))),
        ("degradation ordering", Box::new(|| degradation_ordering(&placement, &fx))),
        ("timing oracle", Box::new(timing_oracle)),
        ("energy ledger exactness", Box::new(energy_exactness)),
        ("mapping arithmetic", Box::new(mapping_arithmetic)),
        ("Booth equivalence", Box::new(booth_equivalence)),
        ("scaling shape", Box::new(scaling_shape)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
