//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ybspin::fit::{effective_linewidth, fit_mims, mims_model, DecayTrace, EchoMode, MimsOptions};
use ybspin::hamfit::{
    default_fit_fields, fit_spin_hamiltonian, synthetic_observations, HamFitOptions, HamModel, SyntheticOptions,
};
use ybspin::photophysics::{
    absorption_table, aggregate_radiative_rate, branching_ratio, rate_records, OpticalMedium, RateAggregation,
};
use ybspin::spectra::{
    allowed, boltzmann_populations, field_ramp_map, transition_catalog, yb171_adjacency, CatalogOptions, DetuningGrid,
    LineshapeParams, Polarization, SpectrumSetup, TransitionMoment, DEFAULT_PI_AMPLITUDE, DEFAULT_SIGMA_AMPLITUDE,
};
use ybspin::spinham::{
    levels, AxialTensor, FieldVector, Manifold, ManifoldParams, NuclearZeeman, ProductState, SpinSystem,
};
use ybspin::zefoz::{frequency_gradient, zefoz_search, FieldBox, TransitionSpec, ZefozOptions, DEFAULT_STEP};
use ybspin::{PhysicalConstants, Result};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn within_budget(elapsed: Duration, budget: f64) -> bool {
    elapsed.as_secs_f64() < budget
}

/// Hand-written zero-field eigenvalues, sorted.
fn closed_form(a_par: f64, a_perp: f64) -> [f64; 4] {
    let mut e = [a_par / 4.0, a_par / 4.0, (-a_par + 2.0 * a_perp) / 4.0, (-a_par - 2.0 * a_perp) / 4.0];
    e.sort_by(f64::total_cmp);
    e
}

fn hyperfine_only(manifold: Manifold, a: AxialTensor) -> ManifoldParams {
    ManifoldParams {
        manifold,
        g: AxialTensor::new(0.0, 0.0),
        a,
        gn: 0.0,
        optical_offset: 0.0,
    }
}

fn zero_field_structure() -> Result<Outcome> {
    let consts = PhysicalConstants::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let a = AxialTensor::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let p = ManifoldParams {
            g: AxialTensor::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)),
            gn: rng.random_range(-1.0..1.0),
            ..hyperfine_only(Manifold::Ground, a)
        };
        let ls = levels(&p, &FieldVector::zero(), &consts, NuclearZeeman::Explicit)?;
        let expect = closed_form(a.parallel, a.perpendicular);
        let scale = expect.iter().map(|e| e.abs()).fold(0.0, f64::max);
        for (e, x) in ls.energies.iter().zip(&expect) {
            worst = worst.max((e - x).abs() / scale);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-10 && within_budget(elapsed, 1.0),
        format!("max relative error {worst:.2e}, {:.3} s", elapsed.as_secs_f64()),
    )
}

fn constants_round_trip() -> Result<Outcome> {
    let consts = PhysicalConstants::default();
    let mut ok = true;
    let mut spans = Vec::new();
    for (m, a, expect) in [
        (Manifold::Ground, AxialTensor::new(-4.82, 0.675), 2.7475),
        (Manifold::Excited, AxialTensor::new(4.86, 3.37), 4.115),
    ] {
        let ls = levels(&hyperfine_only(m, a), &FieldVector::zero(), &consts, NuclearZeeman::Folded)?;
        let span = ls.energies[3] - ls.energies[0];
        ok &= (span - expect).abs() < 1e-9;
        spans.push(format!("{m} span {span:.10} GHz"));
    }
    outcome(ok, spans.join(", "))
}

fn selection_rules() -> Result<Outcome> {
    let s = SpinSystem::yb171_yvo4();
    let g = s.levels(Manifold::Ground, &FieldVector::zero())?;
    let e = s.levels(Manifold::Excited, &FieldVector::zero())?;
    let moments = TransitionMoment::default_pair(DEFAULT_PI_AMPLITUDE, DEFAULT_SIGMA_AMPLITUDE);
    let merged = transition_catalog(&g, &e, &moments, &CatalogOptions::merged())?;
    let n_pi = allowed(&merged, Polarization::Pi).count();
    let n_sigma = allowed(&merged, Polarization::Sigma).count();
    // Every forbidden pair of the unmerged catalog carries exactly nothing.
    let raw = transition_catalog(&g, &e, &moments, &CatalogOptions::default())?;
    let largest_forbidden = raw.iter().filter(|l| l.forbidden).map(|l| l.amplitude).fold(0.0, f64::max);
    outcome(
        n_pi == 3 && n_sigma == 4 && largest_forbidden < 1e-25,
        format!("{n_pi} pi, {n_sigma} sigma, largest forbidden amplitude {largest_forbidden:.1e}"),
    )
}

/// Label, polarization, integrated absorption (GHz/cm), f (1e-6), rate (kHz).
const REFERENCE_TABLE: [(&str, Polarization, f64, f64, f64); 7] = [
    ("A", Polarization::Pi, 97.3, 5.4, 1.3),
    ("C", Polarization::Sigma, 16.4, 1.0, 0.3),
    ("E", Polarization::Pi, 102.7, 5.5, 1.4),
    ("F", Polarization::Sigma, 17.4, 1.1, 0.4),
    ("G", Polarization::Sigma, 20.2, 2.6, 0.2),
    ("H", Polarization::Sigma, 19.9, 2.6, 0.2),
    ("I", Polarization::Pi, 189.7, 4.9, 1.2),
];

fn table_rows() -> Result<Vec<ybspin::photophysics::TableRow>> {
    let s = SpinSystem::yb171_yvo4();
    let ground = s.levels(Manifold::Ground, &FieldVector::zero())?;
    let pops = boltzmann_populations(&ground, 2.0, &s.constants)?;
    let lines: Vec<(String, Polarization, f64)> =
        REFERENCE_TABLE.iter().map(|(l, p, a, _, _)| (l.to_string(), *p, *a)).collect();
    absorption_table(&lines, &yb171_adjacency(), &pops, 1.24e18, &OpticalMedium::yvo4())
}

fn table_reproduction() -> Result<Outcome> {
    let start = Instant::now();
    let rows = table_rows()?;
    let elapsed = start.elapsed();
    let mut ok = within_budget(elapsed, 1.0);
    let mut worst_f = 0.0f64;
    let mut worst_rate = 0.0f64;
    let mut bad = Vec::new();
    for (row, (label, _, _, f, rate)) in rows.iter().zip(REFERENCE_TABLE) {
        let df = (row.oscillator_strength / (f * 1e-6) - 1.0).abs();
        let dr = (row.radiative_rate / (rate * 1e3) - 1.0).abs();
        worst_f = worst_f.max(df);
        worst_rate = worst_rate.max(dr);
        if df > 0.10 || dr > 0.15 {
            ok = false;
            bad.push(format!(
                "{label}: f {:.2}e-6 rate {:.3} kHz",
                row.oscillator_strength * 1e6,
                row.radiative_rate * 1e-3
            ));
        }
    }
    let mut detail = format!("worst f deviation {:.1}%, worst rate deviation {:.1}%", 100.0 * worst_f, 100.0 * worst_rate);
    if !bad.is_empty() {
        detail.push_str(&format!(" [{}]", bad.join("; ")));
    }
    outcome(ok, detail)
}

fn branching() -> Result<Outcome> {
    let rows = table_rows()?;
    let agg = aggregate_radiative_rate(&rate_records(&rows), RateAggregation::PerExcitedLevel)?;
    let b = branching_ratio(267e-6, agg.tau_rad)?;
    outcome(
        (0.40..=0.50).contains(&b.beta),
        format!("tau_rad {:.1} us, beta {:.3}", agg.tau_rad * 1e6, b.beta),
    )
}

fn mims_and_linewidth() -> Result<Outcome> {
    let mut worst = 0.0f64;
    for (tm, x) in [(106e-6, 1.0), (57.9e-6, 2.0), (80e-6, 3.2), (150e-6, 0.8)] {
        for mode in [EchoMode::Field, EchoMode::Intensity] {
            let t: Vec<f64> = (0..120).map(|i| i as f64 * tm / 50.0).collect();
            let y = t.iter().map(|&t| mims_model(t, 0.9, tm, x, mode)).collect();
            let r = fit_mims(&DecayTrace::new(t, y, None)?, &MimsOptions { mode, ..Default::default() })?;
            let tm_fit = r.get("Tm").unwrap_or(f64::NAN);
            let x_fit = r.get("x").unwrap_or(f64::NAN);
            worst = worst.max((tm_fit / tm - 1.0).abs()).max((x_fit / x - 1.0).abs());
        }
    }
    let w1 = effective_linewidth(106e-6);
    let w2 = effective_linewidth(57.9e-6);
    let ok = worst < 1e-3 && (w1 / 3.00e3 - 1.0).abs() < 5e-3 && (w2 / 5.50e3 - 1.0).abs() < 5e-3;
    outcome(
        ok,
        format!("worst Tm/x error {worst:.1e}, linewidths {:.3} kHz and {:.3} kHz", w1 * 1e-3, w2 * 1e-3),
    )
}

fn perturbed_guess(truth: &ManifoldParams, seed: u64) -> ManifoldParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut k = || 1.0 + rng.random_range(-0.2..=0.2);
    ManifoldParams {
        a: AxialTensor::new(truth.a.parallel * k(), truth.a.perpendicular * k()),
        g: AxialTensor::new(truth.g.parallel * k(), truth.g.perpendicular * k()),
        ..*truth
    }
}

fn hamiltonian_closed_loop() -> Result<Outcome> {
    let model = HamModel::new(ManifoldParams::yb171_yvo4_ground());
    let truth = ManifoldParams::yb171_yvo4_excited();
    let fields = default_fit_fields();
    let start = Instant::now();
    let mut success = 0;
    for seed in 0..100 {
        let obs = synthetic_observations(&model, &truth, &fields, &SyntheticOptions { seed, ..Default::default() })?;
        let guess = perturbed_guess(&truth, seed);
        let Ok(fit) = fit_spin_hamiltonian(&obs, &model, &guess, &HamFitOptions { seed, ..Default::default() })
        else {
            continue;
        };
        let ex = fit.excited;
        let ok = (ex.a.parallel - truth.a.parallel).abs() <= 0.05
            && (ex.a.perpendicular - truth.a.perpendicular).abs() <= 0.05
            && (ex.g.parallel - truth.g.parallel).abs() <= 0.1
            && (ex.g.perpendicular - truth.g.perpendicular).abs() <= 0.1;
        if ok {
            success += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        success >= 95 && within_budget(elapsed, 30.0),
        format!("{success}/100 within tolerance, {:.1} s", elapsed.as_secs_f64()),
    )
}

fn zefoz() -> Result<Outcome> {
    let s = SpinSystem::yb171_yvo4();
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, a, b) in [(Manifold::Ground, 3, 4), (Manifold::Excited, 1, 2)] {
        let spec = TransitionSpec::spin(m, a, b)?;
        let g = frequency_gradient(&spec, &s, &FieldVector::zero(), DEFAULT_STEP)?;
        let found = zefoz_search(&spec, &s, &FieldBox::centered(0.05), &ZefozOptions::default())?;
        let nearest = found.iter().map(|r| r.field.magnitude()).fold(f64::INFINITY, f64::min);
        ok &= g.norm < 1e-6 && !g.degenerate && nearest < 1e-6;
        parts.push(format!("{} |grad| {:.1e} GHz/T, nearest point {:.1e} T", spec.label(), g.norm, nearest));
    }
    let elapsed = start.elapsed();
    ok &= within_budget(elapsed, 10.0);
    outcome(ok, format!("{}, {:.2} s", parts.join("; "), elapsed.as_secs_f64()))
}

fn high_field_asymptote() -> Result<Outcome> {
    let s = SpinSystem::yb171_yvo4();
    let mu_b = s.constants.bohr_magneton_over_h;
    let b = 6.0;
    let mut ok = true;
    let mut worst_rel = 0.0f64;
    for m in [Manifold::Ground, Manifold::Excited] {
        let p = s.params(m);
        let ls = s.levels(m, &FieldVector::along_c(b))?;
        let ez = p.g.parallel * mu_b * b;
        let mut asym: Vec<f64> = ProductState::ALL
            .iter()
            .map(|st| ez * st.electron_m() + p.a.parallel * st.electron_m() * st.nuclear_m())
            .collect();
        asym.sort_by(f64::total_cmp);
        // Only the flip-flop pair mixes; its exact shift is bounded by the
        // second-order term (A⊥/2)² / |g∥ μB B|.
        let bound = p.a.perpendicular.powi(2) / (4.0 * ez.abs());
        for (e, a) in ls.energies.iter().zip(&asym) {
            ok &= (e - a).abs() <= bound * (1.0 + 1e-9) + 1e-12;
            worst_rel = worst_rel.max(((e - a) / a).abs());
        }
    }
    outcome(ok, format!("worst relative deviation {worst_rel:.2e} at 6 T"))
}

fn ramp_continuity() -> Result<Outcome> {
    let s = SpinSystem::yb171_yvo4();
    let mu_b = s.constants.bohr_magneton_over_h;
    let fields: Vec<f64> = (0..=200).map(|i| i as f64 * 5e-4).collect();
    let setup = SpectrumSetup {
        moments: TransitionMoment::default_pair(DEFAULT_PI_AMPLITUDE, DEFAULT_SIGMA_AMPLITUDE),
        shape: LineshapeParams::default(),
        temperature: 2.0,
        scale: 389.7,
        grid: DetuningGrid::new(-12.0, 12.0, 2401)?,
        pol: Polarization::Sigma,
    };
    let map = field_ramp_map(&s, &FieldVector::new(1.0, 0.0, 0.0), &fields, &setup)?;
    let gmax = |p: &ManifoldParams| p.g.parallel.abs().max(p.g.perpendicular.abs());
    let lipschitz = 0.5 * mu_b * (gmax(&s.ground) + gmax(&s.excited));
    let mut worst_ratio = 0.0f64;
    for k in 1..map.fields.len() {
        let db = map.fields[k] - map.fields[k - 1];
        for (a, b) in map.lines[k - 1].iter().zip(&map.lines[k]) {
            worst_ratio = worst_ratio.max((b.freq - a.freq).abs() / (lipschitz * db));
        }
    }
    // Zero-field σ set from the closed forms.
    let g0 = closed_form(s.ground.a.parallel, s.ground.a.perpendicular);
    let e0 = closed_form(s.excited.a.parallel, s.excited.a.perpendicular);
    let mut expect: Vec<f64> = Vec::new();
    for line in allowed(&map.lines[0], Polarization::Sigma) {
        expect.push(e0[line.excited_index - 1] - g0[line.ground_index - 1]);
    }
    let sigma_at_zero: Vec<f64> = allowed(&map.lines[0], Polarization::Sigma).map(|l| l.freq).collect();
    let worst_zero = sigma_at_zero
        .iter()
        .zip(&expect)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut distinct = expect.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
    let reference = [-1.695, 1.675, 0.3475, -0.3275];
    let set_ok = distinct.len() == 4 && reference.iter().all(|r| distinct.iter().any(|d| (d - r).abs() < 1e-8));
    outcome(
        worst_ratio <= 1.0 && worst_zero < 1e-8 && set_ok,
        format!("max step / Lipschitz bound {worst_ratio:.3}, B = 0 sigma error {worst_zero:.1e} GHz"),
    )
}

fn main() -> ExitCode {
    type Check = fn() -> Result<Outcome>;
    let checks: [(&str, Check); 10] = [
        ("zero-field structure", zero_field_structure),
        ("hyperfine constants round trip", constants_round_trip),
        ("selection-rule pattern", selection_rules),
        ("absorption table reproduction", table_reproduction),
        ("branching ratio", branching),
        ("Mims and linewidth consistency", mims_and_linewidth),
        ("spin-Hamiltonian closed loop", hamiltonian_closed_loop),
        ("ZEFOZ at zero field", zefoz),
        ("high-field asymptote", high_field_asymptote),
        ("ramp continuity", ramp_continuity),
    ];
    let mut failures = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!("{} {:>2}. {name}: {detail}", if pass { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{}/{} criteria passed", checks.len() - failures, checks.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
