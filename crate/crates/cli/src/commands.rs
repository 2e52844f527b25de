use std::path::Path;

use ybspin::fit::{fit_exponential, fit_lorentzian, fit_mims, DecayTrace, EchoMode, FitResult, MimsOptions};
use ybspin::hamfit::{fit_spin_hamiltonian, HamModel, PeakObservation};
use ybspin::photophysics::{absorption_table, aggregate_radiative_rate, branching_ratio, rate_records};
use ybspin::spectra::{
    boltzmann_populations, field_ramp_map, system_spectrum, yb171_adjacency, Polarization, SpectrumSetup,
};
use ybspin::spinham::{FieldVector, Manifold};
use ybspin::zefoz::{zefoz_search, TransitionSpec};

use crate::config::Config;
use crate::error::CliError;
use crate::io::{num, Table};

/// Output text plus the reason the run should exit nonzero, if any.
pub struct Output {
    pub text: String,
    pub summary: String,
    pub flag: Option<String>,
}

impl Output {
    fn plain(text: String) -> Self {
        Self {
            text,
            summary: String::new(),
            flag: None,
        }
    }
}

pub fn levels(cfg: &Config, b: FieldVector) -> Result<Output, CliError> {
    let system = cfg.system()?;
    let mut text = String::from("manifold,level,label,energy_ghz,weight_uU,weight_uD,weight_dU,weight_dD\n");
    for m in [Manifold::Ground, Manifold::Excited] {
        let ls = system.levels(m, &b)?;
        for i in 0..4 {
            let w = ls.product_weights(i);
            text.push_str(&format!(
                "{m},{},{},{},{},{},{},{}\n",
                i + 1,
                ls.labels[i],
                num(ls.absolute_energy(i)),
                num(w[0]),
                num(w[1]),
                num(w[2]),
                num(w[3])
            ));
        }
    }
    Ok(Output::plain(text))
}

fn setup(cfg: &Config, pol: Polarization) -> Result<SpectrumSetup, CliError> {
    Ok(SpectrumSetup {
        moments: cfg.moments(),
        shape: cfg.shape()?,
        temperature: cfg.spectrum.temperature,
        scale: cfg.spectrum.scale,
        grid: cfg.grid()?,
        pol,
    })
}

pub fn spectrum(cfg: &Config, b: FieldVector, pol: Polarization) -> Result<Output, CliError> {
    let s = system_spectrum(&cfg.system()?, &b, &setup(cfg, pol)?)?;
    let mut text = String::from("detuning_ghz,alpha_per_cm\n");
    for (d, a) in s.detunings.iter().zip(&s.alpha) {
        text.push_str(&format!("{},{}\n", num(*d), num(*a)));
    }
    Ok(Output {
        summary: format!("integrated absorption {} GHz/cm\n", num(s.integral())),
        ..Output::plain(text)
    })
}

/// One row per field value; columns are detunings.
pub fn ramp(cfg: &Config, orientation: FieldVector, fields: &[f64], pol: Polarization) -> Result<Output, CliError> {
    let map = field_ramp_map(&cfg.system()?, &orientation, fields, &setup(cfg, pol)?)?;
    let mut text = String::from("field_t");
    for d in &map.detunings {
        text.push(',');
        text.push_str(&num(*d));
    }
    text.push('\n');
    for (b, row) in map.fields.iter().zip(&map.alpha) {
        text.push_str(&num(*b));
        for a in row {
            text.push(',');
            text.push_str(&num(*a));
        }
        text.push('\n');
    }
    Ok(Output::plain(text))
}

fn read_observations(path: &Path) -> Result<Vec<PeakObservation>, CliError> {
    let t = Table::read(path)?;
    let (bx, by, bz) = (t.column("bx")?, t.column("by")?, t.column("bz")?);
    let (pol, freq, unc) = (t.column("pol")?, t.column("freq")?, t.column("uncertainty")?);
    let label = t.optional_column("label");
    (0..t.len())
        .map(|r| {
            let p: Polarization = t.text(r, pol).parse().map_err(|e| t.error(r, e))?;
            let obs = PeakObservation {
                field: FieldVector::new(t.float(r, bx)?, t.float(r, by)?, t.float(r, bz)?),
                pol: p,
                freq: t.float(r, freq)?,
                uncertainty: t.float(r, unc)?,
                label: label.map(|c| t.text(r, c).to_string()).filter(|s| !s.is_empty()),
            };
            obs.validate().map_err(|e| t.error(r, e))?;
            Ok(obs)
        })
        .collect()
}

fn fit_output(result: &FitResult) -> Output {
    let flag = result.is_flagged().then(|| {
        result
            .flags
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    });
    Output {
        text: format!("{}\n{}\n", result.csv_header(), result.csv_row()),
        summary: result.to_kv(),
        flag,
    }
}

pub fn fit_ham(cfg: &Config, observations: &Path, seed: Option<u64>) -> Result<Output, CliError> {
    let system = cfg.system()?;
    let obs = read_observations(observations)?;
    let model = HamModel {
        ground: system.ground,
        constants: system.constants,
        nuclear: system.nuclear_zeeman,
        moments: cfg.moments(),
    };
    let fit = fit_spin_hamiltonian(&obs, &model, &system.excited, &cfg.fit_options(seed))?;
    let mut out = fit_output(&fit.result);
    out.summary.push_str(&format!(
        "matched = {}/{}\nstart = {}\n",
        fit.assignment.matched_count(),
        obs.len(),
        fit.start_index
    ));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DecayModel {
    Exp,
    Mims,
    Lorentzian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Detection {
    Field,
    Intensity,
}

pub fn fit_decay(path: &Path, model: DecayModel, mode: Detection) -> Result<Output, CliError> {
    let t = Table::read(path)?;
    let result = match model {
        DecayModel::Lorentzian => fit_lorentzian(&t.floats("x")?, &t.floats("y")?)?,
        DecayModel::Exp | DecayModel::Mims => {
            let times = t.floats("time")?;
            let values = t.floats("value")?;
            let sigma = match t.optional_column("sigma") {
                Some(_) => Some(t.floats("sigma")?),
                None => None,
            };
            let trace = DecayTrace::new(times, values, sigma)?;
            if model == DecayModel::Exp {
                fit_exponential(&trace)?
            } else {
                let mode = match mode {
                    Detection::Field => EchoMode::Field,
                    Detection::Intensity => EchoMode::Intensity,
                };
                fit_mims(&trace, &MimsOptions { mode, fixed_x: None })?
            }
        }
    };
    Ok(fit_output(&result))
}

pub fn table1(cfg: &Config, path: &Path) -> Result<Output, CliError> {
    let t = Table::read(path)?;
    let (label, pol, area) = (t.column("label")?, t.column("pol")?, t.column("integrated_alpha")?);
    let lines = (0..t.len())
        .map(|r| {
            let p: Polarization = t.text(r, pol).parse().map_err(|e| t.error(r, e))?;
            Ok((t.text(r, label).to_string(), p, t.float(r, area)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let system = cfg.system()?;
    let ground = system.levels(Manifold::Ground, &FieldVector::zero())?;
    let pops = boltzmann_populations(&ground, cfg.photophysics.temperature, &system.constants)?;
    let rows = absorption_table(
        &lines,
        &yb171_adjacency(),
        &pops,
        cfg.photophysics.number_density,
        &cfg.medium(),
    )?;
    let mut text = String::from(
        "label,pol,integrated_alpha_ghz_per_cm,oscillator_strength,emission_oscillator_strength,radiative_rate_per_s\n",
    );
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label,
            r.pol,
            num(r.integrated_alpha),
            num(r.oscillator_strength),
            num(r.emission_oscillator_strength),
            num(r.radiative_rate)
        ));
    }
    let agg = aggregate_radiative_rate(&rate_records(&rows), cfg.aggregation()?)?;
    let beta = branching_ratio(cfg.photophysics.fluorescence_lifetime, agg.tau_rad)?;
    Ok(Output {
        text,
        summary: format!("tau_rad = {}\nbeta = {}\n", num(agg.tau_rad), num(beta.beta)),
        flag: (!beta.is_physical()).then(|| format!("branching ratio {} exceeds 1", num(beta.beta))),
    })
}

/// "g3" or "e1".
fn parse_level(s: &str) -> Result<(Manifold, usize), CliError> {
    let s = s.trim();
    let bad = || CliError::Usage(format!("level '{s}' must look like g3 or e1"));
    let mut chars = s.chars();
    let manifold = match chars.next().map(|c| c.to_ascii_lowercase()) {
        Some('g') => Manifold::Ground,
        Some('e') => Manifold::Excited,
        _ => return Err(bad()),
    };
    let index = chars.as_str().parse().map_err(|_| bad())?;
    Ok((manifold, index))
}

pub fn parse_transition(s: &str) -> Result<TransitionSpec, CliError> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("transition '{s}' must be two levels such as g3,g4")))?;
    let (ma, la) = parse_level(a)?;
    let (mb, lb) = parse_level(b)?;
    TransitionSpec::new(ma, la, mb, lb).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn zefoz(
    cfg: &Config,
    transition: Option<&str>,
    half_width: Option<f64>,
    threshold: Option<f64>,
    seed: Option<u64>,
) -> Result<Output, CliError> {
    let spec = parse_transition(transition.unwrap_or(&cfg.zefoz.transition))?;
    let domain = match half_width {
        Some(h) if !(h > 0.0) => return Err(CliError::Usage(format!("search box half-width {h} T is empty"))),
        Some(h) => ybspin::zefoz::FieldBox::centered(h),
        None => cfg.box_domain(),
    };
    if (0..3).any(|k| !(domain.upper[k] > domain.lower[k])) {
        return Err(CliError::Usage("search box is empty".into()));
    }
    let reports = zefoz_search(&spec, &cfg.system()?, &domain, &cfg.zefoz_options(seed, threshold))?;
    let mut text = String::from("bx_t,by_t,bz_t,freq_ghz,grad_x,grad_y,grad_z,gradient_norm\n");
    for r in &reports {
        let b = r.field.components();
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            num(b[0]),
            num(b[1]),
            num(b[2]),
            num(r.freq),
            num(r.gradient[0]),
            num(r.gradient[1]),
            num(r.gradient[2]),
            num(r.gradient_norm)
        ));
    }
    Ok(Output {
        summary: format!("{}: {} point(s)\n", spec.label(), reports.len()),
        ..Output::plain(text)
    })
}
