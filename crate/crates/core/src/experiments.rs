//! Named protocols producing result tables: circulation, two-photon
//! circulation, chevrons, spectra, adiabatic ground-state preparation,
//! darkon sweeps, eigenstate preparation, entanglement dynamics, g₀ fitting
//! and the decoherence comparisons.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde_json::Value;

use crate::device::{DeviceSpec, LinkSpec, SiteSpec};
use crate::dynamics::{
    evolve_lindblad, evolve_noisy_ensemble, evolve_unitary, uniform_grid, ClassicalNoiseSpec, NoiseChannel,
    PropagatorConfig, Trajectory,
};
use crate::error::{Error, Result};
use crate::fock::{reduced_density, CMatrix, CVector, FockBasis, Operator, StateVector, C64};
use crate::hamiltonian::{
    build_effective, build_effective_in, build_lab, eigensystem, flux_sweep, Eigensystem, EffectiveHamiltonian,
    FrameMap, Generator, StaticHamiltonian,
};
use crate::observables::{
    self, column_current, column_n, column_p, column_purity, energy, energy_variance, fidelity_mixed,
    manifold_coherence, ObservableSet, COLUMN_CHIRAL,
};
use crate::units;

#[derive(Clone, Debug, PartialEq)]
pub enum Layout {
    /// Line chart of `ys` against `x`.
    Series { x: String, ys: Vec<String> },
    /// One line of `y` against `x` per distinct value of the `by` columns.
    Grouped { x: String, y: String, by: Vec<String> },
    /// Heatmap of `value` over (`x`, `y`).
    Grid { x: String, y: String, value: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentResult {
    pub name: String,
    pub params: BTreeMap<String, Value>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub summary: BTreeMap<String, Value>,
    pub warnings: Vec<String>,
    pub layout: Layout,
    /// Serialized device configuration the run used.
    pub device_toml: Option<String>,
    pub seed: Option<u64>,
    pub dt_ns: Option<f64>,
    pub drift: f64,
}

impl ExperimentResult {
    pub fn new(name: &str, columns: Vec<String>, layout: Layout) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            columns,
            rows: Vec::new(),
            summary: BTreeMap::new(),
            warnings: Vec::new(),
            layout,
            device_toml: None,
            seed: None,
            dt_ns: None,
            drift: 0.0,
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the schema");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn param(&mut self, key: &str, value: impl Into<Value>) {
        self.params.insert(key.to_string(), value.into());
    }

    pub fn note(&mut self, key: &str, value: impl Into<Value>) {
        self.summary.insert(key.to_string(), value.into());
    }

    fn with_device(mut self, device: &DeviceSpec) -> Self {
        self.device_toml = Some(crate::device::serialize_config(device));
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    Lab,
    Effective,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Lab => "lab",
            Frame::Effective => "effective",
        }
    }
}

/// Sequence of sites in order of their first occupation peak, starting from
/// the initially excited site. `orientation` is +1 along 1→2→3, −1 against
/// it and 0 when the first peaks coincide.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakOrder {
    pub sequence: Vec<usize>,
    pub orientation: i32,
}

impl PeakOrder {
    pub fn label(&self) -> String {
        if self.orientation == 0 {
            return "none".into();
        }
        self.sequence.iter().map(|s| format!("Q{}", s + 1)).collect::<Vec<_>>().join(">")
    }

    pub fn reverses(&self, other: &PeakOrder) -> bool {
        self.orientation != 0 && self.orientation == -other.orientation
    }
}

fn first_peak_time(times: &[f64], p: &[f64]) -> Option<f64> {
    for i in 1..p.len().saturating_sub(1) {
        if p[i] >= p[i - 1] && p[i] > p[i + 1] && p[i] > 0.05 {
            let (a, b, c) = (p[i - 1], p[i], p[i + 1]);
            let denom = a - 2.0 * b + c;
            let shift = if denom.abs() > 1e-300 { 0.5 * (a - c) / denom } else { 0.0 };
            return Some(times[i] + shift * (times[i + 1] - times[i]));
        }
    }
    None
}

/// Peak order of occupation `traces` (indexed by site) on a ring.
pub fn peak_order(times: &[f64], traces: &[Vec<f64>], start: usize) -> PeakOrder {
    let n = traces.len();
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let tol = 1e-6 * span.max(1.0);
    let mut peaks: Vec<(f64, usize)> = (0..n)
        .filter(|&k| k != start)
        .map(|k| (first_peak_time(times, &traces[k]).unwrap_or(f64::INFINITY), k))
        .collect();
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut sequence = vec![start];
    sequence.extend(peaks.iter().map(|p| p.1));
    let orientation = if peaks.len() < 2 || !peaks[0].0.is_finite() || (peaks[1].0 - peaks[0].0).abs() <= tol {
        0
    } else if peaks[0].1 == (start + 1) % n {
        1
    } else if (peaks[0].1 + 1) % n == start {
        -1
    } else {
        0
    };
    PeakOrder { sequence, orientation }
}

fn check_uniform(times: &[f64]) -> Result<f64> {
    if times.len() < 8 {
        return Err(Error::Numerical("period detection needs at least 8 samples".into()));
    }
    let dt = times[1] - times[0];
    if !(dt > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::Numerical("period detection needs a uniform grid".into()));
    }
    Ok(dt)
}

/// Residual of the least-squares fit of offset plus three harmonics of `f`.
fn harmonic_rss(times: &[f64], signal: &[f64], f: f64) -> f64 {
    let cols = 7;
    let a = DMatrix::from_fn(times.len(), cols, |r, c| {
        let w = 2.0 * PI * f * times[r] * c.div_ceil(2) as f64;
        match c {
            0 => 1.0,
            c if c % 2 == 1 => w.cos(),
            _ => w.sin(),
        }
    });
    let y = DVector::from_column_slice(signal);
    let svd = a.clone().svd(true, true);
    match svd.solve(&y, 1e-12) {
        Ok(x) => (a * x - y).norm_squared(),
        Err(_) => f64::INFINITY,
    }
}

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Dominant oscillation frequency (1/ns) of a uniformly sampled signal.
///
/// Coarse estimate from the largest nonzero peak of a Hann-windowed,
/// zero-padded FFT with parabolic interpolation; then refined by
/// least-squares fitting an offset plus three harmonics within ±half a bin.
pub fn dominant_frequency(times: &[f64], signal: &[f64]) -> Result<f64> {
    let dt = check_uniform(times)?;
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let var = signal.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var < 1e-12 {
        return Err(Error::Numerical("signal has no oscillation to time".into()));
    }
    let pad = 16;
    let m = n.next_power_of_two() * pad;
    let mut buf: Vec<C64> = (0..m)
        .map(|i| {
            if i < n {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                C64::new((signal[i] - mean) * w, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|z| z.norm()).collect();
    // skip the window's DC main lobe
    let first = ((2.0 * m as f64 / n as f64).ceil() as usize).max(1);
    let last = m / 2;
    if first + 1 >= last {
        return Err(Error::Numerical("record too short for period detection".into()));
    }
    let k = (first..last).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).expect("non-empty range");
    if k == first {
        return Err(Error::Numerical("record shorter than two periods of the dominant oscillation".into()));
    }
    let (a, b, c) = (mag[k - 1], mag[k], mag[k + 1]);
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
    let f0 = (k as f64 + shift) / (m as f64 * dt);
    let half_bin = 0.5 / (n as f64 * dt);
    let f = golden_min((f0 - half_bin).max(1e-12), f0 + half_bin, |f| harmonic_rss(times, signal, f), 80);
    Ok(f)
}

pub fn detect_period(times: &[f64], signal: &[f64]) -> Result<f64> {
    Ok(1.0 / dominant_frequency(times, signal)?)
}

#[derive(Clone, Debug)]
pub struct CirculationOptions {
    pub duration: f64,
    pub sample: f64,
    pub frame: Frame,
    /// Integration step; defaults to the device step (effective) or 0.1 ns (lab).
    pub dt: Option<f64>,
    pub initial: Vec<u8>,
}

impl CirculationOptions {
    pub fn new(num_sites: usize) -> Self {
        let mut initial = vec![0; num_sites];
        initial[0] = 1;
        Self { duration: 600.0, sample: 1.0, frame: Frame::Effective, dt: None, initial }
    }

    pub fn two_photon(num_sites: usize) -> Self {
        let mut o = Self::new(num_sites);
        o.initial = (0..num_sites).map(|i| if i + 1 < num_sites { 1 } else { 0 }).collect();
        o
    }

    fn config(&self, device: &DeviceSpec) -> PropagatorConfig {
        let dt = self.dt.unwrap_or(match self.frame {
            Frame::Effective => device.dt_ns,
            Frame::Lab => 0.1,
        });
        PropagatorConfig::new(dt)
    }
}

/// Occupation traces `[site][time]` and the associated run.
#[derive(Clone, Debug)]
pub struct Circulation {
    pub result: ExperimentResult,
    pub times: Vec<f64>,
    pub occupations: Vec<Vec<f64>>,
    pub period: Option<f64>,
    pub order: PeakOrder,
}

/// Propagate `initial` under the device at its current flux. Returns the
/// trajectory, the observable set in the rotating-frame gauge and, for lab
/// runs, the frame used to rotate states before measuring currents.
fn propagate(
    device: &DeviceSpec,
    initial: &[u8],
    times: &[f64],
    frame: Frame,
    config: &PropagatorConfig,
) -> Result<(Trajectory, ObservableSet, Option<FrameMap>)> {
    if initial.len() != device.num_sites() {
        return Err(Error::Config("initial occupation list has the wrong length".into()));
    }
    match frame {
        Frame::Effective => {
            let sector = initial.iter().map(|&x| x as usize).sum();
            let h = build_effective(device, Some(sector))?;
            let psi = h.basis().ket(initial)?;
            let obs = ObservableSet::for_effective(device, &h)?;
            Ok((evolve_unitary(&h.hamiltonian, &psi, times, config)?, obs, None))
        }
        Frame::Lab => {
            let basis = FockBasis::new(device.num_sites(), device.levels, None)?;
            let h = build_lab(device, &basis)?;
            let eff = build_effective_in(device, &basis)?;
            let obs = ObservableSet::for_effective(device, &eff)?;
            let psi = basis.ket(initial)?;
            Ok((evolve_unitary(&h, &psi, times, config)?, obs, Some(FrameMap::for_device(device))))
        }
    }
}

fn rotated(traj: &Trajectory, frame: &Option<FrameMap>, i: usize) -> StateVector {
    let psi = traj.pure(i).expect("unitary run").clone();
    match frame {
        Some(f) => StateVector::new(psi.tag, f.apply(&traj.basis, traj.times[i], &psi.amps)),
        None => psi,
    }
}

fn occupation_table(name: &str, device: &DeviceSpec, extra: &[String]) -> ExperimentResult {
    let n = device.num_sites();
    let mut cols = vec!["t_ns".to_string()];
    cols.extend((0..n).map(column_p));
    cols.extend((0..n).map(column_n));
    cols.extend(device.links.iter().map(|l| column_current(l.pair.0, l.pair.1)));
    cols.push(COLUMN_CHIRAL.to_string());
    cols.extend(extra.iter().cloned());
    let ys = (0..n).map(column_p).collect();
    ExperimentResult::new(name, cols, Layout::Series { x: "t_ns".into(), ys })
}

fn fill_occupations(
    result: &mut ExperimentResult,
    traj: &Trajectory,
    obs: &ObservableSet,
    frame: &Option<FrameMap>,
    extra: impl Fn(&StateVector, &[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let n = obs.numbers.len();
    let mut traces = vec![Vec::with_capacity(traj.len()); n];
    for i in 0..traj.len() {
        let psi = rotated(traj, frame, i);
        let p = obs.occupations(&psi);
        let mut row = vec![traj.times[i]];
        row.extend(&p);
        row.extend(obs.mean_numbers(&psi));
        row.extend(obs.bond_currents(&psi));
        row.push(obs.chiral_current(&psi).unwrap_or(f64::NAN));
        row.extend(extra(&psi, &p));
        result.push(row);
        for (t, x) in traces.iter_mut().zip(&p) {
            t.push(*x);
        }
    }
    traces
}

/// Single-photon circulation from |100…⟩ (or `options.initial`).
pub fn run_circulation(device: &DeviceSpec, flux: f64, options: &CirculationOptions) -> Result<Circulation> {
    let dev = device.with_flux(flux)?;
    let times = uniform_grid(options.duration, options.sample);
    let config = options.config(&dev);
    let (traj, obs, frame) = propagate(&dev, &options.initial, &times, options.frame, &config)?;
    let mut result = occupation_table("circulation", &dev, &[]).with_device(&dev);
    let traces = fill_occupations(&mut result, &traj, &obs, &frame, |_, _| vec![]);
    let start = options.initial.iter().position(|&x| x > 0).unwrap_or(0);
    let order = peak_order(&times, &traces, start);
    let period = detect_period(&times, &traces[start]).ok();
    result.param("flux_rad", flux);
    result.param("frame", options.frame.name());
    result.param("duration_ns", options.duration);
    result.param("initial", options.initial.iter().map(|x| x.to_string()).collect::<String>());
    result.note("period_ns", period.map(Value::from).unwrap_or(Value::Null));
    result.note("peak_order", order.label());
    result.note("orientation", order.orientation);
    result.dt_ns = Some(config.dt);
    result.drift = traj.drift;
    if period.is_none() {
        result.warnings.push("no dominant oscillation found in the first occupation trace".into());
    }
    Ok(Circulation { result, times, occupations: traces, period, order })
}

/// Two-photon circulation from |110…⟩ with vacancy traces and their order.
pub fn run_two_photon(device: &DeviceSpec, flux: f64, options: &CirculationOptions) -> Result<Circulation> {
    let dev = device.with_flux(flux)?;
    let n = dev.num_sites();
    let times = uniform_grid(options.duration, options.sample);
    let config = options.config(&dev);
    let (traj, obs, frame) = propagate(&dev, &options.initial, &times, options.frame, &config)?;
    let extra: Vec<String> = (0..n).map(|j| format!("v_q{}", j + 1)).collect();
    let mut result = occupation_table("two_photon", &dev, &extra).with_device(&dev);
    result.layout = Layout::Series { x: "t_ns".into(), ys: extra.clone() };
    let traces = fill_occupations(&mut result, &traj, &obs, &frame, |_, p| p.iter().map(|x| 1.0 - x).collect());
    let vacancies: Vec<Vec<f64>> = traces.iter().map(|t| t.iter().map(|x| 1.0 - x).collect()).collect();
    let start = options.initial.iter().position(|&x| x == 0).unwrap_or(0);
    let order = peak_order(&times, &vacancies, start);
    let period = detect_period(&times, &vacancies[start]).ok();
    result.param("flux_rad", flux);
    result.param("frame", options.frame.name());
    result.param("duration_ns", options.duration);
    result.param("initial", options.initial.iter().map(|x| x.to_string()).collect::<String>());
    result.note("period_ns", period.map(Value::from).unwrap_or(Value::Null));
    result.note("vacancy_peak_order", order.label());
    result.note("orientation", order.orientation);
    result.dt_ns = Some(config.dt);
    result.drift = traj.drift;
    Ok(Circulation { result, times, occupations: vacancies, period, order })
}

/// Time-reversal metric over one detected period.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrsMetric {
    pub period: f64,
    /// max over sites and t ∈ [0, T] of |P_j(t) − P_j(T − t)|.
    pub d: f64,
}

pub fn trs_metric(device: &DeviceSpec, flux: f64) -> Result<TrsMetric> {
    let opts = CirculationOptions::new(device.num_sites());
    let run = run_circulation(device, flux, &opts)?;
    let period = run.period.ok_or_else(|| Error::Numerical("period detection failed".into()))?;
    let steps = 400;
    let times: Vec<f64> = (0..=steps).map(|i| i as f64 * period / steps as f64).collect();
    let dev = device.with_flux(flux)?;
    let (traj, obs, frame) = propagate(&dev, &opts.initial, &times, opts.frame, &opts.config(&dev))?;
    let p: Vec<Vec<f64>> = (0..traj.len()).map(|i| obs.occupations(&rotated(&traj, &frame, i))).collect();
    let mut d: f64 = 0.0;
    for i in 0..=steps {
        for j in 0..dev.num_sites() {
            d = d.max((p[i][j] - p[steps - i][j]).abs());
        }
    }
    Ok(TrsMetric { period, d })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChevronMode {
    /// Static coupling g/2π = 2 MHz, sweep of the qubit detuning.
    Static,
    /// g₀/2π = 4 MHz at 35 MHz detuning, sweep of the modulation frequency.
    Parametric,
}

/// Two-qubit device for one chevron column at sweep offset `x_mhz`.
pub fn chevron_device(mode: ChevronMode, x_mhz: f64) -> DeviceSpec {
    let site = |omega_ghz| SiteSpec { omega_ghz, u2_mhz: 200.0, u3_mhz: 200.0, t1_us: None, tphi_us: None };
    let (omega2, link) = match mode {
        ChevronMode::Static => (
            5.8 + x_mhz * 1e-3,
            LinkSpec { pair: (0, 1), g0_mhz: 0.0, delta_mhz: 0.0, phi_rad: 0.0, gdc_mhz: 2.0 },
        ),
        ChevronMode::Parametric => (
            5.835,
            LinkSpec { pair: (0, 1), g0_mhz: 4.0, delta_mhz: 35.0 + x_mhz, phi_rad: 0.0, gdc_mhz: 0.0 },
        ),
    };
    DeviceSpec { sites: vec![site(5.8), site(omega2)], links: vec![link], levels: 2, dt_ns: 1.0 }
}

/// P_Q1(t) over a sweep of detuning (static) or modulation-frequency offset
/// (parametric), integrated in the lab frame.
pub fn run_chevron(mode: ChevronMode, sweep_mhz: &[f64], duration: f64, sample: f64) -> Result<ExperimentResult> {
    if sweep_mhz.is_empty() {
        return Err(Error::Config("chevron sweep is empty".into()));
    }
    let times = uniform_grid(duration, sample);
    let columns: Vec<Vec<f64>> = sweep_mhz
        .par_iter()
        .map(|&x| {
            let dev = chevron_device(mode, x);
            let basis = FockBasis::new(2, 2, Some(1))?;
            let h = build_lab(&dev, &basis)?;
            let traj = evolve_unitary(&h, &basis.ket(&[1, 0])?, &times, &PropagatorConfig::lab())?;
            Ok(traj.mean_occupations().swap_remove(0))
        })
        .collect::<Result<_>>()?;
    let mut result = ExperimentResult::new(
        "chevron",
        vec!["sweep_mhz".into(), "t_ns".into(), "p_q1".into()],
        Layout::Grid { x: "t_ns".into(), y: "sweep_mhz".into(), value: "p_q1".into() },
    );
    for (x, col) in sweep_mhz.iter().zip(&columns) {
        for (t, p) in times.iter().zip(col) {
            result.push(vec![*x, *t, *p]);
        }
    }
    result.param(
        "mode",
        match mode {
            ChevronMode::Static => "static",
            ChevronMode::Parametric => "parametric",
        },
    );
    result.param("duration_ns", duration);
    result.dt_ns = Some(PropagatorConfig::lab().dt);
    Ok(result)
}

/// First minimum of P_Q1 on the resonant static chevron column (ns).
pub fn resonant_transfer_time(duration: f64, sample: f64) -> Result<f64> {
    let times = uniform_grid(duration, sample);
    let dev = chevron_device(ChevronMode::Static, 0.0);
    let basis = FockBasis::new(2, 2, Some(1))?;
    let h = build_lab(&dev, &basis)?;
    let traj = evolve_unitary(&h, &basis.ket(&[1, 0])?, &times, &PropagatorConfig::lab())?;
    let p: Vec<f64> = traj.mean_occupations()[0].iter().map(|x| -x).collect();
    first_peak_time(&times, &p.iter().map(|x| x + 1.0).collect::<Vec<_>>())
        .ok_or_else(|| Error::Numerical("no transfer minimum inside the window".into()))
}

/// Exact ⟨Î_chiral⟩ of the ground state, averaged over a degenerate ground
/// space.
pub fn ground_chiral_current(device: &DeviceSpec, flux: f64, manifold: usize) -> Result<f64> {
    let dev = device.with_flux(flux)?;
    let h = build_effective(&dev, Some(manifold))?;
    let obs = ObservableSet::for_effective(&dev, &h)?;
    let es = eigensystem(h.op())?;
    ground_average(&es, |v| obs.chiral_current(v).unwrap_or(0.0), h.basis())
}

fn ground_average(es: &Eigensystem, f: impl Fn(&StateVector) -> f64, basis: &FockBasis) -> Result<f64> {
    let ground = es.clusters().into_iter().next().ok_or_else(|| Error::Numerical("empty spectrum".into()))?;
    let total: f64 = ground.clone().map(|i| f(&StateVector::new(basis.tag(), es.vector(i)))).sum();
    Ok(total / ground.len() as f64)
}

/// Flux-sweep spectra of the one- and two-excitation manifolds in long form:
/// one row per (flux, manifold, band) with the ground-state gap.
pub fn run_spectrum(device: &DeviceSpec, grid: &[f64]) -> Result<ExperimentResult> {
    if grid.is_empty() {
        return Err(Error::Config("flux grid is empty".into()));
    }
    let manifolds: Vec<usize> = (1..device.num_sites()).take(2).collect();
    let mut result = ExperimentResult::new(
        "spectrum",
        vec!["flux_rad".into(), "manifold".into(), "band_index".into(), "energy_mhz".into(), "gap_mhz".into()],
        Layout::Grouped { x: "flux_rad".into(), y: "energy_mhz".into(), by: vec!["manifold".into(), "band_index".into()] },
    )
    .with_device(device);
    for &m in &manifolds {
        let sweep = flux_sweep(device, grid, Some(m))?;
        let gaps = sweep.gaps();
        for ((phi, es), gap) in grid.iter().zip(&sweep.spectra).zip(&gaps) {
            for (k, e) in es.values.iter().enumerate() {
                result.push(vec![*phi, m as f64, k as f64, units::to_mhz(*e), units::to_mhz(*gap)]);
            }
        }
        let (imax, gmax) = gaps.iter().enumerate().fold((0, f64::MIN), |a, (i, &g)| if g > a.1 { (i, g) } else { a });
        let (imin, gmin) = gaps.iter().enumerate().fold((0, f64::MAX), |a, (i, &g)| if g < a.1 { (i, g) } else { a });
        result.note(&format!("max_gap_mhz_m{m}"), units::to_mhz(gmax));
        result.note(&format!("max_gap_flux_m{m}"), grid[imax]);
        result.note(&format!("min_gap_mhz_m{m}"), units::to_mhz(gmin));
        result.note(&format!("min_gap_flux_m{m}"), grid[imin]);
    }
    let g0 = device.links.iter().map(|l| l.g0_mhz).sum::<f64>() / device.links.len().max(1) as f64;
    result.note("gap_3j_mhz", 1.5 * g0);
    result.note("gap_3g0_mhz", 3.0 * g0);
    result.note(
        "gap_convention",
        format!(
            "hop amplitude J = g0/2: the largest gap is 3J = 1.5 g0 = {:.3} MHz; a 3 g0 reading would give {:.3} MHz",
            1.5 * g0,
            3.0 * g0
        ),
    );
    result.param("points", grid.len());
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RampShape {
    Linear,
    Cosine,
}

impl RampShape {
    fn s(self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            RampShape::Linear => x,
            RampShape::Cosine => 0.5 * (1.0 - (PI * x).cos()),
        }
    }

    /// ∫₀ᵗ s(τ/T) dτ.
    fn integral(self, t: f64, total: f64) -> f64 {
        if t >= total {
            return 0.5 * total + (t - total);
        }
        match self {
            RampShape::Linear => t * t / (2.0 * total),
            RampShape::Cosine => 0.5 * t - total / (2.0 * PI) * (PI * t / total).sin(),
        }
    }
}

/// Interpolation H(s) = s·H_target + (1 − s)·B over `duration`, where B
/// lowers the initially occupied sites by `bias_mhz`. With zero bias only
/// the coupling amplitude is ramped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RampSchedule {
    pub duration: f64,
    pub shape: RampShape,
    /// Defaults to 1.5 g₀ (three hop amplitudes) when `None`.
    pub bias_mhz: Option<f64>,
}

impl RampSchedule {
    pub fn linear(duration: f64) -> Self {
        Self { duration, shape: RampShape::Linear, bias_mhz: None }
    }
}

struct RampGenerator {
    basis: FockBasis,
    target_diag: DVector<f64>,
    target_off: CMatrix,
    bias: DVector<f64>,
    schedule: RampSchedule,
}

impl Generator for RampGenerator {
    fn basis(&self) -> &FockBasis {
        &self.basis
    }
    fn frame_rates(&self, t: f64) -> DVector<f64> {
        let s = self.schedule.shape.s(t / self.schedule.duration);
        &self.target_diag * s + &self.bias * (1.0 - s)
    }
    fn frame_phases(&self, t: f64) -> DVector<f64> {
        let i = self.schedule.shape.integral(t, self.schedule.duration);
        &self.target_diag * i + &self.bias * (t - i)
    }
    fn residual(&self, t: f64) -> CMatrix {
        &self.target_off * C64::new(self.schedule.shape.s(t / self.schedule.duration), 0.0)
    }
}

/// Final state of the ramp from `initial` into `h`.
pub fn ramp_state(
    device: &DeviceSpec,
    h: &EffectiveHamiltonian,
    initial: &[u8],
    schedule: &RampSchedule,
) -> Result<StateVector> {
    if !(schedule.duration > 0.0) {
        return Err(Error::Config("ramp duration must be positive".into()));
    }
    let basis = h.basis().clone();
    let g0 = device.links.iter().map(|l| l.g0_mhz).fold(0.0, f64::max);
    let eps = units::mhz(schedule.bias_mhz.unwrap_or(1.5 * g0));
    let bias = DVector::from_iterator(
        basis.dim(),
        basis.states().iter().map(|s| {
            -eps * s.iter().zip(initial).filter(|(_, &o)| o > 0).map(|(&n, _)| n as f64).sum::<f64>()
        }),
    );
    let m = &h.op().matrix;
    let target_diag = DVector::from_iterator(basis.dim(), m.diagonal().iter().map(|z| z.re));
    let mut target_off = m.clone();
    for i in 0..basis.dim() {
        target_off[(i, i)] = C64::new(0.0, 0.0);
    }
    let ramp = RampGenerator { basis: basis.clone(), target_diag, target_off, bias, schedule: *schedule };
    let psi0 = basis.ket(initial)?;
    let traj = evolve_unitary(&ramp, &psi0, &[0.0, schedule.duration], &PropagatorConfig::new(device.dt_ns))?;
    Ok(traj.pure(1).expect("unitary").clone())
}

fn manifold_initial(num_sites: usize, manifold: usize) -> Result<Vec<u8>> {
    if manifold == 0 || manifold >= num_sites {
        return Err(Error::Config(format!("manifold must be between 1 and {}", num_sites - 1)));
    }
    Ok((0..num_sites).map(|i| u8::from(i < manifold)).collect())
}

/// Weight of `psi` in the ground space of `h`.
fn ground_fidelity(h: &EffectiveHamiltonian, psi: &StateVector) -> Result<f64> {
    let es = eigensystem(h.op())?;
    let ground = es.clusters().into_iter().next().expect("non-empty");
    Ok(ground.map(|i| fidelity_mixed(&StateVector::new(psi.tag, es.vector(i)), psi)).sum())
}

/// Fidelity of the ramped state with the exact ground space.
pub fn adiabatic_fidelity(device: &DeviceSpec, flux: f64, schedule: &RampSchedule, manifold: usize) -> Result<f64> {
    let dev = device.with_flux(flux)?;
    let h = build_effective(&dev, Some(manifold))?;
    let initial = manifold_initial(dev.num_sites(), manifold)?;
    let psi = ramp_state(&dev, &h, &initial, schedule)?;
    ground_fidelity(&h, &psi)
}

/// Ramped and exact ground-state chiral currents over a flux grid.
pub fn run_adiabatic(
    device: &DeviceSpec,
    grid: &[f64],
    schedule: &RampSchedule,
    manifold: usize,
) -> Result<ExperimentResult> {
    let initial = manifold_initial(device.num_sites(), manifold)?;
    let rows: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|&phi| {
            let dev = device.with_flux(phi)?;
            let h = build_effective(&dev, Some(manifold))?;
            let obs = ObservableSet::for_effective(&dev, &h)?;
            let psi = ramp_state(&dev, &h, &initial, schedule)?;
            let ramped = obs.chiral_current(&psi).unwrap_or(f64::NAN);
            let reference = ground_chiral_current(device, phi, manifold)?;
            let fid = ground_fidelity(&h, &psi)?;
            let es = eigensystem(h.op())?;
            let gap = if es.values.len() > 1 { es.values[1] - es.values[0] } else { 0.0 };
            Ok(vec![phi, ramped, reference, fid, units::to_mhz(gap)])
        })
        .collect::<Result<_>>()?;
    let mut result = ExperimentResult::new(
        "adiabatic",
        vec!["flux_rad".into(), "i_chiral".into(), "i_chiral_ref".into(), "fidelity".into(), "gap_mhz".into()],
        Layout::Series { x: "flux_rad".into(), ys: vec!["i_chiral".into(), "i_chiral_ref".into()] },
    )
    .with_device(device);
    for r in rows {
        result.push(r);
    }
    result.param("manifold", manifold);
    result.param("ramp_ns", schedule.duration);
    result.param(
        "shape",
        match schedule.shape {
            RampShape::Linear => "linear",
            RampShape::Cosine => "cosine",
        },
    );
    let g0 = device.links.iter().map(|l| l.g0_mhz).fold(0.0, f64::max);
    result.param("bias_mhz", schedule.bias_mhz.unwrap_or(1.5 * g0));
    result.dt_ns = Some(device.dt_ns);
    Ok(result)
}

/// cos α |100⟩ + sin α |011⟩ (single excitation on site 1 paired with its
/// complement).
pub fn darkon_state(basis: &FockBasis, alpha: f64) -> Result<StateVector> {
    let n = basis.num_sites();
    let one: Vec<u8> = (0..n).map(|i| u8::from(i == 0)).collect();
    let two: Vec<u8> = one.iter().map(|x| 1 - x).collect();
    let a = basis.ket(&one)?;
    let b = basis.ket(&two)?;
    Ok(StateVector::new(basis.tag(), a.amps * C64::new(alpha.cos(), 0.0) + b.amps * C64::new(alpha.sin(), 0.0)))
}

fn time_variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Occupations under mixtures of one- and two-photon circulation.
pub fn run_darkon(device: &DeviceSpec, flux: f64, alphas: &[f64], duration: f64) -> Result<ExperimentResult> {
    if alphas.iter().any(|a| !(0.0..=PI / 2.0 + 1e-12).contains(a)) {
        return Err(Error::Config("mixing angle must lie in [0, pi/2]".into()));
    }
    let dev = device.with_flux(flux)?;
    let h = build_effective(&dev, None)?;
    let basis = h.basis().clone();
    let n = dev.num_sites();
    let times = uniform_grid(duration, 1.0);
    let cfg = PropagatorConfig::new(dev.dt_ns);
    let run = |alpha: f64| -> Result<Vec<Vec<f64>>> {
        let traj = evolve_unitary(&h.hamiltonian, &darkon_state(&basis, alpha)?, &times, &cfg)?;
        Ok(traj.mean_occupations())
    };
    let traces: Vec<Vec<Vec<f64>>> = alphas.par_iter().map(|&a| run(a)).collect::<Result<_>>()?;
    let p0 = run(0.0)?;
    let p1 = run(PI / 2.0)?;

    let mut cols = vec!["alpha_rad".to_string(), "t_ns".to_string()];
    cols.extend((0..n).map(column_p));
    let mut result = ExperimentResult::new(
        "darkon",
        cols,
        Layout::Grid { x: "t_ns".into(), y: "alpha_rad".into(), value: column_p(n - 1) },
    )
    .with_device(&dev);
    let mut mixing: f64 = 0.0;
    let mut variances = Vec::new();
    for (alpha, tr) in alphas.iter().zip(&traces) {
        let (c2, s2) = (alpha.cos().powi(2), alpha.sin().powi(2));
        for (i, t) in times.iter().enumerate() {
            let mut row = vec![*alpha, *t];
            for j in 0..n {
                row.push(tr[j][i]);
                mixing = mixing.max((tr[j][i] - c2 * p0[j][i] - s2 * p1[j][i]).abs());
            }
            result.push(row);
        }
        variances.push(time_variance(&tr[n - 1]));
    }
    let best = variances.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| alphas[i]).unwrap_or(0.0);
    result.param("flux_rad", flux);
    result.param("duration_ns", duration);
    result.note("mixing_identity_error", mixing);
    result.note("last_site_variance", variances.clone());
    result.note("alpha_min_variance", best);
    result.dt_ns = Some(dev.dt_ns);
    Ok(result)
}

/// Stage-1 duration at which all occupations reach 1/N.
fn equal_population_time(device: &DeviceSpec, initial: &[u8]) -> Result<f64> {
    let dev = device.with_uniform_flux(0.0)?;
    let sector: usize = initial.iter().map(|&x| x as usize).sum();
    let h = build_effective(&dev, Some(sector))?;
    let psi = h.basis().ket(initial)?;
    let n = dev.num_sites() as f64;
    let target = sector as f64 / n;
    let cfg = PropagatorConfig { dt: 0.05, tolerance: 1e-9, verify: true };
    let deviation = |t: f64| -> Result<f64> {
        if t == 0.0 {
            return Ok(1.0);
        }
        let traj = evolve_unitary(&h.hamiltonian, &psi, &[0.0, t], &cfg)?;
        let occ = traj.mean_occupations();
        Ok(occ.iter().map(|o| (o[1] - target).abs()).fold(0.0, f64::max))
    };
    // coarse scan for the first dip, then golden-section refinement
    let step = 1.0;
    let mut prev = deviation(0.0)?;
    let mut t = step;
    let horizon = 2000.0;
    while t < horizon {
        let cur = deviation(t)?;
        let next = deviation(t + step)?;
        if cur <= prev && cur <= next {
            let f = |x: f64| deviation(x).unwrap_or(f64::INFINITY);
            let best = golden_min(t - step, t + step, f, 80);
            let dev_best = deviation(best)?;
            if dev_best > 1e-6 {
                prev = cur;
                t += step;
                continue;
            }
            return Ok(best);
        }
        prev = cur;
        t += step;
    }
    Err(Error::Numerical("equal-population condition not reached in stage 1".into()))
}

/// Two-stage preparation of ring momentum eigenstates: equalize the
/// populations under real coupling, then imprint per-site phases.
#[derive(Clone, Debug)]
pub struct PreparedState {
    pub state: StateVector,
    pub t_star: f64,
    pub phases: Vec<f64>,
}

pub fn prepare_momentum_state(device: &DeviceSpec, manifold: usize, m: i64) -> Result<PreparedState> {
    if device.levels != 2 {
        return Err(Error::Unsupported("eigenstate preparation needs two-level sites".into()));
    }
    let n = device.num_sites();
    let initial: Vec<u8> = if manifold == 1 {
        manifold_initial(n, 1)?
    } else if manifold + 1 == n {
        (0..n).map(|i| u8::from(i != 0)).collect()
    } else {
        return Err(Error::Unsupported("eigenstate preparation covers one particle or one hole".into()));
    };
    let t_star = equal_population_time(device, &initial)?;
    let dev = device.with_uniform_flux(0.0)?;
    let h = build_effective(&dev, Some(manifold))?;
    let basis = h.basis().clone();
    let psi = basis.ket(&initial)?;
    let cfg = PropagatorConfig { dt: 0.05, tolerance: 1e-9, verify: true };
    let traj = evolve_unitary(&h.hamiltonian, &psi, &[0.0, t_star], &cfg)?;
    let after = traj.pure(1).expect("unitary").clone();

    // amplitude of the particle (or hole) on site j
    let carrier = |j: usize| -> Vec<u8> {
        (0..n).map(|k| if manifold == 1 { u8::from(k == j) } else { u8::from(k != j) }).collect()
    };
    let target: Vec<f64> = (0..n)
        .map(|j| {
            let idx = basis.index_of(&carrier(j)).expect("carrier state in basis");
            2.0 * PI * (m as f64) * j as f64 / n as f64 - after.amps[idx].arg()
        })
        .collect();
    let phases: Vec<f64> = if manifold == 1 {
        target
    } else {
        // Σ_{k≠j} θ_k = c_j  ⇒  θ_j = S − c_j with S = Σc / (n − 1)
        let s = target.iter().sum::<f64>() / (n as f64 - 1.0);
        target.iter().map(|c| s - c).collect()
    };
    let amps = CVector::from_iterator(
        basis.dim(),
        basis.states().iter().zip(after.amps.iter()).map(|(s, a)| {
            let ph: f64 = s.iter().zip(&phases).map(|(&k, th)| k as f64 * th).sum();
            a * C64::from_polar(1.0, ph)
        }),
    );
    Ok(PreparedState { state: StateVector::new(basis.tag(), amps), t_star, phases })
}

/// Energies and variances of prepared momentum states over a flux grid,
/// next to the exact sorted spectrum.
pub fn run_eigenstate_prep(device: &DeviceSpec, manifold: usize, grid: &[f64]) -> Result<ExperimentResult> {
    let n = device.num_sites();
    let prepared: Vec<PreparedState> =
        (0..n as i64).map(|m| prepare_momentum_state(device, manifold, m)).collect::<Result<_>>()?;
    let mut result = ExperimentResult::new(
        "eig_prep",
        vec![
            "flux_rad".into(),
            "m".into(),
            "energy_mhz".into(),
            "variance_mhz2".into(),
            "exact_mhz".into(),
            "fidelity".into(),
        ],
        Layout::Series { x: "flux_rad".into(), ys: vec!["energy_mhz".into(), "exact_mhz".into()] },
    )
    .with_device(device);
    let mut worst_var: f64 = 0.0;
    let mut worst_energy: f64 = 0.0;
    for &phi in grid {
        let dev = device.with_uniform_flux(phi)?;
        let h = build_effective(&dev, Some(manifold))?;
        let es = eigensystem(h.op())?;
        let mut energies: Vec<(f64, f64, f64)> = prepared
            .iter()
            .map(|p| {
                let e = energy(&p.state, h.op());
                let v = energy_variance(&p.state, h.op());
                let fid = (0..es.values.len())
                    .filter(|&i| (es.values[i] - e).abs() < 1e-6)
                    .map(|i| fidelity_mixed(&StateVector::new(p.state.tag, es.vector(i)), &p.state))
                    .sum::<f64>();
                (e, v, fid)
            })
            .collect();
        let mut sorted: Vec<f64> = energies.iter().map(|e| e.0).collect();
        sorted.sort_by(f64::total_cmp);
        for (a, b) in sorted.iter().zip(&es.values) {
            worst_energy = worst_energy.max((a - b).abs());
        }
        for (m, (e, v, fid)) in energies.drain(..).enumerate() {
            worst_var = worst_var.max(v);
            let exact = es.values.iter().copied().min_by(|a, b| (a - e).abs().total_cmp(&(b - e).abs())).unwrap_or(e);
            result.push(vec![phi, m as f64, units::to_mhz(e), units::to_mhz(units::to_mhz(v)), units::to_mhz(exact), fid]);
        }
    }
    result.param("manifold", manifold);
    result.note("t_star_ns", prepared[0].t_star);
    result.note("max_variance_rad2_per_ns2", worst_var);
    result.note("max_energy_error_rad_per_ns", worst_energy);
    Ok(result)
}

/// Purity traces from a localized excitation; disentanglement instants are
/// local maxima of the smallest purity above 1 − `epsilon`.
#[derive(Clone, Debug)]
pub struct Entanglement {
    pub result: ExperimentResult,
    pub times: Vec<f64>,
    pub occupations: Vec<Vec<f64>>,
    pub purities: Vec<Vec<f64>>,
    pub instants: Vec<usize>,
}

pub fn run_entanglement(device: &DeviceSpec, flux: f64, duration: f64, epsilon: f64) -> Result<Entanglement> {
    let dev = device.with_flux(flux)?;
    if dev.levels != 2 {
        return Err(Error::Unsupported("entanglement dynamics needs two-level sites".into()));
    }
    let n = dev.num_sites();
    let initial: Vec<u8> = (0..n).map(|i| u8::from(i + 1 == n)).collect();
    let times = uniform_grid(duration, 1.0);
    let h = build_effective(&dev, Some(1))?;
    let traj = evolve_unitary(&h.hamiltonian, &h.basis().ket(&initial)?, &times, &PropagatorConfig::new(dev.dt_ns))?;
    let basis = h.basis();
    let mut occ = vec![Vec::new(); n];
    let mut pur = vec![Vec::new(); n];
    let mut cols = vec!["t_ns".to_string()];
    cols.extend((0..n).map(column_p));
    cols.extend((0..n).map(column_purity));
    let mut result = ExperimentResult::new(
        "entanglement",
        cols,
        Layout::Series { x: "t_ns".into(), ys: (0..n).map(column_purity).collect() },
    )
    .with_device(&dev);
    for i in 0..traj.len() {
        let s = traj.state(i);
        let mut row = vec![times[i]];
        for j in 0..n {
            let p = observables::occupation(basis, s, j)?.1;
            occ[j].push(p);
            row.push(p);
        }
        for j in 0..n {
            let p = reduced_density(basis, s, j)?.purity();
            pur[j].push(p);
            row.push(p);
        }
        result.push(row);
    }
    let floor: Vec<f64> = (0..times.len()).map(|i| (0..n).map(|j| pur[j][i]).fold(f64::INFINITY, f64::min)).collect();
    let mut instants = Vec::new();
    for i in 0..floor.len() {
        let left = if i == 0 { f64::NEG_INFINITY } else { floor[i - 1] };
        let right = if i + 1 == floor.len() { f64::NEG_INFINITY } else { floor[i + 1] };
        if floor[i] > 1.0 - epsilon && floor[i] >= left && floor[i] >= right {
            instants.push(i);
        }
    }
    result.param("flux_rad", flux);
    result.param("duration_ns", duration);
    result.note("disentangled_ns", instants.iter().map(|&i| times[i]).collect::<Vec<_>>());
    result.dt_ns = Some(dev.dt_ns);
    result.drift = traj.drift;
    Ok(Entanglement { result, times, occupations: occ, purities: pur, instants })
}

/// Whether every instant lies within `steps` grid points of a local
/// maximum of some occupation trace.
pub fn instants_match_occupation_peaks(ent: &Entanglement, steps: usize) -> bool {
    let is_peak = |tr: &[f64], i: usize| {
        let left = if i == 0 { f64::NEG_INFINITY } else { tr[i - 1] };
        let right = if i + 1 == tr.len() { f64::NEG_INFINITY } else { tr[i + 1] };
        tr[i] >= left && tr[i] >= right
    };
    ent.instants.iter().all(|&i| {
        let lo = i.saturating_sub(steps);
        let hi = (i + steps).min(ent.times.len() - 1);
        ent.occupations.iter().any(|tr| (lo..=hi).any(|k| is_peak(tr, k)))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub g0_mhz: f64,
    pub residual: f64,
    pub scan: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Least-squares g₀ from occupation traces (columns `t_ns`, `p_q*`), using
/// the rotating-frame model without decoherence.
pub fn fit_g0(
    observed: &ExperimentResult,
    template: &DeviceSpec,
    flux: f64,
    range_mhz: (f64, f64),
    points: usize,
) -> Result<FitResult> {
    let n = template.num_sites();
    let times = observed.column("t_ns").ok_or_else(|| Error::Config("observed table lacks t_ns".into()))?;
    let traces: Vec<Vec<f64>> = (0..n)
        .map(|j| observed.column(&column_p(j)).ok_or_else(|| Error::Config(format!("observed table lacks {}", column_p(j)))))
        .collect::<Result<_>>()?;
    if points < 3 || !(range_mhz.1 > range_mhz.0) || range_mhz.0 < 0.0 {
        return Err(Error::Config("fit scan needs a positive range and at least three points".into()));
    }
    let initial: Vec<u8> = traces.iter().map(|t| u8::from(t[0] > 0.5)).collect();
    let residual = |g0: f64| -> Result<f64> {
        let dev = template.with_g0(g0);
        let mut opts = CirculationOptions::new(n);
        opts.initial = initial.clone();
        let (traj, obs, _) = propagate(&dev.with_flux(flux)?, &initial, &times, Frame::Effective, &opts.config(&dev))?;
        let mut acc = 0.0;
        for i in 0..traj.len() {
            let p = obs.occupations(traj.state(i));
            for j in 0..n {
                acc += (p[j] - traces[j][i]).powi(2);
            }
        }
        Ok(acc)
    };
    let grid: Vec<f64> =
        (0..points).map(|i| range_mhz.0 + (range_mhz.1 - range_mhz.0) * i as f64 / (points - 1) as f64).collect();
    let values: Vec<f64> = grid.par_iter().map(|&g| residual(g)).collect::<Result<_>>()?;
    let scan: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
    let mut warnings = Vec::new();

    let (ibest, &vbest) = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty scan");
    let vmax = values.iter().copied().fold(f64::MIN, f64::max);
    let dynamics: f64 = traces.iter().map(|t| time_variance(t)).sum();
    if dynamics < 1e-10 || vmax - vbest <= 1e-9 * vmax.max(1.0) {
        warnings.push(format!("residual is flat over the scan; g0 is not identifiable. scan: {scan:?}"));
    }
    let minima: Vec<usize> = (0..values.len())
        .filter(|&i| {
            (i == 0 || values[i] < values[i - 1]) && (i + 1 == values.len() || values[i] < values[i + 1]) && i != ibest
        })
        .filter(|&i| values[i] <= 1.5 * vbest + 1e-3 * (vmax - vbest))
        .collect();
    if !minima.is_empty() {
        warnings.push(format!("residual has competing minima; scan: {scan:?}"));
    }
    let lo = grid[ibest.saturating_sub(1)];
    let hi = grid[(ibest + 1).min(grid.len() - 1)];
    let g = golden_min(lo, hi, |g| residual(g).unwrap_or(f64::INFINITY), 60);
    let r = residual(g)?;
    let (g0_mhz, residual) = if r <= vbest { (g, r) } else { (grid[ibest], vbest) };
    Ok(FitResult { g0_mhz, residual, scan, warnings })
}

/// Copy of `result` with Gaussian noise of width `sigma` on the `p_q*` columns.
pub fn with_occupation_noise(result: &ExperimentResult, sigma: f64, seed: u64) -> Result<ExperimentResult> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = result.clone();
    let targets: Vec<usize> =
        out.columns.iter().enumerate().filter(|(_, c)| c.starts_with("p_q")).map(|(i, _)| i).collect();
    for row in &mut out.rows {
        for &i in &targets {
            row[i] += normal.sample(&mut rng);
        }
    }
    out.seed = Some(seed);
    Ok(out)
}

/// Lindblad run with the device's T₁/T_φ against the unitary run.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayComparison {
    /// Largest |P_lindblad − P_unitary| over sites and times.
    pub max_deviation: f64,
    /// Smallest ratio of total excitation, Lindblad over unitary.
    pub min_ratio: f64,
    pub trace_drift: f64,
    pub positivity_floor: f64,
}

pub fn compare_lindblad(device: &DeviceSpec, flux: f64, duration: f64) -> Result<DecayComparison> {
    let dev = device.with_flux(flux)?;
    let h = build_effective(&dev, None)?;
    let n = dev.num_sites();
    let initial: Vec<u8> = (0..n).map(|i| u8::from(i == 0)).collect();
    let psi = h.basis().ket(&initial)?;
    let times = uniform_grid(duration, 1.0);
    let cfg = PropagatorConfig::new(dev.dt_ns);
    let open = evolve_lindblad(&h.hamiltonian, &psi.to_density(), &NoiseChannel::from_device(&dev), &times, &cfg)?;
    let closed = evolve_unitary(&h.hamiltonian, &psi, &times, &cfg)?;
    let a = open.mean_occupations();
    let b = closed.mean_occupations();
    let mut dev_max: f64 = 0.0;
    let mut ratio = f64::INFINITY;
    for i in 0..times.len() {
        let (mut sa, mut sb) = (0.0, 0.0);
        for j in 0..n {
            dev_max = dev_max.max((a[j][i] - b[j][i]).abs());
            sa += a[j][i];
            sb += b[j][i];
        }
        ratio = ratio.min(sa / sb);
    }
    Ok(DecayComparison {
        max_deviation: dev_max,
        min_ratio: ratio,
        trace_drift: open.drift,
        positivity_floor: open.positivity_floor,
    })
}

/// Vacuum/one-photon coherence after `duration` under classical frequency
/// noise, for idle qubits and with the coupling switched on. Both are
/// normalized to their initial value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DephasingComparison {
    pub idle: f64,
    pub coupled: f64,
}

pub fn compare_dephasing(
    device: &DeviceSpec,
    flux: f64,
    noise: &ClassicalNoiseSpec,
    duration: f64,
) -> Result<DephasingComparison> {
    let dev = device.with_flux(flux)?;
    let h = build_effective(&dev, None)?;
    let basis = h.basis().clone();
    let n = dev.num_sites();
    let vac = basis.ket(&vec![0; n])?;
    let one = basis.ket(&(0..n).map(|i| u8::from(i == 0)).collect::<Vec<_>>())?;
    let psi = StateVector::new(basis.tag(), (vac.amps + one.amps) * C64::new(0.5f64.sqrt(), 0.0));
    let initial = manifold_coherence(&basis, &psi, 0, 1);
    let times = [0.0, duration];
    let cfg = PropagatorConfig::new(dev.dt_ns);
    let idle_h = StaticHamiltonian::new(&basis, Operator::zeros(&basis))?;
    let idle = evolve_noisy_ensemble(&idle_h, &psi, noise, &times, &cfg)?;
    let coupled = evolve_noisy_ensemble(&h.hamiltonian, &psi, noise, &times, &cfg)?;
    Ok(DephasingComparison {
        idle: manifold_coherence(&basis, idle.last(), 0, 1) / initial,
        coupled: manifold_coherence(&basis, coupled.last(), 0, 1) / initial,
    })
}
