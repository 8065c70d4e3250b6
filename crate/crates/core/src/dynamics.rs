//! Unitary, Lindblad and classical-noise propagators.
//!
//! All propagators integrate in the interaction picture of the generator's
//! frame diagonal: the diagonal phases Θ(t) are applied exactly and only the
//! residual is stepped with fixed-step RK4. Every run is repeated at dt/2 and
//! rejected if the two disagree.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fock::{ladder, number, CMatrix, CVector, DensityMatrix, FockBasis, LadderKind, QuantumState, StateVector, C64};
use crate::hamiltonian::Generator;
use crate::units;

#[derive(Clone, Debug, PartialEq)]
pub struct PropagatorConfig {
    /// Step (ns).
    pub dt: f64,
    /// Largest allowed change of any site occupation between the dt and
    /// dt/2 runs.
    pub tolerance: f64,
    pub verify: bool,
}

impl PropagatorConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, tolerance: 1e-5, verify: true }
    }

    /// 0.1 ns, resolving the GHz lab frame.
    pub fn lab() -> Self {
        Self::new(0.1)
    }

    /// 1 ns for rotating-frame Hamiltonians.
    pub fn effective() -> Self {
        Self::new(1.0)
    }
}

impl Default for PropagatorConfig {
    fn default() -> Self {
        Self::effective()
    }
}

#[derive(Clone, Debug)]
pub enum States {
    Pure(Vec<StateVector>),
    Mixed(Vec<DensityMatrix>),
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub basis: FockBasis,
    pub states: States,
    /// Largest |‖ψ‖ − 1| or |tr ρ − 1| seen on the grid.
    pub drift: f64,
    /// Smallest density-matrix eigenvalue seen (1 for pure runs).
    pub positivity_floor: f64,
    /// Largest occupation change between the dt and dt/2 runs.
    pub halving_error: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &dyn QuantumState {
        match &self.states {
            States::Pure(v) => &v[i],
            States::Mixed(v) => &v[i],
        }
    }

    pub fn pure(&self, i: usize) -> Option<&StateVector> {
        match &self.states {
            States::Pure(v) => Some(&v[i]),
            States::Mixed(_) => None,
        }
    }

    pub fn last(&self) -> &dyn QuantumState {
        self.state(self.len() - 1)
    }

    /// ⟨n̂_j⟩ at every grid time, indexed `[site][time]`.
    pub fn mean_occupations(&self) -> Vec<Vec<f64>> {
        let ops: Vec<_> = (0..self.basis.num_sites()).map(|j| number(&self.basis, j).expect("site in range")).collect();
        ops.iter().map(|op| (0..self.len()).map(|i| self.state(i).expect(op).re).collect()).collect()
    }
}

fn phase_factors(theta: &DVector<f64>) -> CVector {
    CVector::from_iterator(theta.len(), theta.iter().map(|&p| C64::from_polar(1.0, p)))
}

/// H_I(t) = e^{iΘ} R(t) e^{−iΘ}.
fn interaction_matrix(gen: &dyn Generator, t: f64) -> CMatrix {
    let u = phase_factors(&gen.frame_phases(t));
    let mut r = gen.residual(t);
    for c in 0..r.ncols() {
        for row in 0..r.nrows() {
            r[(row, c)] *= u[row] * u[c].conj();
        }
    }
    r
}

fn to_interaction(gen: &dyn Generator, t: f64, psi: &CVector) -> CVector {
    psi.component_mul(&phase_factors(&gen.frame_phases(t)))
}

fn from_interaction(gen: &dyn Generator, t: f64, psi: &CVector) -> CVector {
    psi.component_mul(&phase_factors(&gen.frame_phases(t)).map(|z| z.conj()))
}

fn rho_rotate(gen: &dyn Generator, t: f64, rho: &CMatrix, sign: f64) -> CMatrix {
    let theta = gen.frame_phases(t);
    CMatrix::from_fn(rho.nrows(), rho.ncols(), |r, c| rho[(r, c)] * C64::from_polar(1.0, sign * (theta[r] - theta[c])))
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Config("time grid is empty".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("time grid must be finite and non-decreasing".into()));
    }
    Ok(())
}

/// Enforce dt·max|H_I| < 0.1 and at least 16 steps per fastest period.
fn check_step(gen: &dyn Generator, times: &[f64], dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let t0 = times[0];
    let r = gen.residual(t0);
    let rates = gen.frame_rates(t0);
    let mut amp: f64 = 0.0;
    let mut freq: f64 = 0.0;
    for c in 0..r.ncols() {
        for row in 0..r.nrows() {
            let v = r[(row, c)].norm();
            if v > 0.0 {
                amp = amp.max(v);
                freq = freq.max((rates[row] - rates[c]).abs());
            }
        }
    }
    freq += gen.drive_frequency();
    if dt * amp >= 0.1 {
        return Err(Error::Config(format!("dt = {dt} ns too coarse: dt*max|H| = {:.3}", dt * amp)));
    }
    if dt * freq > std::f64::consts::TAU / 16.0 {
        return Err(Error::Config(format!(
            "dt = {dt} ns too coarse: fastest frequency {:.1} MHz",
            units::to_mhz(freq)
        )));
    }
    Ok(())
}

/// Uniform grid 0, step, …, covering `duration`.
pub fn uniform_grid(duration: f64, step: f64) -> Vec<f64> {
    let n = (duration / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

fn substeps(span: f64, dt: f64) -> (usize, f64) {
    if span <= 0.0 {
        return (0, 0.0);
    }
    let n = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    (n, span / n as f64)
}

fn rk4_pure(gen: &dyn Generator, psi0: &CVector, times: &[f64], dt: f64) -> Vec<CVector> {
    let minus_i = C64::new(0.0, -1.0);
    let f = |t: f64, y: &CVector| -> CVector { interaction_matrix(gen, t) * y * minus_i };
    let mut y = to_interaction(gen, times[0], psi0);
    let mut out = vec![psi0.clone()];
    for w in times.windows(2) {
        let (n, h) = substeps(w[1] - w[0], dt);
        let mut t = w[0];
        for _ in 0..n {
            let k1 = f(t, &y);
            let k2 = f(t + h / 2.0, &(&y + &k1 * C64::new(h / 2.0, 0.0)));
            let k3 = f(t + h / 2.0, &(&y + &k2 * C64::new(h / 2.0, 0.0)));
            let k4 = f(t + h, &(&y + &k3 * C64::new(h, 0.0)));
            y += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
            t += h;
        }
        out.push(from_interaction(gen, w[1], &y));
    }
    out
}

fn site_occupation_diagonals(basis: &FockBasis) -> Vec<Vec<f64>> {
    (0..basis.num_sites())
        .map(|j| basis.states().iter().map(|s| s[j] as f64).collect())
        .collect()
}

fn occupation_gap_pure(basis: &FockBasis, a: &[CVector], b: &[CVector]) -> f64 {
    let diags = site_occupation_diagonals(basis);
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        for d in &diags {
            let nx: f64 = x.iter().zip(d).map(|(z, n)| z.norm_sqr() * n).sum();
            let ny: f64 = y.iter().zip(d).map(|(z, n)| z.norm_sqr() * n).sum();
            worst = worst.max((nx - ny).abs());
        }
    }
    worst
}

pub fn evolve_unitary(
    gen: &dyn Generator,
    psi0: &StateVector,
    times: &[f64],
    config: &PropagatorConfig,
) -> Result<Trajectory> {
    let basis = gen.basis();
    if psi0.tag != basis.tag() {
        return Err(Error::Dimension("initial state and Hamiltonian use different bases".into()));
    }
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("initial state not normalized (norm {})", psi0.norm())));
    }
    check_grid(times)?;
    check_step(gen, times, config.dt)?;

    let coarse = rk4_pure(gen, &psi0.amps, times, config.dt);
    let halving_error = if config.verify {
        let fine = rk4_pure(gen, &psi0.amps, times, config.dt / 2.0);
        occupation_gap_pure(basis, &coarse, &fine)
    } else {
        0.0
    };
    if halving_error > config.tolerance {
        return Err(Error::NonConvergence(format!(
            "occupations moved by {halving_error:.3e} when halving dt = {} ns (tolerance {:.1e})",
            config.dt, config.tolerance
        )));
    }
    let drift = coarse.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    if drift > 1e-6 {
        return Err(Error::NonConvergence(format!("norm drift {drift:.3e} exceeds 1e-6")));
    }
    let tag = basis.tag();
    Ok(Trajectory {
        times: times.to_vec(),
        basis: basis.clone(),
        states: States::Pure(coarse.into_iter().map(|a| StateVector::new(tag, a)).collect()),
        drift,
        positivity_floor: 1.0,
        halving_error,
    })
}

/// Amplitude damping (T₁) and pure dephasing (T_φ) per site, in µs.
///
/// Dephasing uses the collapse operator √(2/T_φ) n̂_j so that a single-qubit
/// coherence decays as e^{−t/T_φ}; then 1/T₂ = 1/(2T₁) + 1/T_φ.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseChannel {
    pub t1_us: Vec<Option<f64>>,
    pub tphi_us: Vec<Option<f64>>,
}

impl NoiseChannel {
    pub fn uniform(num_sites: usize, t1_us: Option<f64>, tphi_us: Option<f64>) -> Self {
        Self { t1_us: vec![t1_us; num_sites], tphi_us: vec![tphi_us; num_sites] }
    }

    pub fn from_device(device: &crate::device::DeviceSpec) -> Self {
        Self {
            t1_us: device.sites.iter().map(|s| s.t1_us).collect(),
            tphi_us: device.sites.iter().map(|s| s.tphi_us).collect(),
        }
    }

    fn collapse_operators(&self, basis: &FockBasis) -> Result<Vec<CMatrix>> {
        let mut out = Vec::new();
        for (j, t1) in self.t1_us.iter().enumerate() {
            if let Some(t1) = t1 {
                if *t1 <= 0.0 {
                    return Err(Error::Config(format!("T1 of site {} must be positive", j + 1)));
                }
                let a = ladder(basis, j, LadderKind::Lower)?;
                out.push(a.matrix * C64::new(units::rate_from_us(*t1).sqrt(), 0.0));
            }
        }
        for (j, tphi) in self.tphi_us.iter().enumerate() {
            if let Some(tphi) = tphi {
                if *tphi <= 0.0 {
                    return Err(Error::Config(format!("Tphi of site {} must be positive", j + 1)));
                }
                let n = number(basis, j)?;
                out.push(n.matrix * C64::new((2.0 * units::rate_from_us(*tphi)).sqrt(), 0.0));
            }
        }
        Ok(out)
    }
}

fn rk4_lindblad(gen: &dyn Generator, rho0: &CMatrix, ops: &[CMatrix], times: &[f64], dt: f64) -> Vec<CMatrix> {
    let i = C64::new(0.0, 1.0);
    let f = |t: f64, rho: &CMatrix| -> CMatrix {
        let h = interaction_matrix(gen, t);
        let mut d = (&h * rho - rho * &h) * (-i);
        if !ops.is_empty() {
            let u = phase_factors(&gen.frame_phases(t));
            for l in ops {
                let li = CMatrix::from_fn(l.nrows(), l.ncols(), |r, c| l[(r, c)] * u[r] * u[c].conj());
                let ldl = li.adjoint() * &li;
                d += &li * rho * li.adjoint() - (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0);
            }
        }
        d
    };
    let mut y = rho_rotate(gen, times[0], rho0, 1.0);
    let mut out = vec![rho0.clone()];
    for w in times.windows(2) {
        let (n, h) = substeps(w[1] - w[0], dt);
        let mut t = w[0];
        for _ in 0..n {
            let k1 = f(t, &y);
            let k2 = f(t + h / 2.0, &(&y + &k1 * C64::new(h / 2.0, 0.0)));
            let k3 = f(t + h / 2.0, &(&y + &k2 * C64::new(h / 2.0, 0.0)));
            let k4 = f(t + h, &(&y + &k3 * C64::new(h, 0.0)));
            y += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
            t += h;
        }
        out.push(rho_rotate(gen, w[1], &y, -1.0));
    }
    out
}

fn occupation_gap_mixed(basis: &FockBasis, a: &[CMatrix], b: &[CMatrix]) -> f64 {
    let diags = site_occupation_diagonals(basis);
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        for d in &diags {
            let nx: f64 = d.iter().enumerate().map(|(k, n)| x[(k, k)].re * n).sum();
            let ny: f64 = d.iter().enumerate().map(|(k, n)| y[(k, k)].re * n).sum();
            worst = worst.max((nx - ny).abs());
        }
    }
    worst
}

pub fn evolve_lindblad(
    gen: &dyn Generator,
    rho0: &DensityMatrix,
    channels: &NoiseChannel,
    times: &[f64],
    config: &PropagatorConfig,
) -> Result<Trajectory> {
    let basis = gen.basis();
    if rho0.tag != basis.tag() {
        return Err(Error::Dimension("initial state and Hamiltonian use different bases".into()));
    }
    if (rho0.trace().re - 1.0).abs() > 1e-9 || (&rho0.matrix - rho0.matrix.adjoint()).norm() > 1e-9 {
        return Err(Error::Config("initial density matrix must be Hermitian with unit trace".into()));
    }
    check_grid(times)?;
    check_step(gen, times, config.dt)?;
    let ops = channels.collapse_operators(basis)?;

    let coarse = rk4_lindblad(gen, &rho0.matrix, &ops, times, config.dt);
    let halving_error = if config.verify {
        let fine = rk4_lindblad(gen, &rho0.matrix, &ops, times, config.dt / 2.0);
        occupation_gap_mixed(basis, &coarse, &fine)
    } else {
        0.0
    };
    if halving_error > config.tolerance {
        return Err(Error::NonConvergence(format!(
            "occupations moved by {halving_error:.3e} when halving dt = {} ns (tolerance {:.1e})",
            config.dt, config.tolerance
        )));
    }
    let tag = basis.tag();
    let states: Vec<DensityMatrix> = coarse.into_iter().map(|m| DensityMatrix::new(tag, m)).collect();
    let drift = states.iter().map(|r| (r.trace().re - 1.0).abs()).fold(0.0, f64::max);
    if drift > 1e-6 {
        return Err(Error::Numerical(format!("trace drift {drift:.3e} exceeds 1e-6")));
    }
    let floor = states
        .iter()
        .map(|r| r.eigenvalues().into_iter().fold(f64::INFINITY, f64::min))
        .fold(f64::INFINITY, f64::min);
    if floor < -1e-6 {
        return Err(Error::Numerical(format!("density matrix lost positivity (eigenvalue {floor:.3e})")));
    }
    Ok(Trajectory {
        times: times.to_vec(),
        basis: basis.clone(),
        states: States::Mixed(states),
        drift,
        positivity_floor: floor,
        halving_error,
    })
}

/// Two-state fluctuator switching at `rate` (1/ns) between ±`amplitude`
/// (rad/ns).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fluctuator {
    pub rate: f64,
    pub amplitude: f64,
}

/// Per-site frequency noise built from telegraph fluctuators.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassicalNoiseSpec {
    /// Fluctuators acting independently on every noisy site.
    pub fluctuators: Vec<Fluctuator>,
    /// Noisy sites; `None` means all.
    pub sites: Option<Vec<usize>>,
    pub trajectories: usize,
    pub seed: u64,
}

impl ClassicalNoiseSpec {
    /// 1/f surrogate: `per_decade` fluctuators per decade between the two
    /// switching rates (log-spaced, equal amplitude), with total rms
    /// frequency deviation `rms_mhz`.
    pub fn one_over_f(
        rms_mhz: f64,
        rate_min: f64,
        rate_max: f64,
        per_decade: usize,
        trajectories: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(rate_min > 0.0 && rate_max >= rate_min) || per_decade == 0 {
            return Err(Error::Config("invalid fluctuator rate range".into()));
        }
        let decades = (rate_max / rate_min).log10();
        let count = ((decades * per_decade as f64).round() as usize).max(1);
        let amplitude = units::mhz(rms_mhz) / (count as f64).sqrt();
        let fluctuators = (0..count)
            .map(|i| {
                let x = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
                Fluctuator { rate: rate_min * 10f64.powf(x * decades), amplitude }
            })
            .collect();
        Ok(Self { fluctuators, sites: None, trajectories, seed })
    }

    pub fn rng(&self, trajectory: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(trajectory as u64);
        rng
    }
}

/// One sampled telegraph path on [0, horizon].
#[derive(Clone, Debug)]
struct TelegraphPath {
    amplitude: f64,
    initial_sign: f64,
    switches: Vec<f64>,
}

impl TelegraphPath {
    fn sample(f: &Fluctuator, horizon: f64, rng: &mut ChaCha8Rng) -> Self {
        let initial_sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let mut switches = Vec::new();
        let mut t = 0.0;
        if f.rate > 0.0 {
            loop {
                let u: f64 = rng.random();
                t += -(1.0 - u).ln() / f.rate;
                if t > horizon {
                    break;
                }
                switches.push(t);
            }
        }
        Self { amplitude: f.amplitude, initial_sign, switches }
    }

    fn value(&self, t: f64) -> f64 {
        let k = self.switches.partition_point(|&s| s <= t);
        let sign = if k % 2 == 0 { self.initial_sign } else { -self.initial_sign };
        sign * self.amplitude
    }

    fn integral(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut last = 0.0;
        let mut sign = self.initial_sign;
        for &s in &self.switches {
            if s >= t {
                break;
            }
            acc += sign * (s - last);
            last = s;
            sign = -sign;
        }
        acc += sign * (t - last);
        acc * self.amplitude
    }
}

/// Generator with classical on-site frequency noise folded into the frame.
struct NoisyGenerator<'a> {
    inner: &'a dyn Generator,
    /// Occupation of each site per basis state.
    occupations: Vec<Vec<f64>>,
    paths: Vec<(usize, TelegraphPath)>,
}

impl NoisyGenerator<'_> {
    fn shift(&self, f: impl Fn(&TelegraphPath) -> f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.inner.basis().dim());
        for (site, path) in &self.paths {
            let v = f(path);
            for (k, n) in self.occupations[*site].iter().enumerate() {
                out[k] += v * n;
            }
        }
        out
    }
}

impl Generator for NoisyGenerator<'_> {
    fn basis(&self) -> &FockBasis {
        self.inner.basis()
    }
    fn frame_rates(&self, t: f64) -> DVector<f64> {
        self.inner.frame_rates(t) + self.shift(|p| p.value(t))
    }
    fn frame_phases(&self, t: f64) -> DVector<f64> {
        self.inner.frame_phases(t) + self.shift(|p| p.integral(t))
    }
    fn residual(&self, t: f64) -> CMatrix {
        self.inner.residual(t)
    }
    fn drive_frequency(&self) -> f64 {
        self.inner.drive_frequency() + self.paths.iter().map(|(_, p)| 2.0 * p.amplitude).sum::<f64>()
    }
}

/// Ensemble-averaged density matrices under sampled classical noise.
/// Trajectories run in parallel and are summed in index order.
pub fn evolve_noisy_ensemble(
    gen: &dyn Generator,
    psi0: &StateVector,
    noise: &ClassicalNoiseSpec,
    times: &[f64],
    config: &PropagatorConfig,
) -> Result<Trajectory> {
    if noise.trajectories == 0 {
        return Err(Error::Config("noise ensemble needs at least one trajectory".into()));
    }
    check_grid(times)?;
    let basis = gen.basis();
    let sites: Vec<usize> = noise.sites.clone().unwrap_or_else(|| (0..basis.num_sites()).collect());
    if sites.iter().any(|&s| s >= basis.num_sites()) {
        return Err(Error::Config("noisy site out of range".into()));
    }
    let occupations = site_occupation_diagonals(basis);
    let horizon = *times.last().expect("grid checked non-empty");

    let runs: Vec<Trajectory> = (0..noise.trajectories)
        .into_par_iter()
        .map(|k| {
            let mut rng = noise.rng(k);
            let mut paths = Vec::new();
            for &s in &sites {
                for f in &noise.fluctuators {
                    paths.push((s, TelegraphPath::sample(f, horizon, &mut rng)));
                }
            }
            let noisy = NoisyGenerator { inner: gen, occupations: occupations.clone(), paths };
            evolve_unitary(&noisy, psi0, times, config)
        })
        .collect::<Result<_>>()?;

    let n = basis.dim();
    let scale = C64::new(1.0 / noise.trajectories as f64, 0.0);
    let mut sums = vec![CMatrix::zeros(n, n); times.len()];
    let mut drift: f64 = 0.0;
    let mut halving: f64 = 0.0;
    for run in &runs {
        drift = drift.max(run.drift);
        halving = halving.max(run.halving_error);
        if let States::Pure(v) = &run.states {
            for (acc, psi) in sums.iter_mut().zip(v) {
                *acc += &psi.amps * psi.amps.adjoint();
            }
        }
    }
    let tag = basis.tag();
    Ok(Trajectory {
        times: times.to_vec(),
        basis: basis.clone(),
        states: States::Mixed(sums.into_iter().map(|m| DensityMatrix::new(tag, m * scale)).collect()),
        drift,
        positivity_floor: 0.0,
        halving_error: halving,
    })
}
