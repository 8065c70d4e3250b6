//! Device description: qubit sites, modulated links and the simulation
//! truncation, plus the TOML configuration format.
//!
//! All quantities are stored in the units of the configuration file
//! (GHz for qubit frequencies, MHz for couplings and anharmonicities,
//! µs for lifetimes) and converted to rad/ns when Hamiltonians are built.
//!
//! Link sign convention: a link `(j, k)` modulated as
//! `g0 cos(Δ t + φ)` is resonant when `Δ = ω_k − ω_j`, and then realizes
//! the rotating-frame hop `(g0/2) e^{iφ} a†_j a_k + h.c.`. Because the
//! cosine is even, a link written with the opposite sign of `Δ` is the
//! same drive with phase `−φ`; [`LinkSpec::resonant_form`] normalizes
//! this.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauge::{self, Graph};
use crate::units;

/// Residuals below this (1 kHz) count as exact frequency matching.
pub const MATCHING_TOL_MHZ: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SiteSpec {
    pub omega_ghz: f64,
    pub u2_mhz: f64,
    pub u3_mhz: f64,
    pub t1_us: Option<f64>,
    pub tphi_us: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSpec {
    /// Zero-based endpoints.
    pub pair: (usize, usize),
    pub g0_mhz: f64,
    pub delta_mhz: f64,
    pub phi_rad: f64,
    pub gdc_mhz: f64,
}

impl LinkSpec {
    pub fn reversed(&self) -> Self {
        Self {
            pair: (self.pair.1, self.pair.0),
            delta_mhz: -self.delta_mhz,
            phi_rad: -self.phi_rad,
            ..self.clone()
        }
    }

    /// The equivalent `(Δ, φ)` whose Δ sign best matches `ω_k − ω_j`,
    /// together with the remaining mismatch in MHz.
    pub fn resonant_form(&self, sites: &[SiteSpec]) -> (f64, f64, f64) {
        let (j, k) = self.pair;
        let target = (sites[k].omega_ghz - sites[j].omega_ghz) * 1e3;
        let plus = (self.delta_mhz - target).abs();
        let minus = (-self.delta_mhz - target).abs();
        if plus <= minus {
            (self.delta_mhz, self.phi_rad, plus)
        } else {
            (-self.delta_mhz, -self.phi_rad, minus)
        }
    }

    pub fn is_resonant(&self) -> bool {
        self.delta_mhz == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceSpec {
    pub sites: Vec<SiteSpec>,
    pub links: Vec<LinkSpec>,
    pub levels: usize,
    pub dt_ns: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchingWarning {
    pub pair: (usize, usize),
    pub residual_mhz: f64,
}

impl std::fmt::Display for MatchingWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "link ({}, {}): modulation frequency misses the qubit detuning by {:.6} MHz",
            self.pair.0 + 1,
            self.pair.1 + 1,
            self.residual_mhz
        )
    }
}

/// The three-qubit ring with the modulation parameters of the circulation
/// experiments. The loop flux sits entirely on link (3, 1); set it with
/// [`DeviceSpec::with_flux`].
pub fn reference_ring() -> DeviceSpec {
    let site = |omega_ghz| SiteSpec {
        omega_ghz,
        u2_mhz: 200.0,
        u3_mhz: 200.0,
        t1_us: Some(10.0),
        tphi_us: None,
    };
    let link = |j, k, delta_mhz| LinkSpec {
        pair: (j, k),
        g0_mhz: 4.0,
        delta_mhz,
        phi_rad: 0.0,
        gdc_mhz: 0.0,
    };
    DeviceSpec {
        sites: vec![site(5.8), site(5.8), site(5.835)],
        // Δ31 is quoted as 35 MHz in magnitude; under the sign convention
        // above ω1 − ω3 = −35 MHz.
        links: vec![link(0, 1, 0.0), link(1, 2, 35.0), link(2, 0, -35.0)],
        levels: 2,
        dt_ns: 1.0,
    }
}

impl DeviceSpec {
    pub fn num_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn graph(&self) -> Graph {
        Graph::new(self.num_sites(), self.links.iter().map(|l| l.pair).collect())
    }

    pub fn phases(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.phi_rad).collect()
    }

    /// Phases of the rotating-frame hops, after sign normalization of Δ.
    pub fn effective_phases(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.resonant_form(&self.sites).1).collect()
    }

    pub fn with_phases(&self, phases: &[f64]) -> Self {
        let mut out = self.clone();
        for (l, &p) in out.links.iter_mut().zip(phases) {
            l.phi_rad = p;
        }
        out
    }

    pub fn with_levels(&self, levels: usize) -> Self {
        Self { levels, ..self.clone() }
    }

    pub fn with_g0(&self, g0_mhz: f64) -> Self {
        let mut out = self.clone();
        for l in &mut out.links {
            l.g0_mhz = g0_mhz;
        }
        out
    }

    /// Default loop: sites in index order, closed back to the first site.
    pub fn default_loop(&self) -> Vec<usize> {
        (0..self.num_sites()).collect()
    }

    /// Sets the effective flux through `cycle` by adjusting the phase of
    /// its closing link (last site back to first).
    pub fn with_loop_flux(&self, cycle: &[usize], flux: f64) -> Result<Self> {
        let n = cycle.len();
        if n < 3 {
            return Err(Error::Config("a flux loop needs at least three sites".into()));
        }
        let (a, b) = (cycle[n - 1], cycle[0]);
        let idx = self
            .links
            .iter()
            .position(|l| l.pair == (a, b) || l.pair == (b, a))
            .ok_or_else(|| Error::Config(format!("no link closes the loop between {} and {}", a + 1, b + 1)))?;
        let mut out = self.clone();
        out.links[idx].phi_rad = 0.0;
        let rest = gauge::loop_flux(&out.graph(), &out.effective_phases(), cycle)?;
        // +1 or -1 depending on how Δ was written for this link
        let sign = if out.links[idx].resonant_form(&out.sites).0 == out.links[idx].delta_mhz { 1.0 } else { -1.0 };
        let forward = out.links[idx].pair == (a, b);
        let needed = if forward { flux - rest } else { rest - flux };
        out.links[idx].phi_rad = needed * sign;
        Ok(out)
    }

    /// Shorthand for [`Self::with_loop_flux`] on the default loop.
    pub fn with_flux(&self, flux: f64) -> Result<Self> {
        self.with_loop_flux(&self.default_loop(), flux)
    }

    /// Spreads `flux` evenly over the links of the default loop, the
    /// uniform gauge in which ring eigenstates are plane waves.
    pub fn with_uniform_flux(&self, flux: f64) -> Result<Self> {
        let cycle = self.default_loop();
        let n = cycle.len();
        if n < 3 || self.links.len() != n {
            return Err(Error::Unsupported("uniform gauge needs a single ring of links".into()));
        }
        let mut out = self.clone();
        for i in 0..n {
            let (a, b) = (cycle[i], cycle[(i + 1) % n]);
            let idx = out
                .links
                .iter()
                .position(|l| l.pair == (a, b) || l.pair == (b, a))
                .ok_or_else(|| Error::Config(format!("no link between {} and {}", a + 1, b + 1)))?;
            let l = &mut out.links[idx];
            let sign = if l.resonant_form(&self.sites).0 == l.delta_mhz { 1.0 } else { -1.0 };
            let wanted = if l.pair == (a, b) { flux / n as f64 } else { -flux / n as f64 };
            l.phi_rad = wanted * sign;
        }
        Ok(out)
    }

    /// Effective flux through the default loop.
    pub fn flux(&self) -> Result<f64> {
        gauge::loop_flux(&self.graph(), &self.effective_phases(), &self.default_loop())
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.validation_errors();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.sites.is_empty() {
            errs.push("sites: at least one site is required".into());
        }
        for (i, s) in self.sites.iter().enumerate() {
            let n = i + 1;
            if !(s.omega_ghz > 0.0 && s.omega_ghz.is_finite()) {
                errs.push(format!("sites.{n}.omega_ghz: must be positive, got {}", s.omega_ghz));
            }
            if !(s.u2_mhz >= 0.0) {
                errs.push(format!("sites.{n}.u2_mhz: must be non-negative, got {}", s.u2_mhz));
            }
            if !(s.u3_mhz >= 0.0) {
                errs.push(format!("sites.{n}.u3_mhz: must be non-negative, got {}", s.u3_mhz));
            }
            if let Some(t) = s.t1_us {
                if !(t > 0.0) {
                    errs.push(format!("sites.{n}.t1_us: must be positive, got {t}"));
                }
            }
            if let Some(t) = s.tphi_us {
                if !(t > 0.0) {
                    errs.push(format!("sites.{n}.tphi_us: must be positive, got {t}"));
                }
            }
        }
        let mut seen = HashSet::new();
        for (i, l) in self.links.iter().enumerate() {
            let n = i + 1;
            let (j, k) = l.pair;
            if j >= self.sites.len() || k >= self.sites.len() {
                errs.push(format!("links.{n}.pair: site index out of range ({}, {})", j + 1, k + 1));
                continue;
            }
            if j == k {
                errs.push(format!("links.{n}.pair: endpoints must differ ({}, {})", j + 1, k + 1));
                continue;
            }
            if !seen.insert((j.min(k), j.max(k))) {
                errs.push(format!("links.{n}.pair: duplicate link between {} and {}", j + 1, k + 1));
            }
            for (name, v) in [
                ("g0_mhz", l.g0_mhz),
                ("delta_mhz", l.delta_mhz),
                ("phi_rad", l.phi_rad),
                ("gdc_mhz", l.gdc_mhz),
            ] {
                if !v.is_finite() {
                    errs.push(format!("links.{n}.{name}: must be finite"));
                }
            }
        }
        if self.levels < 2 {
            errs.push(format!("simulation.levels: must be >= 2, got {}", self.levels));
        }
        if !(self.dt_ns > 0.0) {
            errs.push(format!("simulation.dt_ns: must be positive, got {}", self.dt_ns));
        }
        errs
    }

    /// Links whose modulation frequency misses the qubit detuning by more
    /// than 1 kHz. These detunings are kept in the effective Hamiltonian.
    pub fn frequency_warnings(&self) -> Vec<MatchingWarning> {
        self.links
            .iter()
            .filter_map(|l| {
                let (_, _, residual) = l.resonant_form(&self.sites);
                (residual > MATCHING_TOL_MHZ).then_some(MatchingWarning { pair: l.pair, residual_mhz: residual })
            })
            .collect()
    }

    /// Per-site rotating-frame frequencies (rad/ns), grown along the
    /// spanning tree of the link graph so that every tree link is exactly
    /// resonant in the frame.
    pub fn frame_frequencies(&self) -> Vec<f64> {
        let n = self.num_sites();
        let mut nu: Vec<Option<f64>> = vec![None; n];
        let graph = self.graph();
        let tree = graph.spanning_forest();
        for root in 0..n {
            if nu[root].is_some() {
                continue;
            }
            nu[root] = Some(units::ghz(self.sites[root].omega_ghz));
            let mut changed = true;
            while changed {
                changed = false;
                for &e in &tree.tree_edges {
                    let l = &self.links[e];
                    let (delta, _, _) = l.resonant_form(&self.sites);
                    let (j, k) = l.pair;
                    match (nu[j], nu[k]) {
                        (Some(a), None) => {
                            nu[k] = Some(a + units::mhz(delta));
                            changed = true;
                        }
                        (None, Some(b)) => {
                            nu[j] = Some(b - units::mhz(delta));
                            changed = true;
                        }
                        _ => {}
                    }
                }
            }
        }
        nu.into_iter().map(|v| v.expect("every site reached by its tree")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RwaFlag {
    /// Δ = 0: the coupling is applied directly, no approximation.
    Resonant,
    Ok,
    Marginal,
    Invalid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RwaLinkReport {
    pub pair: (usize, usize),
    pub ratio: Option<f64>,
    pub flag: RwaFlag,
    /// Coupler excursion g_dc ± g0 falls outside −55..+5 MHz.
    pub outside_coupler_range: bool,
}

pub const RWA_MARGINAL: f64 = 0.125;
pub const RWA_INVALID: f64 = 0.5;
pub const COUPLER_RANGE_MHZ: (f64, f64) = (-55.0, 5.0);

pub fn rwa_lint(device: &DeviceSpec) -> Vec<RwaLinkReport> {
    device
        .links
        .iter()
        .map(|l| {
            let (lo, hi) = (l.gdc_mhz - l.g0_mhz.abs(), l.gdc_mhz + l.g0_mhz.abs());
            let outside = lo < COUPLER_RANGE_MHZ.0 || hi > COUPLER_RANGE_MHZ.1;
            if l.is_resonant() {
                return RwaLinkReport { pair: l.pair, ratio: None, flag: RwaFlag::Resonant, outside_coupler_range: outside };
            }
            let ratio = l.g0_mhz.abs() / l.delta_mhz.abs();
            let flag = if ratio >= RWA_INVALID {
                RwaFlag::Invalid
            } else if ratio > RWA_MARGINAL {
                RwaFlag::Marginal
            } else {
                RwaFlag::Ok
            };
            RwaLinkReport { pair: l.pair, ratio: Some(ratio), flag, outside_coupler_range: outside }
        })
        .collect()
}

pub fn format_rwa_report(reports: &[RwaLinkReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let (j, k) = (r.pair.0 + 1, r.pair.1 + 1);
        let status = match r.flag {
            RwaFlag::Resonant => "resonant (exact)".to_string(),
            RwaFlag::Ok => "ok".to_string(),
            RwaFlag::Marginal => "marginal".to_string(),
            RwaFlag::Invalid => "RWA invalid".to_string(),
        };
        let ratio = r.ratio.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!("link ({j},{k}): g0/Delta = {ratio}  {status}"));
        if r.outside_coupler_range {
            out.push_str("  [outside coupler range -55..+5 MHz]");
        }
        out.push('\n');
    }
    out
}

// ---- configuration file ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    sites: BTreeMap<String, RawSite>,
    #[serde(default)]
    links: BTreeMap<String, RawLink>,
    simulation: RawSimulation,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSite {
    omega_ghz: f64,
    #[serde(default)]
    u2_mhz: f64,
    #[serde(default)]
    u3_mhz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t1_us: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tphi_us: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    pair: [usize; 2],
    #[serde(default)]
    g0_mhz: f64,
    #[serde(default)]
    delta_mhz: f64,
    #[serde(default)]
    phi_rad: f64,
    #[serde(default)]
    gdc_mhz: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    levels: usize,
    #[serde(default = "default_dt")]
    dt_ns: f64,
}

fn default_dt() -> f64 {
    1.0
}

fn numbered<T>(section: &str, map: BTreeMap<String, T>, errs: &mut Vec<String>) -> Vec<(usize, T)> {
    let mut out = Vec::new();
    for (key, v) in map {
        match key.parse::<usize>() {
            Ok(n) if n >= 1 => out.push((n, v)),
            _ => errs.push(format!("{section}.{key}: section keys must be positive integers")),
        }
    }
    out.sort_by_key(|(n, _)| *n);
    out
}

pub fn parse_config(text: &str) -> Result<DeviceSpec> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut errs = Vec::new();

    let sites = numbered("sites", raw.sites, &mut errs);
    for (pos, (n, _)) in sites.iter().enumerate() {
        if *n != pos + 1 {
            errs.push(format!("sites.{n}: site numbers must be contiguous from 1"));
            break;
        }
    }
    let num_sites = sites.len();
    let sites: Vec<SiteSpec> = sites
        .into_iter()
        .map(|(_, s)| SiteSpec {
            omega_ghz: s.omega_ghz,
            u2_mhz: s.u2_mhz,
            u3_mhz: s.u3_mhz,
            t1_us: s.t1_us,
            tphi_us: s.tphi_us,
        })
        .collect();

    let mut links = Vec::new();
    for (n, l) in numbered("links", raw.links, &mut errs) {
        let [a, b] = l.pair;
        if a == 0 || b == 0 || a > num_sites || b > num_sites {
            errs.push(format!("links.{n}.pair: sites must be in 1..={num_sites}, got [{a}, {b}]"));
            continue;
        }
        links.push(LinkSpec {
            pair: (a - 1, b - 1),
            g0_mhz: l.g0_mhz,
            delta_mhz: l.delta_mhz,
            phi_rad: l.phi_rad,
            gdc_mhz: l.gdc_mhz,
        });
    }

    let device = DeviceSpec { sites, links, levels: raw.simulation.levels, dt_ns: raw.simulation.dt_ns };
    errs.extend(device.validation_errors());
    if errs.is_empty() {
        Ok(device)
    } else {
        Err(Error::Validation(errs))
    }
}

pub fn load_config(path: &Path) -> Result<DeviceSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn serialize_config(device: &DeviceSpec) -> String {
    let raw = RawConfig {
        sites: device
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    (i + 1).to_string(),
                    RawSite {
                        omega_ghz: s.omega_ghz,
                        u2_mhz: s.u2_mhz,
                        u3_mhz: s.u3_mhz,
                        t1_us: s.t1_us,
                        tphi_us: s.tphi_us,
                    },
                )
            })
            .collect(),
        links: device
            .links
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    (i + 1).to_string(),
                    RawLink {
                        pair: [l.pair.0 + 1, l.pair.1 + 1],
                        g0_mhz: l.g0_mhz,
                        delta_mhz: l.delta_mhz,
                        phi_rad: l.phi_rad,
                        gdc_mhz: l.gdc_mhz,
                    },
                )
            })
            .collect(),
        simulation: RawSimulation { levels: device.levels, dt_ns: device.dt_ns },
    };
    toml::to_string(&raw).expect("device config always serializes")
}
