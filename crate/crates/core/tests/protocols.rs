use std::f64::consts::PI;

use chiralsim_core::experiments::{
    adiabatic_fidelity, darkon_state, fit_g0, run_adiabatic, run_chevron, run_circulation, run_darkon,
    run_entanglement, run_eigenstate_prep, run_spectrum, run_two_photon, trs_metric, ChevronMode, CirculationOptions,
    ExperimentResult, Frame, Layout, RampSchedule, RampShape,
};
use chiralsim_core::observables::column_p;
use chiralsim_core::{reference_ring, FockBasis};

#[test]
fn circulation_schema_and_start() {
    let r = run_circulation(&reference_ring(), PI / 2.0, &CirculationOptions::new(3)).unwrap();
    assert_eq!(
        r.result.columns,
        ["t_ns", "p_q1", "p_q2", "p_q3", "n_q1", "n_q2", "n_q3", "i_12", "i_23", "i_31", "i_chiral"]
    );
    assert_eq!(r.result.rows.len(), 601);
    assert_eq!(r.result.rows[0][1], 1.0);
    assert!(r.result.device_toml.is_some());
}

#[test]
fn trs_metric_is_even_in_flux() {
    let d = reference_ring();
    for phi in [0.4, 1.1, 2.0] {
        let a = trs_metric(&d, phi).unwrap();
        let b = trs_metric(&d, -phi).unwrap();
        assert!((a.d - b.d).abs() < 1e-6, "{phi}: {} vs {}", a.d, b.d);
        assert!((a.period - b.period).abs() < 1e-6);
    }
}

#[test]
fn two_photon_without_flux_has_no_order() {
    let r = run_two_photon(&reference_ring(), 0.0, &CirculationOptions::two_photon(3)).unwrap();
    assert_eq!(r.order.orientation, 0);
    assert!(r.result.columns.iter().any(|c| c == "v_q3"));
}

#[test]
fn lab_circulation_follows_effective_dynamics() {
    let d = reference_ring();
    let mut opts = CirculationOptions::new(3);
    opts.duration = 150.0;
    let eff = run_circulation(&d, PI / 2.0, &opts).unwrap();
    opts.frame = Frame::Lab;
    let lab = run_circulation(&d, PI / 2.0, &opts).unwrap();
    for (a, b) in lab.occupations.iter().zip(&eff.occupations) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 0.1);
        }
    }
    // currents measured after rotating back into the rotating frame
    let ic = lab.result.column("i_chiral").unwrap();
    let ie = eff.result.column("i_chiral").unwrap();
    let worst = ic.iter().zip(&ie).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.2, "{worst}");
}

#[test]
fn chevron_off_resonance_blocks_transfer() {
    let r = run_chevron(ChevronMode::Static, &[40.0], 300.0, 1.0).unwrap();
    let p = r.column("p_q1").unwrap();
    // detuned Rabi: minimum 1 - g²/(g² + δ²/4) with g = 2 MHz, δ = 40 MHz
    let floor = 1.0 - 4.0 / (4.0 + 400.0);
    assert!(p.iter().all(|&x| x > floor - 2e-3), "{}", p.iter().cloned().fold(1.0, f64::min));
    assert!(matches!(r.layout, Layout::Grid { .. }));
}

#[test]
fn spectrum_long_table() {
    let grid: Vec<f64> = (0..5).map(|i| -PI + PI * i as f64 / 2.0).collect();
    let r = run_spectrum(&reference_ring(), &grid).unwrap();
    assert_eq!(r.columns, ["flux_rad", "manifold", "band_index", "energy_mhz", "gap_mhz"]);
    assert_eq!(r.rows.len(), 5 * 2 * 3);
    assert!(r.summary.contains_key("gap_3g0_mhz"));
}

#[test]
fn ramp_fidelity_grows_with_duration() {
    let d = reference_ring();
    let f: Vec<f64> = [100.0, 200.0, 400.0, 800.0]
        .iter()
        .map(|&t| adiabatic_fidelity(&d, PI / 2.0, &RampSchedule::linear(t), 1).unwrap())
        .collect();
    assert!(f.windows(2).all(|w| w[1] >= w[0]), "{f:?}");
    assert!(f[3] > 0.95, "{f:?}");
}

#[test]
fn amplitude_only_ramp_cannot_select_ground_state() {
    let d = reference_ring();
    let s = RampSchedule { duration: 800.0, shape: RampShape::Cosine, bias_mhz: Some(0.0) };
    let f = adiabatic_fidelity(&d, PI / 2.0, &s, 1).unwrap();
    assert!((f - 1.0 / 3.0).abs() < 0.05, "{f}");
}

#[test]
fn adiabatic_reference_columns() {
    let grid = [-PI / 2.0, PI / 2.0];
    let r = run_adiabatic(&reference_ring(), &grid, &RampSchedule::linear(800.0), 1).unwrap();
    let ramped = r.column("i_chiral").unwrap();
    let reference = r.column("i_chiral_ref").unwrap();
    assert!((reference[0] - 1.0).abs() < 1e-9 && (reference[1] + 1.0).abs() < 1e-9);
    for (a, b) in ramped.iter().zip(&reference) {
        assert!((a - b).abs() < 0.1, "{a} vs {b}");
    }
}

#[test]
fn darkon_limits_match_pure_runs() {
    let d = reference_ring();
    let r = run_darkon(&d, PI / 2.0, &[0.0], 200.0).unwrap();
    let c = run_circulation(&d, PI / 2.0, &CirculationOptions { duration: 200.0, ..CirculationOptions::new(3) }).unwrap();
    for j in 0..3 {
        let a = r.column(&column_p(j)).unwrap();
        for (x, y) in a.iter().zip(&c.occupations[j]) {
            assert!((x - y).abs() < 1e-9);
        }
    }
    assert!(run_darkon(&d, 0.0, &[2.0], 10.0).is_err());
    let s = darkon_state(&FockBasis::new(3, 2, None).unwrap(), PI / 2.0).unwrap();
    assert_eq!(s.amps.iter().filter(|z| z.norm() > 1e-12).count(), 1);
}

#[test]
fn entanglement_rejects_qutrits() {
    assert!(run_entanglement(&reference_ring().with_levels(3), 0.0, 100.0, 1e-2).is_err());
}

#[test]
fn eig_prep_rows_per_momentum() {
    let r = run_eigenstate_prep(&reference_ring(), 1, &[0.0, PI / 2.0]).unwrap();
    assert_eq!(r.rows.len(), 6);
    let f = r.column("fidelity").unwrap();
    assert!(f.iter().all(|&x| (x - 1.0).abs() < 1e-9), "{f:?}");
    let t = r.summary["t_star_ns"].as_f64().unwrap();
    assert!((t - 2.0 * PI / (9.0 * 2.0 * PI * 2e-3)).abs() < 1e-6, "{t}");
}

#[test]
fn fit_flags_constant_input() {
    let mut flat = ExperimentResult::new(
        "flat",
        vec!["t_ns".into(), "p_q1".into(), "p_q2".into(), "p_q3".into()],
        Layout::Series { x: "t_ns".into(), ys: vec![] },
    );
    for i in 0..50 {
        flat.push(vec![i as f64 * 4.0, 0.0, 0.0, 0.0]);
    }
    let fit = fit_g0(&flat, &reference_ring(), PI / 2.0, (3.0, 5.0), 9).unwrap();
    assert!(fit.warnings.iter().any(|w| w.contains("flat")), "{:?}", fit.warnings);
}

#[test]
fn fit_rejects_missing_columns() {
    let r = ExperimentResult::new("x", vec!["t_ns".into()], Layout::Series { x: "t_ns".into(), ys: vec![] });
    assert!(fit_g0(&r, &reference_ring(), 0.0, (3.0, 5.0), 9).is_err());
}
