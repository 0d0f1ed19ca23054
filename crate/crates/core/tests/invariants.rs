//! Property checks over randomly drawn devices and pulses. Truncations are
//! kept small so each case runs in milliseconds.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use qdcav::dynamics::{
    evolve_coherent, liouvillian_matrix, propagate_expm, DensityMatrix, EvolveOptions, Frame,
};
use qdcav::fock::{evolve_fock, Wavepacket};
use qdcav::model::{PulseShape, SystemParams};
use qdcav::ode::Tolerances;
use qdcav::operators::{mode_lowering, Polarization, SpaceDescriptor};
use qdcav::spectra::{empty_cavity_amplitude, linear_response_reflectivity};

fn device() -> impl Strategy<Value = SystemParams> {
    (
        5.0..40.0f64,
        40.0..200.0f64,
        0.3..1.0f64,
        0.05..2.0f64,
        0.0..40.0f64,
        0.0..std::f64::consts::FRAC_PI_2,
        -100.0..0.0f64,
    )
        .prop_map(|(g, kappa_tot, eta_out, gamma, fss, theta, delta_h)| SystemParams {
            g,
            kappa_tot,
            eta_out,
            gamma,
            delta_fss: fss,
            theta,
            delta_h,
            delta_x: -fss / 2.0,
            delta_y: fss / 2.0,
            n_max_v: 2,
            n_max_h: 1,
            ..SystemParams::default()
        })
}

fn quick() -> EvolveOptions {
    EvolveOptions {
        snapshots: 60,
        ..EvolveOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_and_hermiticity_are_kept(
        p in device(),
        tau in 10.0..80.0f64,
        n in 0.0..4.0f64,
        displaced in any::<bool>(),
    ) {
        let opts = EvolveOptions {
            frame: if displaced { Frame::Displaced } else { Frame::Lab },
            ..quick()
        };
        let traj = evolve_coherent(&p, &PulseShape::gaussian(tau), n, &opts).unwrap();
        for err in traj.trace_errors() {
            prop_assert!(err < 1e-8, "trace error {err}");
        }
        for s in &traj.states {
            prop_assert!(s.hermitian_deviation() < 1e-9);
            prop_assert!(s.min_eigenvalue() > -1e-6);
        }
    }

    #[test]
    fn fock_blocks_keep_unit_trace(p in device(), tau in 10.0..80.0f64) {
        let traj = evolve_fock(&p, &Wavepacket::new(PulseShape::gaussian(tau)), &quick()).unwrap();
        for s in &traj.states {
            prop_assert!((s.rho11.trace() - 1.0).norm() < 1e-8);
            prop_assert!((s.rho00.trace() - 1.0).norm() < 1e-8);
        }
        for v in traj.exciton_population() {
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&v));
        }
    }

    #[test]
    fn reflectivity_is_bounded(p in device(), det in -300.0..300.0f64) {
        let r = linear_response_reflectivity(&p, det).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r), "R = {r}");
    }

    #[test]
    fn empty_cavity_is_passive(
        kappa in 10.0..300.0f64,
        eta in 0.01..1.0f64,
        det in -500.0..500.0f64,
    ) {
        let p = SystemParams { kappa_tot: kappa, eta_out: eta, g: 0.0, ..SystemParams::default() };
        prop_assert!(empty_cavity_amplitude(&p, det).norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn propagator_is_a_semigroup(
        p in device(),
        re in -0.05..0.05f64,
        im in -0.05..0.05f64,
        t1 in 0.0..100.0f64,
        t2 in 0.0..100.0f64,
    ) {
        let p = p.with_truncation(1, 1);
        let l = liouvillian_matrix(&p, C64::new(re, im)).unwrap();
        let rho0 = DensityMatrix::ground(p.space());
        let direct = propagate_expm(&l, &rho0, t1 + t2).unwrap();
        let split = propagate_expm(&l, &propagate_expm(&l, &rho0, t1).unwrap(), t2).unwrap();
        let diff = (&direct.matrix - &split.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff < 1e-8, "max deviation {diff}");
    }

    #[test]
    fn ladder_commutator_is_identity_below_cutoff(n_v in 1usize..6, n_h in 1usize..4) {
        let space = SpaceDescriptor::new(n_v, n_h).unwrap();
        let a = mode_lowering(space, Polarization::V);
        let c = a.commutator(&a.adjoint()).unwrap().matrix;
        let d = space.total_dim();
        for i in 0..d {
            let (_, nv, _) = space.labels(i);
            let want = if nv < n_v { 1.0 } else { -(n_v as f64) };
            prop_assert!((c[(i, i)] - want).norm() < 1e-12);
        }
        let off = &c - DMatrix::from_diagonal(&c.diagonal());
        prop_assert!(off.iter().all(|z| z.norm() < 1e-12));
    }
}

#[test]
fn closed_system_conserves_purity() {
    let p = SystemParams {
        gamma: 0.0,
        kappa_tot: 0.0,
        eta_out: 1.0,
        n_max_v: 2,
        n_max_h: 1,
        ..SystemParams::default()
    };
    let space = p.space();
    let rho0 = DensityMatrix::basis_state(space, 1, 1, 0);
    // Purity drift grows with the window at fixed rtol; at the default 1e-8
    // this state reaches about 1e-8 after 300 ps.
    let opts = EvolveOptions {
        initial: Some(rho0),
        window: Some((0.0, 300.0)),
        tolerances: Tolerances {
            rtol: 1e-10,
            atol: 1e-12,
            ..Tolerances::default()
        },
        ..quick()
    };
    let traj = evolve_coherent(&p, &PulseShape::gaussian(30.0), 0.0, &opts).unwrap();
    for s in &traj.states {
        assert!((s.purity() - 1.0).abs() < 1e-8, "purity {}", s.purity());
    }
}

#[test]
fn lab_and_displaced_frames_agree() {
    // The lab frame needs the larger V cutoff: at (4, 2) its truncation
    // error alone is about 1e-5 for <n> = 1.
    let p = SystemParams::default().with_truncation(6, 2);
    let pulse = PulseShape::gaussian(56.0);
    let run = |frame| {
        let opts = EvolveOptions {
            frame,
            snapshots: 200,
            ..EvolveOptions::default()
        };
        evolve_coherent(&p, &pulse, 1.0, &opts).unwrap()
    };
    let (lab, disp) = (run(Frame::Lab), run(Frame::Displaced));
    for (a, b) in [
        (lab.population_h(), disp.population_h()),
        (lab.population_v(), disp.population_v()),
        (lab.photons_h(), disp.photons_h()),
        (lab.photons_v(), disp.photons_v()),
    ] {
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "frames differ by {diff:e}");
    }
}
