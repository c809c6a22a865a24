use super::*;
use crate::convex::{lambda_subgradient_check, ProbeSpec};
use crate::diagnostics::{gradient_check, trajectory_errors, Reference};
use crate::spaces::DualVec;
use crate::stepper::{run, ShiftedEnergy, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probes(n: usize, count: usize, scale: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| DVector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0)))
        .collect()
}

fn all_configs() -> Vec<ProblemConfig> {
    let mut out = vec![
        ProblemConfig::new(ProblemId::P1),
        ProblemConfig::new(ProblemId::P2),
        ProblemConfig::new(ProblemId::P3),
    ];
    let mut cubic = ProblemConfig::new(ProblemId::P3);
    cubic.reaction = Reaction::TruncatedCubic;
    out.push(cubic);
    for route in [StressRoute::Energy, StressRoute::Perturbation] {
        for stress in [StressLaw::Linear, StressLaw::DoubleWell] {
            let mut c = ProblemConfig::new(ProblemId::P4);
            c.route = route;
            c.stress = stress;
            out.push(c);
        }
    }
    out.push(ProblemConfig::new(ProblemId::Oscillator));
    out
}

#[test]
fn p1_energy_plug_ins() {
    let cfg = ProblemConfig::new(ProblemId::P1);
    let sys = build_p1(&cfg).unwrap();
    let n = sys.dim();
    let e0 = sys.energy.value(0.0, &DVector::zeros(n));
    assert!((e0 - cfg.grid.domain_measure() / 4.0).abs() < 1e-14);
    let parts = grid_parts(&cfg.grid);
    let energy = p_laplace_energy(&cfg, &parts);
    let ones = DVector::from_element(n, 1.0);
    // Only the boundary nodes contribute to the well at u = 1.
    assert!(
        (energy.well_energy(&ones) - 0.25 * (cfg.grid.domain_measure() - parts.mass.sum())).abs()
            < 1e-15
    );
    let mut no_boundary = energy;
    no_boundary.well = no_boundary.well.map(|(m, _)| (m, 0.0));
    assert_eq!(no_boundary.well_energy(&ones), 0.0);
}

#[test]
fn shipped_gradients_match_finite_differences() {
    for cfg in all_configs() {
        let sys = build(&cfg).unwrap();
        let ps = probes(sys.dim(), 8, 0.8, 5);
        let check = gradient_check(
            |u| sys.energy.value(0.3, u),
            |u| sys.energy.gradient(0.3, u),
            &ps,
        );
        assert!(
            check.worst_relative_error < 1e-6,
            "{:?}: {}",
            cfg.id,
            check.worst_relative_error
        );
        let check = gradient_check(
            |v| sys.dissipation.value(v),
            |v| sys.dissipation.gradient(v),
            &ps,
        );
        assert!(
            check.worst_relative_error < 1e-6,
            "{:?} dissipation",
            cfg.id
        );
    }
}

#[test]
fn shipped_hessians_match_gradient_differences() {
    for cfg in all_configs() {
        let sys = build(&cfg).unwrap();
        let u = &probes(sys.dim(), 1, 0.7, 9)[0];
        let hess = sys.energy.hessian(0.0, u).unwrap();
        let dir = &probes(sys.dim(), 1, 1.0, 10)[0];
        let eps = 1e-6;
        let fd = (sys.energy.gradient(0.0, &(u + dir * eps))
            - sys.energy.gradient(0.0, &(u - dir * eps)))
            / (2.0 * eps);
        let an = &hess * dir;
        assert!(
            (&fd - &an).norm() <= 1e-6 * an.norm().max(1.0),
            "{:?}",
            cfg.id
        );
    }
}

#[test]
fn stress_hessians_match_gradient_differences() {
    let grid = GridSpec::line(1.0, 16).unwrap();
    let parts = grid_parts(&grid);
    let n = grid.interior_count();
    for law in [StressLaw::Linear, StressLaw::DoubleWell] {
        let energy = BeamEnergy {
            gradient: parts.grad.clone(),
            law: Some(law),
            bending: DMatrix::zeros(n, n),
            mu: 0.0,
        };
        for (k, u) in probes(n, 4, 0.3, 21).into_iter().enumerate() {
            let dir = &probes(n, 1, 1.0, 30 + k as u64)[0];
            let eps = 1e-6;
            let fd = (energy.gradient(0.0, &(&u + dir * eps))
                - energy.gradient(0.0, &(&u - dir * eps)))
                / (2.0 * eps);
            let an = energy.hessian(0.0, &u).unwrap() * dir;
            assert!((&fd - &an).norm() <= 1e-6 * an.norm().max(1.0), "{law:?}");
        }
    }
}

#[test]
fn p_laplacian_energy_is_convex() {
    for grid in [
        GridSpec::line(1.0, 16).unwrap(),
        GridSpec::rectangle(1.0, 1.0, 6, 6).unwrap(),
    ] {
        let parts = grid_parts(&grid);
        let energy = PLaplaceEnergy {
            gradient: parts.grad.clone(),
            p: 3.0,
            well: None,
        };
        for (k, u) in probes(grid.interior_count(), 5, 1.0, 2)
            .into_iter()
            .enumerate()
        {
            let xi = DualVec::new(energy.gradient(0.0, &u));
            let check = lambda_subgradient_check(
                &|x: &DVector<f64>| energy.value(0.0, x),
                &StateVec::new(u),
                &xi,
                0.0,
                &|d: &DVector<f64>| d.norm(),
                &ProbeSpec {
                    samples: 200,
                    radius: 1.0,
                    seed: k as u64,
                },
            )
            .unwrap();
            assert!(check.passed, "slack {}", check.worst_slack);
        }
    }
}

#[test]
fn p1_lambda_covers_the_double_well() {
    let sys = build_p1(&ProblemConfig::new(ProblemId::P1)).unwrap();
    let c = sys.norms.embedding_vh();
    assert!((sys.lambda - 0.5 * c * c).abs() < 1e-15);
    for (k, u) in probes(sys.dim(), 4, 1.0, 8).into_iter().enumerate() {
        let xi = DualVec::new(sys.energy.gradient(0.0, &u));
        let norms = sys.norms.clone();
        let check = lambda_subgradient_check(
            &|x: &DVector<f64>| sys.energy.value(0.0, x),
            &StateVec::new(u),
            &xi,
            sys.lambda,
            &|d: &DVector<f64>| norms.v.quad(d).sqrt(),
            &ProbeSpec {
                samples: 300,
                radius: 1.5,
                seed: k as u64,
            },
        )
        .unwrap();
        assert!(check.passed);
    }
}

#[test]
fn p2_power_gradient_vanishes_at_rest_and_r2_matches_mass_damping() {
    let mut cfg = ProblemConfig::new(ProblemId::P2);
    let sys = build_p2(&cfg).unwrap();
    let n = sys.dim();
    assert_eq!(
        sys.dissipation.gradient(&DVector::zeros(n)),
        DVector::zeros(n)
    );
    assert_eq!(sys.growth.holder_gamma, Some(1.0));

    cfg.r = 2.0;
    let p2 = Arc::new(build_p2(&cfg).unwrap());
    let mut p1cfg = cfg.clone();
    p1cfg.id = ProblemId::P1;
    let p1 = build_p1(&p1cfg).unwrap();
    let parts = grid_parts(&cfg.grid);
    let k = SpdOperator::new(parts.stiffness.clone(), "k").unwrap();
    let damping = &parts.stiffness + DMatrix::from_diagonal(&parts.mass);
    let mut p1 = p1;
    p1.dissipation = DissipationSpec::quadratic(damping, &k).unwrap();
    p1.perturbation = Arc::new(PowerPerturbation {
        mass: parts.mass.clone(),
        q: cfg.q,
        s_u: cfg.s_u,
        velocity: None,
    });
    let p1 = Arc::new(p1);
    let (u0, v0) = initial_data(&cfg).unwrap();
    let config = SolverConfig::new(0.01, 0.2);
    let a = run(&p1, &u0, &v0, &config).unwrap();
    let b = run(&p2, &u0, &v0, &config).unwrap();
    let e = trajectory_errors(&a, Reference::Trajectory(&b)).unwrap();
    assert!(e.err_ch < 1e-9, "{e:?}");
}

#[test]
fn p3_linear_tracks_the_damped_eigenmode() {
    let mut cfg = ProblemConfig::new(ProblemId::P3);
    cfg.mu = 0.1;
    cfg.grid = GridSpec::line(1.0, 17).unwrap();
    let sys = Arc::new(build_p3(&cfg).unwrap());
    let (u0, v0) = initial_data(&cfg).unwrap();
    let h = cfg.grid.spacing(0);
    let lam = 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
    let mode = DiagonalOscillatorExact::new(&OscillatorSpec {
        stiffness: DMatrix::from_element(1, 1, lam + 1.0),
        damping: DMatrix::from_element(1, 1, cfg.mu * lam),
        u0: vec![cfg.amplitude],
        v0: vec![0.0],
    })
    .unwrap();
    let shape = u0.as_vector() / cfg.amplitude;
    let err = |tau: f64| {
        let traj = run(&sys, &u0, &v0, &SolverConfig::new(tau, 1.0)).unwrap();
        traj.records
            .iter()
            .map(|r| (r.u.as_vector() - &shape * mode.state(r.t)[0]).amax())
            .fold(0.0, f64::max)
    };
    let (e1, e2) = (err(2e-3), err(1e-3));
    assert!(e2 < 5e-3, "{e2}");
    let ratio = e1 / e2;
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn zero_data_stays_at_rest() {
    for id in [ProblemId::P3, ProblemId::P4] {
        let mut cfg = ProblemConfig::new(id);
        cfg.amplitude = 0.0;
        let sys = Arc::new(build(&cfg).unwrap());
        let (u0, v0) = initial_data(&cfg).unwrap();
        let traj = run(&sys, &u0, &v0, &SolverConfig::new(0.01, 0.2)).unwrap();
        for r in &traj.records {
            assert_eq!(r.u.as_vector().amax(), 0.0);
        }
    }
}

#[test]
fn p3_energy_decays_monotonically_without_reaction() {
    let mut cfg = ProblemConfig::new(ProblemId::P3);
    cfg.mu = 0.05;
    let mut sys = build_p3(&cfg).unwrap();
    sys.perturbation = Arc::new(crate::stepper::ZeroPerturbation { dim: sys.dim() });
    sys.has_perturbation = false;
    let sys = Arc::new(sys);
    let (u0, v0) = initial_data(&cfg).unwrap();
    let traj = run(&sys, &u0, &v0, &SolverConfig::new(0.005, 1.0)).unwrap();
    for n in 1..traj.records.len() {
        assert!(traj.total_energy(n) <= traj.total_energy(n - 1));
    }
}

#[test]
fn p4_energy_route_rejects_lost_convexity() {
    let mut cfg = ProblemConfig::new(ProblemId::P4);
    cfg.stress = StressLaw::DoubleWell;
    cfg.mu = 0.01;
    let err = build_p4(&cfg).unwrap_err();
    assert!(err.to_string().contains("loses convexity"), "{err}");
    cfg.mu = 0.1;
    let sys = build_p4(&cfg).unwrap();
    assert!(sys.lambda < 0.0);
    cfg.grid = GridSpec::line(1.0, 6).unwrap();
    assert!(build_p4(&cfg).is_err());
}

#[test]
fn p4_double_well_energy_route_is_lambda_convex() {
    let mut cfg = ProblemConfig::new(ProblemId::P4);
    cfg.stress = StressLaw::DoubleWell;
    let sys = build_p4(&cfg).unwrap();
    for (k, u) in probes(sys.dim(), 4, 0.3, 4).into_iter().enumerate() {
        let xi = DualVec::new(sys.energy.gradient(0.0, &u));
        let norms = sys.norms.clone();
        let check = lambda_subgradient_check(
            &|x: &DVector<f64>| sys.energy.value(0.0, x),
            &StateVec::new(u),
            &xi,
            sys.lambda,
            &|d: &DVector<f64>| norms.v.quad(d).sqrt(),
            &ProbeSpec {
                samples: 300,
                radius: 0.5,
                seed: k as u64,
            },
        )
        .unwrap();
        assert!(check.passed, "slack {}", check.worst_slack);
    }
}

#[test]
fn p4_linear_routes_agree_to_first_order() {
    let mut cfg = ProblemConfig::new(ProblemId::P4);
    let energy = Arc::new(build_p4(&cfg).unwrap());
    cfg.route = StressRoute::Perturbation;
    let pert = Arc::new(build_p4(&cfg).unwrap());
    let (u0, v0) = initial_data(&cfg).unwrap();
    let diff = |tau: f64| {
        let c = SolverConfig::new(tau, 0.5);
        let a = run(&energy, &u0, &v0, &c).unwrap();
        let b = run(&pert, &u0, &v0, &c).unwrap();
        trajectory_errors(&a, Reference::Trajectory(&b))
            .unwrap()
            .err_ch
    };
    let (d1, d2) = (diff(2e-3), diff(1e-3));
    assert!(d2 < d1 && d1 / d2 > 1.6, "{d1} {d2}");
}

#[test]
fn oscillator_builder_contracts() {
    assert!(build_oscillator(&DMatrix::zeros(1, 1), &DMatrix::identity(1, 1)).is_err());
    assert!(
        build_oscillator(&DMatrix::identity(1, 1), &DMatrix::from_element(1, 1, -1.0)).is_err()
    );

    let spec = OscillatorSpec {
        stiffness: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0])),
        damping: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.5])),
        u0: vec![1.0, -0.5],
        v0: vec![0.0, 2.0],
    };
    let both = Arc::new(build_oscillator(&spec.stiffness, &spec.damping).unwrap());
    let config = SolverConfig::new(0.01, 1.0);
    let joint = run(
        &both,
        &StateVec::from_slice(&spec.u0),
        &StateVec::from_slice(&spec.v0),
        &config,
    )
    .unwrap();
    for i in 0..2 {
        let single = Arc::new(
            build_oscillator(
                &DMatrix::from_element(1, 1, spec.stiffness[(i, i)]),
                &DMatrix::from_element(1, 1, spec.damping[(i, i)]),
            )
            .unwrap(),
        );
        let traj = run(
            &single,
            &StateVec::from_slice(&[spec.u0[i]]),
            &StateVec::from_slice(&[spec.v0[i]]),
            &config,
        )
        .unwrap();
        for (a, b) in joint.records.iter().zip(&traj.records) {
            assert!((a.u[i] - b.u[0]).abs() < 1e-12);
        }
    }
    let exact = DiagonalOscillatorExact::new(&spec).unwrap();
    let err = trajectory_errors(&joint, Reference::Exact(&exact)).unwrap();
    assert!(err.err_ch < 0.02);
}

#[test]
fn unit_oscillator_closed_form() {
    let exact = DiagonalOscillatorExact::new(&OscillatorSpec::unit()).unwrap();
    let w = 3f64.sqrt() / 2.0;
    for t in [0.0f64, 0.3, 1.7] {
        let want = (-t / 2.0).exp() * ((w * t).cos() + (w * t).sin() / (2.0 * w));
        assert!((exact.state(t)[0] - want).abs() < 1e-15);
        // u'' + u' + u = 0 by central differences
        let h = 1e-4;
        let acc =
            (exact.state(t + h)[0] - 2.0 * exact.state(t)[0] + exact.state(t - h)[0]) / (h * h);
        assert!((acc + exact.velocity(t)[0] + exact.state(t)[0]).abs() < 1e-6);
    }
}

#[test]
fn audits_of_oscillator_p1_and_a_shifted_energy() {
    let cfg = AuditConfig {
        samples: 200,
        ..AuditConfig::default()
    };
    let osc = build(&ProblemConfig::new(ProblemId::Oscillator)).unwrap();
    let rep = assumption_audit(&osc, &cfg).unwrap();
    assert!(
        rep.entries.iter().all(|e| e.status == AuditStatus::Pass),
        "{rep}"
    );

    let p1 = build_p1(&ProblemConfig::new(ProblemId::P1)).unwrap();
    let rep = assumption_audit(&p1, &cfg).unwrap();
    for check in [
        AuditCheck::LowerBound,
        AuditCheck::PowerControl,
        AuditCheck::SubgradientControl,
        AuditCheck::PerturbationGrowth,
    ] {
        assert_eq!(rep.status(check), Some(AuditStatus::Pass), "{rep}");
    }

    let shifted = osc.clone().with_energy(Arc::new(ShiftedEnergy {
        inner: osc.energy.clone(),
        shift: -1.0,
    }));
    let rep = assumption_audit(&shifted, &cfg).unwrap();
    assert_eq!(rep.status(AuditCheck::LowerBound), Some(AuditStatus::Fail));
}

#[test]
fn config_validation_and_warnings() {
    let mut cfg = ProblemConfig::new(ProblemId::P1);
    assert!(cfg.validate().is_ok());
    assert!(!cfg.admissibility_warnings().is_empty());
    cfg.r = 1.0;
    assert!(build_p2(&cfg).is_err());
    cfg.r = 2.0;
    cfg.s_u = 0.5;
    assert!(cfg.validate().is_err());
    assert_eq!("p3".parse::<ProblemId>().unwrap(), ProblemId::P3);
    assert!("p9".parse::<ProblemId>().is_err());
}
