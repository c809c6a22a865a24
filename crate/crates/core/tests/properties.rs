//! Properties of the public API on randomized inputs.

use std::sync::Arc;

use dinsys_core::convex::{fenchel_young_gap, psi_conjugate, psi_grad};
use dinsys_core::diagnostics::{consecutive_pairs, edi_report, initial_pairs};
use dinsys_core::problems::{build, initial_data, OscillatorSpec};
use dinsys_core::stepper::run;
use dinsys_core::{DualVec, GridSpec, ProblemConfig, ProblemId, SolverConfig, StateVec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn oscillator(k: [f64; 2], c: [f64; 2], u0: [f64; 2], v0: [f64; 2]) -> ProblemConfig {
    let mut cfg = ProblemConfig::new(ProblemId::Oscillator);
    cfg.oscillator = OscillatorSpec {
        stiffness: DMatrix::from_row_slice(2, 2, &[k[0], 0.0, 0.0, k[1]]),
        damping: DMatrix::from_row_slice(2, 2, &[c[0], 0.1, 0.1, c[1]]),
        u0: u0.to_vec(),
        v0: v0.to_vec(),
    };
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn unforced_oscillators_dissipate_energy_and_satisfy_edi(
        k in prop::array::uniform2(0.25f64..6.0),
        c in prop::array::uniform2(0.3f64..3.0),
        u0 in prop::array::uniform2(-2.0f64..2.0),
        v0 in prop::array::uniform2(-2.0f64..2.0),
        steps in 5usize..80,
    ) {
        let cfg = oscillator(k, c, u0, v0);
        let system = Arc::new(build(&cfg).unwrap());
        let (u, v) = initial_data(&cfg).unwrap();
        let traj = run(&system, &u, &v, &SolverConfig::new(1.0 / steps as f64, 1.0)).unwrap();
        prop_assert_eq!(traj.records.len(), steps + 1);
        let scale = 1.0 + traj.total_energy(0).abs();
        for n in 1..=steps {
            prop_assert!(traj.total_energy(n) <= traj.total_energy(n - 1) + 1e-12 * scale);
        }
        let mut pairs = consecutive_pairs(&traj);
        pairs.extend(initial_pairs(&traj));
        let edi = edi_report(&traj, &pairs).unwrap();
        prop_assert!(edi.passed(), "worst {:?}", edi.worst());
    }

    #[test]
    fn reruns_are_bitwise_identical(amplitude in -1.0f64..1.0, tau in 0.02f64..0.1) {
        let mut cfg = ProblemConfig::new(ProblemId::P3);
        cfg.grid = GridSpec::line(1.0, 10).unwrap();
        cfg.amplitude = amplitude;
        let system = Arc::new(build(&cfg).unwrap());
        let (u, v) = initial_data(&cfg).unwrap();
        let config = SolverConfig::new(tau, 0.3);
        let a = run(&system, &u, &v, &config).unwrap();
        let b = run(&system, &u, &v, &config).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            let bits = |s: &StateVec| s.as_vector().iter().map(|z| z.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&x.u), bits(&y.u));
            prop_assert_eq!(bits(&x.v), bits(&y.v));
        }
    }

    #[test]
    fn fenchel_young_is_tight_on_the_graph_of_the_gradient(
        values in prop::collection::vec(-2.0f64..2.0, 8),
        probe in prop::collection::vec(-2.0f64..2.0, 8),
    ) {
        let mut cfg = ProblemConfig::new(ProblemId::P2);
        cfg.grid = GridSpec::line(1.0, 10).unwrap();
        cfg.r = 3.0;
        let system = build(&cfg).unwrap();
        let diss = &system.dissipation;
        let v = StateVec::from_slice(&values);
        let xi = psi_grad(diss, &v).unwrap();
        let conj = |x: &DualVec| psi_conjugate(diss, x, 1e-12).map(|r| r.value);

        let on_graph = fenchel_young_gap(|w| diss.value(w), |x| conj(&DualVec::new(x.clone())), &v, &xi).unwrap();
        let size = 1.0 + diss.value(v.as_vector()) + xi.pair(&v).abs();
        prop_assert!(on_graph.raw.abs() <= 1e-8 * size, "raw {}", on_graph.raw);

        let off = DualVec::from_slice(&probe);
        let off_graph = fenchel_young_gap(|w| diss.value(w), |x| conj(&DualVec::new(x.clone())), &v, &off).unwrap();
        prop_assert!(off_graph.raw >= -1e-8 * (1.0 + off.pair(&v).abs()), "raw {}", off_graph.raw);
    }
}
