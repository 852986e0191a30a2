use dyadlab::martingale::expand;
use dyadlab::measure::{average, pairing};
use dyadlab::shift::{generate_random_shift, ShiftGenerator};
use dyadlab::sparse::{dyadic_maximal, principal_cubes, verify_sparse};
use dyadlab::{DyadicLattice, Instance, LeafOperator, Measure, SquareFunctionSpec, StepFunction};
use proptest::prelude::*;

// Lattices with at most 2^6 leaves; every one can hold a complexity-1 shift.
fn lattice() -> impl Strategy<Value = DyadicLattice> {
    prop_oneof![
        (0u32..=1, 2u32..=5).prop_map(|(t, l)| DyadicLattice::new(1, t, l).unwrap()),
        (0u32..=1).prop_map(|t| DyadicLattice::new(2, t, 2).unwrap()),
    ]
}

fn with_data() -> impl Strategy<Value = (DyadicLattice, Vec<f64>, Vec<f64>, Vec<f64>, u64)> {
    lattice().prop_flat_map(|lat| {
        let n = lat.leaf_count();
        (
            Just(lat),
            prop::collection::vec(0.05f64..20.0, n),
            prop::collection::vec(0.05f64..20.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
            any::<u64>(),
        )
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parent_of_child_round_trips(lat in lattice()) {
        for q in lat.nonleaf_cubes() {
            for (c, child) in lat.children(q).enumerate() {
                prop_assert_eq!(lat.parent(child), Some(q));
                prop_assert_eq!(lat.child_digit(child), c);
                prop_assert!(lat.contains(q, child));
                let (outer, inner) = (lat.leaf_range(q), lat.leaf_range(child));
                prop_assert!(outer.start <= inner.start && inner.end <= outer.end);
            }
        }
        for i in 0..lat.leaf_count() {
            prop_assert_eq!(lat.row_major_to_morton(lat.morton_to_row_major(i)), i);
        }
    }

    #[test]
    fn martingale_expansion_reconstructs((lat, s, _, f, _) in with_data()) {
        let sigma = Measure::from_leaf_masses(lat, s).unwrap();
        let f = StepFunction::from_values(lat, f).unwrap();
        for base in [lat.min_level(), lat.max_level() - 1] {
            let g = expand(&f, &sigma, base).unwrap().reconstruct();
            for (a, b) in g.values().iter().zip(f.values()) {
                prop_assert!(rel_close(*a, *b, 1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shift_adjoint_identity((lat, s, w, f, seed) in with_data()) {
        let sigma = Measure::from_leaf_masses(lat, s).unwrap();
        let w = Measure::from_leaf_masses(lat, w).unwrap();
        let f = StepFunction::from_values(lat, f).unwrap();
        let g = f.map(|x| x.sin() + 0.3);
        let gen = ShiftGenerator { m: 1, n: 0, density: 0.7, specific_form: false, allow_noncancellative: false };
        let t = generate_random_shift(&lat, &gen, seed).unwrap();
        let lhs = pairing(&t.apply(&f, &sigma).unwrap(), &g, &w).unwrap();
        let rhs = pairing(&f, &t.adjoint().apply(&g, &w).unwrap(), &sigma).unwrap();
        prop_assert!(rel_close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn square_function_adjoint_identity((lat, s, w, f, seed) in with_data()) {
        let sigma = Measure::from_leaf_masses(lat, s).unwrap();
        let w = Measure::from_leaf_masses(lat, w).unwrap();
        let f = StepFunction::from_values(lat, f).unwrap();
        let sq = SquareFunctionSpec::random(lat, 0.6, seed);
        let comps = sq.apply_components(&f, &sigma).unwrap();
        let gs: Vec<StepFunction> = (0..comps.len()).map(|k| f.map(|x| (x + k as f64).cos())).collect();
        let lhs: f64 = comps.iter().zip(&gs).map(|(c, g)| pairing(c, g, &w).unwrap()).sum();
        let rhs = pairing(&f, &sq.adjoint_components(&gs, &w).unwrap(), &sigma).unwrap();
        prop_assert!(rel_close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn maximal_function_dominates((lat, s, _, f, _) in with_data()) {
        let sigma = Measure::from_leaf_masses(lat, s).unwrap();
        let f = StepFunction::from_values(lat, f).unwrap();
        let m = dyadic_maximal(&f, &sigma).unwrap();
        for (i, (mv, fv)) in m.values().iter().zip(f.values()).enumerate() {
            prop_assert!(*mv >= fv.abs() * (1.0 - 1e-12));
            for level in lat.min_level()..=lat.max_level() {
                let q = lat.cube_of_leaf(i, level);
                prop_assert!(average(&f.abs(), &sigma, q).unwrap() <= mv * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn principal_cubes_are_sparse((lat, s, _, f, _) in with_data()) {
        let sigma = Measure::from_leaf_masses(lat, s).unwrap();
        let f = StepFunction::from_values(lat, f.iter().map(|x| x.powi(4)).collect()).unwrap();
        let family = principal_cubes(&f, &sigma, lat.root()).unwrap();
        let check = verify_sparse(&family, &sigma).unwrap();
        prop_assert!(check.passes && check.disjoint && check.contained, "{check:?}");
        prop_assert!(check.worst_ratio >= 0.5 - 1e-12);
        for (k, parent) in family.parents.iter().enumerate() {
            if let Some(p) = parent {
                prop_assert!(lat.contains(family.cubes[*p], family.cubes[k]));
            }
        }
    }

    #[test]
    fn instance_text_round_trips((lat, s, w, f, seed) in with_data()) {
        let mut inst = Instance::new(lat);
        inst.measures.push(("sigma".into(), Measure::from_leaf_masses(lat, s).unwrap()));
        inst.measures.push(("w".into(), Measure::from_leaf_masses(lat, w).unwrap()));
        inst.functions.push(("f".into(), StepFunction::from_values(lat, f).unwrap()));
        let gen = ShiftGenerator { m: 1, n: 1, density: 0.5, specific_form: false, allow_noncancellative: true };
        if let Ok(t) = generate_random_shift(&lat, &gen, seed) {
            inst.shifts.push(("t".into(), t));
        }
        let sq = SquareFunctionSpec::random(lat, 0.5, seed);
        inst.squares.push(("b".into(), sq.clone()));
        inst.squares.push(("b-local".into(), sq.localized(lat.root()).unwrap()));
        let back = Instance::parse(&inst.to_text()).unwrap();
        prop_assert_eq!(back, inst);
    }
}
