use gridlogit::*;

fn exp1_spec(points: usize, variant: SupportVariant) -> ModelSpec {
    let coef = |attribute: &str, role: Role, points: usize, sign: SignConstraint| CoefficientSpec {
        attribute: attribute.into(), role, points, sign,
    };
    ModelSpec {
        variant,
        classes: if variant == SupportVariant::Unstructured { points } else { 0 },
        coefficients: vec![
            coef("asc_bike", Role::Fixed, 1, SignConstraint::Free),
            coef("asc_car", Role::Fixed, 1, SignConstraint::Free),
            coef("asc_transit", Role::Fixed, 1, SignConstraint::Free),
            coef("tt_min", Role::Random, points, SignConstraint::Free),
            coef("cost", Role::Fixed, 1, SignConstraint::Free),
        ],
    }
}

#[test]
fn probe_inner_solver() {
    let (panel, _) = gen_experiment1(ExperimentKind::Normal, 1000, 10, 42);
    let spec = exp1_spec(9, SupportVariant::UnequalGrid);
    let mut model = initial_values(&panel, &spec, 1).unwrap();
    let options = MStepOptions::default();
    for iter in 0..8 {
        let q = e_step(&model, &panel).unwrap();
        model.class_shares = m_step_shares(&q);
        let t0 = std::time::Instant::now();
        let out = m_step_unequal_grid(&q, &panel, &model, &options).unwrap();
        println!(
            "iter {iter}: inner iters {} status {:?} pg {:.2e} obj {:.2} in {:?}",
            out.solve.iterations, out.solve.status, out.solve.projected_gradient_norm,
            out.solve.objective, t0.elapsed()
        );
        model = out.model;
    }
}
