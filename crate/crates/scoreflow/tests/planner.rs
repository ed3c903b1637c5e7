//! End-to-end planner checks on the standard Gaussian under OU.

use scoreflow::hyperparams::{calibrate_constant, certify, gaussian_benchmark_w2, plan};
use scoreflow::schedule::{Family, Schedule};
use scoreflow::target::{ConstantProvenance, TargetConstants};

fn gaussian_constants(dim: usize) -> TargetConstants {
    TargetConstants {
        alpha0: 1.0,
        m0: 0.0,
        l0: 1.0,
        l1: 0.0,
        score_err: 0.0,
        x0_norm: (dim as f64).sqrt(),
        score_at_origin: 0.0,
        dim,
        provenance: ConstantProvenance::default(),
    }
}

#[test]
fn calibrated_plan_is_certified_within_a_factor_ten() {
    let dim = 4;
    let epsilons = [0.2, 0.1];
    let cal = calibrate_constant(&epsilons, dim, 1000, 5).unwrap();
    assert!(cal.constant_c > 0.0 && cal.constant_c < 4.0);
    for &eps in &epsilons {
        let p = plan(Family::Ou, eps, dim, None, cal.constant_c).unwrap();
        let report = certify(&p, &Schedule::ou(), &gaussian_constants(dim)).unwrap();
        let w2 = gaussian_benchmark_w2(&p, 2000, 99).unwrap();
        assert!(w2 <= report.total, "eps {eps}: measured {w2} above bound {}", report.total);
        let ratio = report.total / eps;
        assert!(ratio <= 10.0, "eps {eps}: bound/eps = {ratio}");
    }
}

#[test]
fn finer_steps_tighten_the_certificate() {
    let p = plan(Family::Ou, 0.1, 4, None, 1.0).unwrap();
    let fine = p.with_step_scale(0.5).unwrap();
    let c = gaussian_constants(4);
    let coarse = certify(&p, &Schedule::ou(), &c).unwrap().e1;
    let fine = certify(&fine, &Schedule::ou(), &c).unwrap().e1;
    assert!(fine < coarse, "{fine} vs {coarse}");
}
