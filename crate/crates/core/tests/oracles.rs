//! Frozen reference values computed independently at 40-digit precision.

use ssbdiff::bifurcation::{critical_theta_sphere, fixed_points_1d, self_consistency_residual_1d};
use ssbdiff::score::laplacian_origin_closed_form;
use ssbdiff::{EmpiricalDataset, ExactScoreModel, VpSchedule};

fn two_point() -> ExactScoreModel {
    ExactScoreModel::new(EmpiricalDataset::two_point_1d(), VpSchedule::default()).unwrap()
}

fn close(got: f64, want: f64, rel: f64) {
    assert!((got - want).abs() <= rel * want.abs().max(1e-300), "got {got:e}, want {want:e}");
}

#[test]
fn two_point_quantities_at_half_horizon() {
    let m = two_point();
    let level = m.level(0.5).unwrap();
    close(level.theta, 0.281_182_880_796_752_4, 1e-15);
    close(level.beta, 10.05, 1e-15);
    let x = [0.3];
    close(m.mixture_logpdf_at(&x, &level), -0.965_356_230_633_279_8, 1e-13);
    close(m.score_at(&x, &level).score[0], -0.297_866_804_235_033_7, 1e-13);
    close(m.potential_at(&x, &level), -6.311_874_536_298_361, 1e-13);
    close(m.potential_gradient_at(&x, &level)[0], 1.486_061_382_562_088_5, 1e-13);
    close(m.hessian_at(&x, &level).get(0, 0), 4.958_743_229_562_329, 1e-12);
}

#[test]
fn self_consistency_roots() {
    for (theta, want) in [(0.8, 0.947_038_576_141_794_3), (0.999, 0.999_999_499_499_750_0)] {
        let fp = fixed_points_1d(theta).unwrap();
        let upper = fp.roots.iter().map(|r| r.0).fold(f64::MIN, f64::max);
        close(upper, want, 1e-10);
        assert!(self_consistency_residual_1d(theta, upper).abs() < 1e-10);
    }
}

#[test]
fn laplacian_of_axis_dataset() {
    // Points at +-1.3 e_i in three dimensions; centered with every point at radius 1.3.
    let mut rows = Vec::new();
    for i in 0..3 {
        for sign in [1.0, -1.0] {
            let mut y = vec![0.0; 3];
            y[i] = sign * 1.3;
            rows.push(y);
        }
    }
    let ds = EmpiricalDataset::from_rows(&rows).unwrap().center_and_normalize(1.3).unwrap();
    let m = ExactScoreModel::new(ds, VpSchedule::default()).unwrap();
    let level = m.level_at_theta(0.7).unwrap();
    close(level.s, 0.262_778_361_943_745_7, 1e-12);
    close(m.laplacian_origin_at(&level).unwrap(), 6.387_566_210_248_589, 1e-10);
    close(laplacian_origin_closed_form(3, 1.3, &level), 6.387_566_210_248_589, 1e-10);
    close(critical_theta_sphere(3, 1.3).unwrap(), 0.764_475_592_760_842_6, 1e-14);
}
