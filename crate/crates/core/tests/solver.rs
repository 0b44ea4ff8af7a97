mod common;

use common::*;
use pbba::geometry::{relative_pose, Pixel, Pose};
use pbba::solver::{optimize, patch_residuals, SolverConfig, SolverError, WeightMode, PATTERN_LEN};

#[test]
fn residual_of_a_frame_against_itself_is_zero() {
    let k = intrinsics();
    let (img, _, _) = view(&Pose::identity(), &k);
    for (u, v, d) in [(10.0, 10.0, 0.5), (31.0, 22.0, 0.2), (50.0, 40.0, 1.3)] {
        let r = patch_residuals(&img, &img, Pixel::new(u, v), d, &Pose::identity(), &k).unwrap();
        assert!(r.amax() < 1e-12, "{}", r.amax());
    }
}

#[test]
fn residuals_vanish_at_ground_truth() {
    let gt = ground_truth(4);
    let p = problem(&gt, &gt, &small_config());
    assert!(p.points.len() > 50);
    let mut worst: f64 = 0.0;
    for (i, pt) in p.points.iter().enumerate() {
        for &t in &pt.obs {
            worst = worst.max(p.residual(i, t).unwrap().amax());
        }
    }
    // Whole-pixel shifts make every warp land on the pixel lattice.
    assert!(worst < 1e-5, "{worst}");
}

#[test]
fn raising_inverse_depth_raises_residuals() {
    let gt = ground_truth(4);
    let p = problem(&gt, &gt, &small_config());
    let k = intrinsics();
    let mut raised = 0;
    let mut total = 0;
    for (i, pt) in p.points.iter().enumerate() {
        for &t in &pt.obs {
            let rel = relative_pose(&gt[t], &gt[pt.host]);
            let before = p.residual(i, t).unwrap().norm();
            let Ok(after) = patch_residuals(
                &p.frames[pt.host].image,
                &p.frames[t].image,
                pt.pixel,
                pt.inv_depth * 1.1,
                &rel,
                &k,
            ) else {
                continue;
            };
            total += 1;
            raised += usize::from(after.norm() > before);
        }
    }
    assert!(total > 100);
    assert_eq!(raised, total);
}

#[test]
fn analytic_jacobians_match_finite_differences() {
    let worst = jacobian_error(200, 17);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn refines_perturbed_poses_up_to_scale() {
    let gt = ground_truth(6);
    for seed in 0..3 {
        let start = perturb(&gt, 0.004, 0.01, seed);
        let cfg = SolverConfig {
            weight_mode: WeightMode::Uniform,
            ..small_config()
        };
        let mut p = problem(&gt, &start, &cfg);
        let report = optimize(&mut p, &cfg).unwrap();
        assert!(report.converged);
        assert!(report.final_loss < 1e-12 * report.outer[0].loss_start, "{report:?}");
        // With only the first frame fixed, global scale stays unobserved.
        let est = p.poses();
        let s = translation_scale(&est, &gt);
        assert!((s - 1.0).abs() < 0.1, "scale {s}");
        let (dt, dr) = max_pose_diff(&scaled(&est, s), &gt);
        assert!(dt < 1e-6 && dr < 1e-6, "seed {seed}: {dt} {dr}");
        for pt in &p.points {
            assert!((pt.inv_depth * PLANE_Z / s - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let gt = ground_truth(6);
    let cfg = small_config();
    let mut p = problem(&gt, &gt, &cfg);
    let report = optimize(&mut p, &cfg).unwrap();
    assert!(report.converged);
    assert_eq!(report.outer.len(), 1);
    let (dt, dr) = max_pose_diff(&p.poses(), &gt);
    assert!(dt < 1e-4 && dr < 0.01f64.to_radians(), "{dt} {dr}");
}

#[test]
fn frozen_weights_never_raise_the_loss() {
    let gt = ground_truth(6);
    for mode in [WeightMode::PhysicallyBased, WeightMode::TDist, WeightMode::Uniform] {
        let cfg = SolverConfig {
            weight_mode: mode,
            ..small_config()
        };
        let mut p = problem(&gt, &perturb(&gt, 0.006, 0.02, 9), &cfg);
        let report = optimize(&mut p, &cfg).unwrap();
        for o in &report.outer {
            assert!(o.loss_end <= o.loss_start, "{mode}: {o:?}");
        }
    }
}

#[test]
fn gauge_frame_is_untouched() {
    let gt = ground_truth(5);
    let start = perturb(&gt, 0.004, 0.01, 4);
    let cfg = small_config();
    let mut p = problem(&gt, &start, &cfg);
    optimize(&mut p, &cfg).unwrap();
    assert_eq!(p.frames[0].pose, start[0]);
}

#[test]
fn zero_theta_matches_uniform_exactly() {
    let gt = ground_truth(5);
    let start = perturb(&gt, 0.004, 0.01, 5);
    let mut pb = SolverConfig {
        theta: 0.0,
        ..small_config()
    };
    pb.deterministic = true;
    let uni = SolverConfig {
        weight_mode: WeightMode::Uniform,
        ..pb.clone()
    };
    let mut a = problem(&gt, &start, &pb);
    let mut b = problem(&gt, &start, &uni);
    optimize(&mut a, &pb).unwrap();
    optimize(&mut b, &uni).unwrap();
    let (dt, dr) = max_pose_diff(&a.poses(), &b.poses());
    assert!(dt < 1e-12 && dr < 1e-12, "{dt} {dr}");
}

#[test]
fn deterministic_runs_are_bit_identical() {
    let gt = ground_truth(5);
    let start = perturb(&gt, 0.004, 0.01, 6);
    let cfg = SolverConfig {
        deterministic: true,
        ..small_config()
    };
    let mut a = problem(&gt, &start, &cfg);
    let mut b = problem(&gt, &start, &cfg);
    let ra = optimize(&mut a, &cfg).unwrap();
    let rb = optimize(&mut b, &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ra.to_text(), rb.to_text());
    assert_eq!(a.poses(), b.poses());
    assert_eq!(a.inv_depths(), b.inv_depths());
}

#[test]
fn weights_follow_the_mode() {
    let gt = ground_truth(4);
    for mode in [WeightMode::PhysicallyBased, WeightMode::TDist, WeightMode::Uniform] {
        let cfg = SolverConfig {
            weight_mode: mode,
            ..small_config()
        };
        let mut p = problem(&gt, &perturb(&gt, 0.003, 0.005, 7), &cfg);
        let r = optimize(&mut p, &cfg).unwrap();
        let all: Vec<f64> = r.weights.iter().flatten().map(|o| o.1).collect();
        assert!(!all.is_empty());
        match mode {
            WeightMode::Uniform => assert!(all.iter().all(|w| *w == 1.0)),
            WeightMode::PhysicallyBased => assert!(all.iter().all(|w| *w > 0.0 && *w <= 1.0)),
            WeightMode::TDist => assert!(all.iter().all(|w| *w > 0.0 && *w <= 1.2 + 1e-12)),
        }
    }
}

#[test]
fn rejects_degenerate_problems() {
    let gt = ground_truth(3);
    let cfg = small_config();
    let mut p = problem(&gt, &gt, &cfg);
    p.frames.truncate(1);
    assert!(matches!(optimize(&mut p, &cfg), Err(SolverError::TooFewFrames(1))));

    let mut p = problem(&gt, &gt, &cfg);
    p.points.truncate(3);
    assert!(matches!(optimize(&mut p, &cfg), Err(SolverError::TooFewPoints(3))));

    // Frame 2 loses every observation, leaving its pose unconstrained.
    let mut p = problem(&gt, &gt, &cfg);
    for pt in &mut p.points {
        pt.obs.retain(|&t| t != 2);
    }
    p.points.retain(|pt| pt.host != 2 && !pt.obs.is_empty());
    match optimize(&mut p, &cfg) {
        Err(SolverError::SingularNormalEquations(msg)) => assert!(msg.contains('2'), "{msg}"),
        other => panic!("expected a singular system, got {other:?}"),
    }
}

#[test]
fn pattern_has_eight_offsets() {
    assert_eq!(PATTERN_LEN, 8);
}
