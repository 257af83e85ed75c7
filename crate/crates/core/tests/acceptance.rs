//! Exit criteria for the whole pipeline. Each test prints one PASS/FAIL
//! line and fails when its criterion does not hold.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scene_mockup::fitting::{pack, Anchor, AnchorPair, FitProblem, Objective, ScenePrior};
use scene_mockup::geometry::{obb_iou_3d, rotate_up, Camera, OrientedBox, PlacementParams};
use scene_mockup::harness::{
    default_camera, default_template, run_experiment, run_experiment_detailed, Condition,
    ExperimentConfig, SceneRun,
};
use scene_mockup::keypoint_maps::{default_sigma, render_maps, KeypointMapStack};
use scene_mockup::metrics::{
    angdiff, angle_difference_deg, evaluate_pooled, iou_measure, loc_measure, locang_measure,
    max_iou_correspondence, threshold_sweep, EvalObject, EvalScene, IouSpace, Thresholds,
};
use scene_mockup::scene_stats::{fit_gmm, GmmComponent, PairwiseGmm, RelativePose};
use scene_mockup::selection::{solve, Hyper, SelectionProblem};
use scene_mockup::template::TemplateModel;

fn verdict(id: u32, name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: String) {
    let ok = ok && elapsed < budget;
    println!(
        "criterion {id} {name}: {} ({detail}; {:.1}s of {:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    assert!(ok, "criterion {id} {name} failed: {detail}");
}

fn full_result(run: &SceneRun) -> &scene_mockup::selection::SceneEstimate {
    &run.results
        .iter()
        .find(|(c, _)| *c == Condition::Full)
        .expect("full run")
        .1
}

#[test]
fn closed_loop_exactness() {
    let start = Instant::now();
    let config = ExperimentConfig {
        drop_fractions: vec![0.0],
        scenes_per_bin: 50,
        count_min: 1,
        count_max: 6,
        seed: 0,
        ..ExperimentConfig::default()
    };
    let (_, runs) = run_experiment_detailed(&config).unwrap();
    let runs = &runs[0];
    let th = Thresholds::default();
    let pairs: Vec<_> = runs.iter().map(|r| r.eval_pair(Condition::Full)).collect();
    let report = evaluate_pooled(&pairs, &th);

    // translation error of every ground-truth object against its best match
    let mut errors = Vec::new();
    for (run, (result, gt)) in runs.iter().zip(&pairs) {
        let est = full_result(run);
        for (o, truth) in gt.objects.iter().zip(&run.ground_truth.objects) {
            if let (Some(j), _) = max_iou_correspondence(o, &gt.camera, result, IouSpace::ThreeD) {
                errors.push((est.objects[j].params.translation - truth.params.translation).norm());
            }
        }
    }
    let objects: usize = runs.iter().map(|r| r.ground_truth.objects.len()).sum();
    let position = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
    let azimuth = report.angdiff_degrees.unwrap_or(f64::INFINITY);
    let ok = report.locang.f1 == 1.0 && errors.len() == objects && position < 0.05 && azimuth < 2.0;
    verdict(
        1,
        "closed-loop exactness",
        ok,
        start.elapsed(),
        Duration::from_secs(60),
        format!(
            "LocAng F1 {:.4} over {objects} objects, mean position error {position:.4} m, mean azimuth error {azimuth:.3} deg",
            report.locang.f1
        ),
    );
}

#[test]
fn ablation_directionality() {
    let start = Instant::now();
    let config = ExperimentConfig {
        hyper: Hyper::heavy_occlusion(),
        drop_fractions: vec![0.6, 0.75],
        occluded_per_scene: Some(1),
        scenes_per_bin: 50,
        seed: 0,
        ..ExperimentConfig::default()
    };
    let (_, runs) = run_experiment_detailed(&config).unwrap();
    let all: Vec<&SceneRun> = runs.iter().flatten().collect();
    assert_eq!(all.len(), 100);
    let th = config.thresholds;
    let pooled = |c: Condition| {
        let pairs: Vec<_> = all.iter().map(|r| r.eval_pair(c)).collect();
        evaluate_pooled(&pairs, &th).locang
    };
    let (full, none, single) = (
        pooled(Condition::Full),
        pooled(Condition::NoPairwise),
        pooled(Condition::SingleIteration),
    );
    let get = |v: Option<f64>| v.unwrap_or(0.0);
    let gain = get(full.recall) - get(none.recall);
    let ok = gain >= 0.10
        && get(single.precision) >= get(full.precision)
        && get(single.recall) <= get(full.recall);
    verdict(
        2,
        "ablation directionality",
        ok,
        start.elapsed(),
        Duration::from_secs(600),
        format!(
            "recall full {:.3} no-pairwise {:.3} (gain {gain:.3}); precision single {:.3} full {:.3}; recall single {:.3}",
            get(full.recall),
            get(none.recall),
            get(single.precision),
            get(full.precision),
            get(single.recall)
        ),
    );
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize) -> SelectionProblem {
    let mut p = SelectionProblem {
        unary: (0..n).map(|_| rng.random_range(-6.0..3.0)).collect(),
        ..SelectionProblem::default()
    };
    for i in 0..n {
        for j in i + 1..n {
            match rng.random_range(0..10) {
                0 => p.forbidden.push((i, j)),
                1..=4 => {
                    p.pairwise.insert((i, j), rng.random_range(-4.0..4.0));
                }
                _ => {}
            }
        }
    }
    p
}

#[test]
fn solver_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=12usize);
        let problem = random_problem(&mut rng, n);
        let best = (0u32..1 << n)
            .map(|mask| {
                let sel: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
                problem.energy(&sel)
            })
            .fold(f64::INFINITY, f64::min);
        if problem.energy(&solve(&problem)) != best {
            mismatches += 1;
        }
    }
    verdict(
        3,
        "solver optimality",
        mismatches == 0,
        start.elapsed(),
        Duration::from_secs(30),
        format!("{mismatches} of 100 problems differ from enumeration"),
    );
}

fn numeric_jacobian(obj: &Objective, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = obj.residuals(x).unwrap().len();
    let mut j = DMatrix::zeros(n, x.len());
    for c in 0..x.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[c] += h;
        xm[c] -= h;
        j.set_column(
            c,
            &((obj.residuals(&xp).unwrap() - obj.residuals(&xm).unwrap()) / (2.0 * h)),
        );
    }
    j
}

/// Largest entrywise error relative to the analytic magnitude (floored at 1).
fn relative_error(
    analytic: &DMatrix<f64>,
    numeric: &DMatrix<f64>,
    rows: std::ops::Range<usize>,
) -> f64 {
    let mut worst: f64 = 0.0;
    for r in rows {
        for c in 0..analytic.ncols() {
            let (a, n) = (analytic[(r, c)], numeric[(r, c)]);
            worst = worst.max((a - n).abs() / a.abs().max(1.0));
        }
    }
    worst
}

fn projected(camera: &Camera, template: &TemplateModel, p: &PlacementParams) -> Vec<Vector2<f64>> {
    template
        .instantiate(&p.deform)
        .iter()
        .map(|k| camera.project(&p.apply(k)).unwrap())
        .collect()
}

/// Bilinear sampling has kinks on cell centre lines.
fn near_kink(points: &[Vector2<f64>]) -> bool {
    points.iter().any(|z| {
        [z.x, z.y].iter().any(|v| {
            let f = v - 0.5;
            (f - f.round()).abs() < 1e-3
        })
    })
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    const H: f64 = 1e-6;
    let template = default_template(30, 7).unwrap();
    let camera = default_camera((128, 128));
    let modes = template.modes();
    let truth = PlacementParams::rigid(Vector2::new(0.1, 3.6), 0.4, modes);
    let locs: Vec<Vec<Vector2<f64>>> = projected(&camera, &template, &truth)
        .into_iter()
        .map(|p| vec![p])
        .collect();
    let maps: KeypointMapStack = render_maps(&locs, default_sigma(128) * 2.0, 128, 128);
    let fixed = [PlacementParams::rigid(Vector2::new(-0.5, 3.2), -0.2, modes)];
    let components = vec![
        GmmComponent::new(
            0.6,
            Vector3::new(0.5, 0.3, 0.5),
            Matrix3::new(0.05, 0.01, 0.0, 0.01, 0.04, 0.0, 0.0, 0.0, 0.2),
        )
        .unwrap(),
        GmmComponent::new(
            0.4,
            Vector3::new(0.7, -0.2, 1.0),
            Matrix3::from_diagonal(&Vector3::new(0.03, 0.06, 0.1)),
        )
        .unwrap(),
    ];
    // each component alone, its weight restored after the fact
    let single: Vec<(PairwiseGmm, f64)> = components
        .iter()
        .map(|c| {
            let unit = GmmComponent::new(1.0, c.mean, c.covariance).unwrap();
            (PairwiseGmm::new(vec![unit], 1.5).unwrap(), c.weight.ln())
        })
        .collect();
    let gmm = PairwiseGmm::new(components, 1.5).unwrap();
    let z = projected(&camera, &template, &truth);
    let pair = AnchorPair {
        first: Anchor {
            kind: 0,
            position: z[0],
        },
        second: Anchor {
            kind: 5,
            position: z[5],
        },
    };

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut pair_err, mut map_err, mut mix_err) = (0f64, 0f64, 0f64);
    let mut points = 0;
    while points < 100 {
        let p = PlacementParams::new(
            truth.translation
                + Vector2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
            rng.random_range(-1.5..2.5),
            rng.random_range(0.8..1.2),
            (0..modes).map(|_| rng.random_range(-0.05..0.05)).collect(),
        );
        // resample where a finite difference would straddle a kink
        if near_kink(&projected(&camera, &template, &p)) {
            continue;
        }
        let rel = RelativePose::between(&fixed[0], &p);
        let mut nll: Vec<f64> = single
            .iter()
            .map(|(g, lw)| g.maxmix_nll(&rel).0 - lw)
            .collect();
        nll.sort_by(f64::total_cmp);
        if nll[1] - nll[0] < 1e-3 || rel.delta_theta.abs() > 3.0 {
            continue;
        }
        let x = pack(&p);

        let pair_problem = FitProblem::pair(&camera, &template, pair);
        let obj = pair_problem.objective(&[]);
        let a = obj.jacobian(&x).unwrap();
        pair_err = pair_err.max(relative_error(
            &a,
            &numeric_jacobian(&obj, &x, H),
            0..a.nrows(),
        ));

        let refine = FitProblem::refine(&camera, &template, &maps);
        let obj = refine.objective(&[]);
        let a = obj.jacobian(&x).unwrap();
        map_err = map_err.max(relative_error(
            &a,
            &numeric_jacobian(&obj, &x, H),
            0..a.nrows(),
        ));

        let prior = refine.clone().with_prior(Some(ScenePrior {
            fixed: &fixed,
            gmm: &gmm,
        }));
        let obj = prior.objective(&fixed);
        let a = obj.jacobian(&x).unwrap();
        let n = a.nrows();
        mix_err = mix_err.max(relative_error(&a, &numeric_jacobian(&obj, &x, H), n - 3..n));
        points += 1;
    }
    let worst = pair_err.max(map_err).max(mix_err);
    verdict(
        4,
        "gradient correctness",
        worst <= 1e-4,
        start.elapsed(),
        Duration::from_secs(10),
        format!(
            "max relative error: pair {pair_err:.2e}, map {map_err:.2e}, max-mixture {mix_err:.2e}"
        ),
    );
}

#[test]
fn gmm_recovery() {
    let start = Instant::now();
    let planted = [
        (
            0.35,
            Vector3::new(0.9, 0.1, 0.4),
            Matrix3::new(0.04, 0.01, 0.0, 0.01, 0.03, 0.005, 0.0, 0.005, 0.05),
        ),
        (
            0.65,
            Vector3::new(-0.5, 0.8, -1.3),
            Matrix3::new(0.02, -0.005, 0.0, -0.005, 0.05, 0.0, 0.0, 0.0, 0.08),
        ),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<RelativePose> = (0..5000)
        .map(|_| {
            let (_, mean, cov) = if rng.random::<f64>() < planted[0].0 {
                &planted[0]
            } else {
                &planted[1]
            };
            let l = cov.cholesky().unwrap().l();
            let n = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let v = mean + l * n;
            RelativePose {
                delta_t: Vector2::new(v.x, v.y),
                delta_theta: v.z,
            }
        })
        .collect();
    let gmm = fit_gmm(&samples, 2, 11).unwrap();

    let mut worst = (0f64, 0f64, 0f64);
    for (w, mean, cov) in &planted {
        let c = gmm
            .components()
            .iter()
            .min_by(|a, b| (a.mean - mean).norm().total_cmp(&(b.mean - mean).norm()))
            .unwrap();
        let biased = cov + Matrix3::identity() * 0.01;
        worst.0 = worst.0.max((c.mean - mean).norm());
        worst.1 = worst.1.max((c.weight - w).abs());
        worst.2 = worst.2.max((c.covariance - biased).norm() / biased.norm());
    }

    let mut sandwich_failures = 0;
    let m = gmm.components().len() as f64;
    for _ in 0..1000 {
        let pose = RelativePose {
            delta_t: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
            delta_theta: rng.random_range(-3.1..3.1),
        };
        let p_max = (-gmm.maxmix_nll(&pose).0).exp();
        let p = gmm.density(&pose);
        let tol = 1e-12 * p.max(f64::MIN_POSITIVE);
        if !(p_max <= p + tol && p <= m * p_max + tol) {
            sandwich_failures += 1;
        }
    }
    let ok = gmm.components().len() == 2
        && worst.0 < 0.05
        && worst.1 < 0.05
        && worst.2 < 0.10
        && sandwich_failures == 0;
    verdict(
        5,
        "mixture recovery",
        ok,
        start.elapsed(),
        Duration::from_secs(5),
        format!(
            "mean error {:.4}, weight error {:.4}, covariance error {:.1}%, sandwich failures {sandwich_failures}",
            worst.0,
            worst.1,
            worst.2 * 100.0
        ),
    );
}

fn inside(b: &OrientedBox, p: &Vector3<f64>) -> bool {
    let l = rotate_up(-b.azimuth, &(p - b.center));
    l.iter()
        .zip(b.half_extents.iter())
        .all(|(v, h)| v.abs() <= *h)
}

/// Counts voxel centres inside each box on a 64^3 grid over their union bounds.
fn voxel_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    const N: usize = 64;
    let bounds = |x: &OrientedBox| {
        let c = x.corners();
        let lo = c
            .iter()
            .fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(p));
        let hi = c
            .iter()
            .fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
        (lo, hi)
    };
    let ((la, ha), (lb, hb)) = (bounds(a), bounds(b));
    let (lo, hi) = (la.inf(&lb), ha.sup(&hb));
    let step = (hi - lo) / N as f64;
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..N {
        for j in 0..N {
            for k in 0..N {
                let p = lo
                    + Vector3::new(
                        (i as f64 + 0.5) * step.x,
                        (j as f64 + 0.5) * step.y,
                        (k as f64 + 0.5) * step.z,
                    );
                let (ia, ib) = (inside(a, &p), inside(b, &p));
                inter += usize::from(ia && ib);
                union += usize::from(ia || ib);
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn random_box(rng: &mut ChaCha8Rng, rotated: bool) -> OrientedBox {
    let half = Vector3::new(
        rng.random_range(0.2..0.6),
        rng.random_range(0.2..0.6),
        rng.random_range(0.2..0.6),
    );
    let center = Vector3::new(
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.4..0.4),
    );
    let azimuth = if rotated {
        rng.random_range(-3.1..3.1)
    } else {
        0.0
    };
    OrientedBox::new(center, half, azimuth)
}

fn scene(objects: Vec<EvalObject>) -> EvalScene {
    EvalScene {
        objects,
        camera: default_camera((128, 128)),
        occluders: Vec::new(),
    }
}

fn chair_box(x: f64, z: f64, azimuth: f64) -> EvalObject {
    EvalObject {
        bbox: OrientedBox::new(
            Vector3::new(x, 0.45, z),
            Vector3::new(0.25, 0.45, 0.25),
            azimuth,
        ),
        azimuth,
    }
}

#[test]
fn metric_suite() {
    let start = Instant::now();
    let mut failures: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_owned());
        }
    };

    let a = chair_box(0.0, 4.0, 0.3);
    let b = chair_box(1.5, 4.0, -0.2);
    let far = chair_box(-3.0, 8.0, 0.0);
    let target = scene(vec![b.clone(), a.clone()]);
    let cam = target.camera.clone();
    check(
        "identical object",
        max_iou_correspondence(&a, &cam, &target, IouSpace::ThreeD) == (Some(1), 1.0),
    );
    let (_, iou) = max_iou_correspondence(&far, &cam, &target, IouSpace::ThreeD);
    check("disjoint targets", iou == 0.0);
    check(
        "iou of equal scenes",
        iou_measure(&target, &target, IouSpace::ThreeD) == Some(1.0),
    );
    check(
        "iou with empty target",
        iou_measure(&target, &scene(vec![]), IouSpace::ThreeD) == Some(0.0),
    );
    check(
        "iou arithmetic mean",
        iou_measure(
            &scene(vec![a.clone(), far.clone()]),
            &scene(vec![a.clone()]),
            IouSpace::ThreeD,
        ) == Some(0.5),
    );
    let th = Thresholds::default();
    check(
        "loc of equal scenes",
        loc_measure(&target, &target, th.tau_j) == Some(1.0),
    );
    check(
        "locang of equal scenes",
        locang_measure(&target, &target, th.tau_j, th.tau_theta_deg, 1) == Some(1.0),
    );
    check(
        "angdiff of equal scenes",
        angdiff(&target, &target, th.tau_j, 1) == Some(0.0),
    );
    // same footprint turned by 30 degrees still overlaps well above 0.25
    let turned = EvalObject {
        bbox: OrientedBox::new(
            a.bbox.center,
            a.bbox.half_extents,
            a.azimuth + 30f64.to_radians(),
        ),
        azimuth: a.azimuth + 30f64.to_radians(),
    };
    let (src, tgt) = (scene(vec![turned]), scene(vec![a.clone()]));
    check(
        "turned object located",
        loc_measure(&src, &tgt, th.tau_j) == Some(1.0),
    );
    check(
        "turned object not oriented",
        locang_measure(&src, &tgt, th.tau_j, th.tau_theta_deg, 1) == Some(0.0),
    );
    check(
        "turned object angle",
        (angdiff(&src, &tgt, th.tau_j, 1).unwrap() - 30.0).abs() < 1e-9,
    );
    check(
        "wrapped angle",
        (angle_difference_deg(350f64.to_radians(), 10f64.to_radians(), 1) - 20.0).abs() < 1e-9,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for i in 0..70 {
        let rotated = i >= 50;
        let (a, b) = (random_box(&mut rng, rotated), random_box(&mut rng, rotated));
        worst = worst.max((obb_iou_3d(&a, &b) - voxel_iou(&a, &b)).abs());
    }
    check("voxel oracle", worst <= 0.02);
    verdict(
        6,
        "metric suite",
        failures.is_empty(),
        start.elapsed(),
        Duration::from_secs(20),
        format!("failed checks {failures:?}, worst IoU gap to voxel oracle {worst:.4}"),
    );
}

#[test]
fn threshold_sweep_monotonicity() {
    let start = Instant::now();
    let config = ExperimentConfig::default();
    let (_, runs) = run_experiment_detailed(&config).unwrap();
    let pairs: Vec<_> = runs
        .iter()
        .flatten()
        .map(|r| r.eval_pair(Condition::Full))
        .collect();
    let tau_js = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
    let tau_thetas = [5.0, 10.0, 15.0, 20.0, 30.0, 45.0];
    let sweep = threshold_sweep(&pairs, &tau_js, &tau_thetas, 1);
    let f1 = |i: usize, j: usize| sweep[i * tau_thetas.len() + j].locang_f1;
    let mut rises_in_j = 0;
    let mut rises_in_theta = Vec::new();
    for i in 0..tau_js.len() {
        for j in 0..tau_thetas.len() {
            if i + 1 < tau_js.len() && f1(i + 1, j) > f1(i, j) {
                rises_in_j += 1;
            }
            if j + 1 < tau_thetas.len() && f1(i, j + 1) > f1(i, j) {
                rises_in_theta.push((
                    tau_js[i],
                    tau_thetas[j],
                    tau_thetas[j + 1],
                    f1(i, j),
                    f1(i, j + 1),
                ));
            }
        }
    }
    verdict(
        7,
        "threshold sweep monotonicity",
        rises_in_j == 0 && rises_in_theta.is_empty(),
        start.elapsed(),
        Duration::from_secs(120),
        format!(
            "{rises_in_j} increases along the IoU threshold, {} along the angle threshold (first: {:?})",
            rises_in_theta.len(),
            rises_in_theta.first()
        ),
    );
}

#[test]
fn experiment_determinism() {
    let start = Instant::now();
    let config = ExperimentConfig {
        drop_fractions: vec![0.0, 0.5],
        scenes_per_bin: 4,
        seed: 8,
        ..ExperimentConfig::default()
    };
    let first = serde_json::to_string_pretty(&run_experiment(&config).unwrap()).unwrap();
    let second = serde_json::to_string_pretty(&run_experiment(&config).unwrap()).unwrap();
    verdict(
        8,
        "determinism",
        first.as_bytes() == second.as_bytes(),
        start.elapsed(),
        Duration::from_secs(120),
        format!("{} report bytes", first.len()),
    );
}
