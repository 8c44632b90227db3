//! End-to-end acceptance suite on the synthetic world. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadcal::config::SweepConfig;
use roadcal::costs::{distance_transform, JointHistogram};
use roadcal::geometry::{CameraIntrinsics, CloudPoint, IntensityCloud, Pose6, RigidTransform};
use roadcal::image_selection::vote_weight;
use roadcal::local_map::{accumulate, LidarScan};
use roadcal::optimizer::{
    argmin_index, is_monotone_nonincreasing, nelder_mead, perturbations, quartiles, repeatability, sweep_all,
    NelderMeadOptions, RepeatabilityReport, Session, SweepRow, PARAM_NAMES,
};
use roadcal::raster::Raster;
use roadcal::synthetic::{render_dataset, SceneSpec, SyntheticDataset};
use roadcal::{CameraSide, Config};

const SEED: u64 = 1;
const TOL_M: f64 = 0.05;
const TOL_DEG: f64 = 0.25;

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        summary: summary.into(),
    }
}

fn fmt_errors(e: &[f64; 6]) -> String {
    format!(
        "[{:+.4} {:+.4} {:+.4} m, {:+.3} {:+.3} {:+.3} deg]",
        e[0], e[1], e[2], e[3], e[4], e[5]
    )
}

fn within(e: &[f64; 6], tol_m: f64, tol_deg: f64) -> bool {
    e.iter()
        .enumerate()
        .all(|(i, v)| v.abs() <= if i < 3 { tol_m } else { tol_deg })
}

fn init_from(reference: &Pose6, d: &[f64; 6]) -> Pose6 {
    let a = reference.to_array();
    Pose6::new(
        a[0] + d[0],
        a[1] + d[1],
        a[2] + d[2],
        a[3] + d[3].to_radians(),
        a[4] + d[4].to_radians(),
        a[5] + d[5].to_radians(),
    )
}

/// Every simplex history seen by the suite, for the optimizer monotonicity check.
#[derive(Default)]
struct Histories {
    count: usize,
    non_monotone: usize,
}

impl Histories {
    fn add(&mut self, h: &[f64]) {
        self.count += 1;
        if !is_monotone_nonincreasing(h) {
            self.non_monotone += 1;
        }
    }
}

fn truth_recovery(session: &Session, world: &SyntheticDataset, hist: &mut Histories) -> (Outcome, Pose6) {
    let deltas = perturbations(3, 0.3, 3.0, SEED + 100);
    let mut pass = true;
    let mut first = None;
    let mut worst = Duration::ZERO;
    for d in &deltas {
        let init = init_from(&world.truth_left, d);
        let t = Instant::now();
        let r = session.calibrate(&init, 5).expect("calibration");
        worst = worst.max(t.elapsed());
        hist.add(&r.history);
        let e = r.estimate.difference(&world.truth_left);
        let ok = within(&e, TOL_M, TOL_DEG);
        println!("    init {} -> error {} {}", fmt_errors(d), fmt_errors(&e), if ok { "ok" } else { "out" });
        pass &= ok;
        first.get_or_insert(r.estimate);
    }
    let timely = worst <= Duration::from_secs(600);
    (
        outcome(
            pass && timely,
            format!(
                "truth recovered within {TOL_M} m / {TOL_DEG} deg from {} starts, slowest {:.1} s",
                deltas.len(),
                worst.as_secs_f64()
            ),
        ),
        first.unwrap(),
    )
}

fn baseline_consistency(
    world: &SyntheticDataset,
    config: &Config,
    left_estimate: &Pose6,
    hist: &mut Histories,
) -> Outcome {
    let right = Session::new(&world.dataset, CameraSide::Right, config).expect("right session");
    let d = perturbations(3, 0.3, 3.0, SEED + 100)[0];
    let r = right
        .calibrate(&init_from(&world.truth_right, &d), 5)
        .expect("right calibration");
    hist.add(&r.history);
    let diff = left_estimate.difference(&r.estimate);
    let b = world.dataset.intrinsics.baseline;
    let dy = (diff[1] - b).abs();
    let others = [diff[0], 0.0, diff[2], diff[3], diff[4], diff[5]];
    let pass = dy <= 0.01 && within(&others, TOL_M, TOL_DEG);
    println!("    left - right {}", fmt_errors(&diff));
    outcome(pass, format!("|dY - B| = {dy:.4} m (B = {b}), other differences {}", fmt_errors(&others)))
}

fn argmin_offsets(rows: &[SweepRow], steps: usize) -> [i64; 6] {
    let center = (steps / 2) as i64;
    let mut out = [0i64; 6];
    for (p, o) in out.iter_mut().enumerate() {
        let line: Vec<SweepRow> = rows.iter().filter(|r| r.param == p).cloned().collect();
        *o = argmin_index(&line) as i64 - center;
    }
    out
}

fn sweep_shape(session: &Session, world: &SyntheticDataset) -> Outcome {
    let cfg = SweepConfig::default();
    let selected = session.select(5).expect("selection");
    let problem = session.problem(&selected, &world.truth_left).expect("problem");
    let sel = argmin_offsets(&sweep_all(&problem, &world.truth_left, &cfg), cfg.steps);
    println!("    selected frames {selected:?}: argmin cell offsets {sel:?}");

    let candidates: Vec<usize> = session
        .analyses
        .iter()
        .filter(|a| a.detection.is_some() && !selected.contains(&a.frame_id))
        .map(|a| a.frame_id)
        .collect();
    let single = *candidates
        .choose(&mut ChaCha8Rng::seed_from_u64(SEED + 300))
        .expect("an unselected frame");
    let problem = session.problem(&[single], &world.truth_left).expect("problem");
    let one = argmin_offsets(&sweep_all(&problem, &world.truth_left, &cfg), cfg.steps);
    println!("    single frame {single}: argmin cell offsets {one:?}");

    let sharp = sel.iter().all(|o| o.abs() <= 1);
    let degraded = one.iter().any(|o| o.abs() > 3);
    let worst = PARAM_NAMES[(0..6).max_by_key(|&p| one[p].abs()).unwrap()];
    outcome(
        sharp && degraded,
        format!(
            "selected argmins within 1 cell: {sharp}; single frame {single} off by > 3 cells: {degraded} (worst {worst})"
        ),
    )
}

/// Standard error of a sample median estimated from its IQR.
fn median_se(iqr: f64, n: usize) -> f64 {
    1.2533 * (iqr / 1.349) / (n as f64).sqrt()
}

fn repeatability_check(session: &Session, world: &SyntheticDataset, config: &Config, hist: &mut Histories) -> Outcome {
    let t = Instant::now();
    let report: RepeatabilityReport = repeatability(
        session,
        &world.truth_left,
        &config.repeat,
        &config.nelder_mead(),
        config.seed,
    )
    .expect("repeatability");
    let elapsed = t.elapsed();
    for r in &report.runs {
        hist.add_flag(r.history_monotone);
    }
    let ks = &config.repeat.images;
    let (k_lo, k_hi) = (ks[0], *ks.last().unwrap());
    let n = config.repeat.runs;
    let mut iqr_ok = true;
    let mut median_ok = true;
    for p in 0..6 {
        let lo = report.quartiles(k_lo, p).unwrap();
        let hi = report.quartiles(k_hi, p).unwrap();
        let ratio = hi.iqr() / lo.iqr();
        iqr_ok &= ratio <= 0.5;
        let abs_stats: Vec<(f64, f64)> = ks
            .iter()
            .map(|&k| {
                let a: Vec<f64> = report
                    .runs
                    .iter()
                    .filter(|r| r.images == k)
                    .map(|r| r.errors[p].abs())
                    .collect();
                let q = quartiles(&a);
                (q.median, median_se(q.iqr(), a.len()))
            })
            .collect();
        let mono = abs_stats
            .windows(2)
            .all(|w| w[1].0 <= w[0].0 + 2.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
        median_ok &= mono;
        let medians: Vec<String> = abs_stats.iter().map(|(m, _)| format!("{m:.4}")).collect();
        println!(
            "    {:>2}: IQR K={k_lo} {:.4}  K={k_hi} {:.4}  ratio {:.2}  median |error| over K {ks:?}: {} {}",
            PARAM_NAMES[p],
            lo.iqr(),
            hi.iqr(),
            ratio,
            medians.join(" "),
            if mono { "" } else { "(grows)" }
        );
    }
    let timely = elapsed <= Duration::from_secs(7200);
    outcome(
        iqr_ok && median_ok && timely,
        format!(
            "{n} runs per K: IQR(K={k_hi}) <= 50% IQR(K={k_lo}) for all parameters: {iqr_ok}; \
             median |error| non-increasing within 2 standard errors: {median_ok}; {:.0} s",
            elapsed.as_secs_f64()
        ),
    )
}

impl Histories {
    fn add_flag(&mut self, monotone: bool) {
        self.count += 1;
        if !monotone {
            self.non_monotone += 1;
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<u8> {
    match rng.gen_range(0..3) {
        0 => (0..n).map(|_| rng.gen()).collect(),
        1 => (0..n).map(|_| rng.gen_range(0..4u8) * 60).collect(),
        _ => {
            let base = rng.gen_range(0..200u8);
            (0..n).map(|_| base + rng.gen_range(0..40u8)).collect()
        }
    }
}

fn metric_units() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 500);
    let mut nid_range = true;
    let mut nid_self = true;
    for _ in 0..1000 {
        let n = rng.gen_range(4..2000);
        let x = random_image(&mut rng, n);
        let y = if rng.gen_bool(0.3) {
            x.iter().map(|&v| v.wrapping_add(rng.gen_range(0..16))).collect()
        } else {
            random_image(&mut rng, n)
        };
        let bins = [8, 32, 64, 256][rng.gen_range(0..4)];
        let v = JointHistogram::from_pairs(bins, x.iter().copied().zip(y.iter().copied())).nid();
        nid_range &= (0.0..=1.0).contains(&v);
        let bin = |v: u8| v as usize * bins / 256;
        if x.iter().any(|&v| bin(v) != bin(x[0])) {
            let s = JointHistogram::from_pairs(bins, x.iter().map(|&v| (v, v))).nid();
            nid_self &= s.abs() <= 4.0 * f64::EPSILON;
        }
    }
    let indep = JointHistogram::from_pairs(256, [0u8, 0, 1, 1].into_iter().zip([0u8, 1, 0, 1])).nid() == 1.0;

    let mut edt_exact = true;
    for _ in 0..100 {
        let density = rng.gen_range(0.005..0.2);
        let mask = Raster::from_fn(32, 32, |_, _| rng.gen_bool(density));
        let dt = distance_transform(&mask, 99.0);
        let edges: Vec<(i64, i64)> = (0..32)
            .flat_map(|v| (0..32).map(move |u| (u, v)))
            .filter(|&(u, v)| *mask.get(u, v))
            .map(|(u, v)| (u as i64, v as i64))
            .collect();
        for v in 0..32usize {
            for u in 0..32usize {
                let want = edges
                    .iter()
                    .map(|&(eu, ev)| (eu - u as i64).pow(2) + (ev - v as i64).pow(2))
                    .min()
                    .map_or(99.0, |d| (d as f64).sqrt());
                edt_exact &= *dt.get(u, v) == want;
            }
        }
    }
    let votes = vote_weight(0.05) == 10.0 && vote_weight(2.0) == 0.5 && vote_weight(6.0) == 0.0;

    outcome(
        nid_range && nid_self && indep && edt_exact && votes,
        format!(
            "NID in [0,1]: {nid_range}; NID(X,X) = 0: {nid_self}; independent 0/1 case = 1: {indep}; \
             EDT equals brute force: {edt_exact}; vote weights 10/0.5/0: {votes}"
        ),
    )
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose6 {
    Pose6::new(
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-10.0..10.0),
        rng.gen_range(-3.1..3.1),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-3.1..3.1),
    )
}

fn geometry_properties(world: &SyntheticDataset) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 600);
    let mut pose_rt = true;
    for _ in 0..1000 {
        let p = random_pose(&mut rng);
        let m = RigidTransform::from_matrix(&p.to_transform().to_matrix());
        let q = m.to_pose();
        pose_rt &= p.difference(&q).iter().enumerate().all(|(i, d)| {
            let d = if i < 3 { *d } else { d.to_radians() };
            d.abs() <= 1e-9
        });
    }

    let k = CameraIntrinsics::new(300.0, 160.0, 120.0, 0.475, 320, 240).unwrap();
    let mut proj_rt = true;
    for _ in 0..1000 {
        let (u, v) = (rng.gen_range(0.0..319.0), rng.gen_range(0.0..239.0));
        let d = rng.gen_range(0.5..128.0);
        let p = k.disparity_to_point(u, v, d).unwrap();
        let (pu, pv) = k.project(&p).unwrap();
        proj_rt &= (pu - u).hypot(pv - v) <= 0.5;
    }

    let ds = &world.dataset;
    let subset: Vec<LidarScan> = ds.scans.iter().take(40).cloned().collect();
    let mut shuffled = subset.clone();
    shuffled.shuffle(&mut rng);
    let key = |c: &IntensityCloud| {
        let mut m: BTreeMap<[u64; 4], usize> = BTreeMap::new();
        for CloudPoint { position, intensity } in &c.points {
            let k = [
                position.x.to_bits(),
                position.y.to_bits(),
                position.z.to_bits(),
                *intensity as u64,
            ];
            *m.entry(k).or_default() += 1;
        }
        m
    };
    let a = accumulate(&subset, &ds.trajectory, &ds.lidar_extrinsics);
    let b = accumulate(&shuffled, &ds.trajectory, &ds.lidar_extrinsics);
    let order_free = !a.map.cloud.is_empty() && key(&a.map.cloud) == key(&b.map.cloud);

    outcome(
        pose_rt && proj_rt && order_free,
        format!(
            "pose/matrix round trip 1e-9: {pose_rt}; projection round trip 0.5 px: {proj_rt}; \
             accumulation order-independent: {order_free}"
        ),
    )
}

fn quadratic_descent() -> (bool, usize, f64) {
    let target = [0.5, -1.2, 2.0, 0.3, -0.7, 1.1];
    let scale = [1.0, 2.0, 0.5, 3.0, 1.5, 0.8];
    let f = |x: &[f64]| -> f64 {
        x.iter()
            .zip(&target)
            .zip(&scale)
            .map(|((a, b), s)| s * (a - b) * (a - b))
            .sum()
    };
    let opts = NelderMeadOptions {
        step: vec![0.5; 6],
        f_tol: 0.0,
        x_tol: vec![1e-9; 6],
        max_iter: 499,
        restart: false,
    };
    let r = nelder_mead(f, &[0.0; 6], &opts);
    let dist = r
        .x
        .iter()
        .zip(&target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    (dist < 1e-6 && r.iterations < 500 && is_monotone_nonincreasing(&r.history), r.iterations, dist)
}

fn main() {
    let start = Instant::now();
    let mut results: BTreeMap<u8, Outcome> = BTreeMap::new();

    println!("criterion 5: metric unit checks");
    results.insert(5, metric_units());

    let (quad_ok, quad_iters, quad_dist) = quadratic_descent();
    println!("    quadratic: |x - x*| = {quad_dist:.2e} after {quad_iters} iterations");

    println!("rendering the zero-noise world (seed {SEED})");
    let spec = SceneSpec::default().with_zero_noise();
    let world = render_dataset(&spec, SEED).expect("render");
    let config = Config {
        seed: SEED,
        ..Config::default()
    };

    println!("criterion 6: geometry properties");
    results.insert(6, geometry_properties(&world));

    let session = Session::new(&world.dataset, CameraSide::Left, &config).expect("session");
    let mut hist = Histories::default();

    println!("criterion 1: truth recovery");
    let (c1, left_estimate) = truth_recovery(&session, &world, &mut hist);
    results.insert(1, c1);

    println!("criterion 2: stereo baseline consistency");
    results.insert(2, baseline_consistency(&world, &config, &left_estimate, &mut hist));

    println!("criterion 3: cost sweep shape");
    results.insert(3, sweep_shape(&session, &world));

    println!("criterion 4: repeatability");
    results.insert(4, repeatability_check(&session, &world, &config, &mut hist));

    results.insert(
        7,
        outcome(
            quad_ok && hist.non_monotone == 0,
            format!(
                "quadratic converged to {quad_dist:.1e} in {quad_iters} iterations; \
                 best cost monotone in {}/{} calibration runs",
                hist.count - hist.non_monotone,
                hist.count
            ),
        ),
    );

    println!();
    let mut failed = 0;
    for (id, o) in &results {
        println!("criterion {id}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.summary);
        failed += usize::from(!o.pass);
    }
    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
