use std::sync::OnceLock;

use roadcal::config::SweepConfig;
use roadcal::geometry::{Vec3, Z_MIN};
use roadcal::local_map::accumulate;
use roadcal::optimizer::{analyze_frame, sweep_all, Session};
use roadcal::stereo_road::compute_disparity;
use roadcal::synthetic::{render_dataset, SceneSpec, SyntheticDataset};
use roadcal::{CameraSide, Config};

const ROAD: u8 = 1;
const MARKING: u8 = 2;
const SKY: u8 = 0;

fn world() -> &'static SyntheticDataset {
    static WORLD: OnceLock<SyntheticDataset> = OnceLock::new();
    WORLD.get_or_init(|| render_dataset(&SceneSpec::default().with_zero_noise(), 1).unwrap())
}

/// One frame at the start of a short road with only the given crosswalks painted.
fn single_frame_scene(crosswalks: Vec<f64>) -> SceneSpec {
    let mut s = SceneSpec::default().with_zero_noise();
    s.markings.start_x = 0.0;
    s.markings.dashed_offsets.clear();
    s.markings.solid_offsets.clear();
    s.markings.crosswalks = crosswalks;
    s.obstacles.clear();
    s.trajectory.length = 20.0;
    s.trajectory.image_max_x = 0.0;
    s
}

/// Road, markings and nothing standing on or beside them.
fn flat_empty_road() -> SceneSpec {
    let mut s = single_frame_scene(vec![9.0]);
    s.markings.dashed_offsets = vec![-1.75, 1.75];
    s.road.curb_height = 0.0;
    s.buildings.min_height = 0.0;
    s.buildings.max_height = 0.0;
    s
}

#[test]
fn rendered_road_disparity_matches_the_analytic_plane() {
    let spec = flat_empty_road();
    let w = render_dataset(&spec, 2).unwrap();
    let k = w.dataset.intrinsics;
    let cam = w.dataset.trajectory.pose_at(0.0).unwrap().to_transform().compose(&w.truth_left.to_transform());
    let (o, r) = (cam.translation(), cam.rotation());
    let d = w.frame_truth[0].disparity(&k);
    let mut rows = 0;
    for v in 0..k.height {
        let mut any = false;
        for u in 0..k.width {
            if !matches!(*w.frame_truth[0].labels.get(u, v), ROAD | MARKING) {
                continue;
            }
            let ray = r * Vec3::new((u as f64 - k.cu) / k.f, (v as f64 - k.cv) / k.f, 1.0);
            let z = -o.z / ray.z;
            let got = d.get(u, v).unwrap();
            assert!((got - k.f * k.baseline / z).abs() <= 0.5, "row {v} col {u}: {got} vs z {z}");
            any = true;
        }
        rows += usize::from(any);
    }
    assert!(rows > 100, "{rows} road rows");
}

#[test]
fn stereo_matcher_recovers_road_disparity() {
    let w = world();
    let config = Config::default();
    let k = w.dataset.intrinsics;
    for id in [0, 10, 17] {
        let f = &w.dataset.frames[id];
        let truth = &w.frame_truth[id];
        let exact = truth.disparity(&k);
        let d = compute_disparity(&f.left, &f.right, &config.stereo);
        let mut errs = Vec::new();
        for v in 0..k.height {
            for u in 0..k.width {
                if !matches!(*truth.labels.get(u, v), ROAD | MARKING) {
                    continue;
                }
                // near the horizon the window spans a steep disparity gradient
                if let (Some(e), Some(m)) = (exact.get(u, v), d.get(u, v)) {
                    if e >= 5.0 {
                        errs.push((m - e).abs());
                    }
                }
            }
        }
        errs.sort_by(f64::total_cmp);
        let at = |q: f64| errs[((errs.len() - 1) as f64 * q) as usize];
        assert!(errs.len() > 10_000);
        assert!(at(0.5) <= 0.25 && at(0.9) <= 1.0, "frame {id}: median {} p90 {}", at(0.5), at(0.9));
    }
}

#[test]
fn far_background_has_no_parallax() {
    let w = world();
    let f = &w.dataset.frames[0];
    let t = &w.frame_truth[0];
    let (width, height) = f.left.dims();
    // the right camera sees what the left sees up to max_disp columns further right
    let reach = Config::default().stereo.max_disp;
    let mut checked = 0;
    for v in 1..height - 1 {
        for u in 1..width.saturating_sub(reach) {
            // neighbors too: a sky center can still be partly covered by a facade
            let sky = |x: usize| (v - 1..=v + 1).all(|y| *t.labels.get(x, y) == SKY);
            if (u - 1..=u + reach).all(sky) {
                assert_eq!(f.left.get(u, v), f.right.get(u, v), "row {v} col {u}");
                checked += 1;
            }
        }
    }
    assert!(checked > 500, "{checked} sky pixels");
}

#[test]
fn lidar_road_points_lie_on_the_road_plane() {
    let w = world();
    let spec = &w.spec;
    let ds = &w.dataset;
    let acc = accumulate(&ds.scans, &ds.trajectory, &ds.lidar_extrinsics);
    assert!(acc.rejected.is_empty());
    let margin = 0.5;
    let mut n = 0;
    for p in &acc.map.cloud.points {
        let q = p.position;
        let on_obstacle = spec.obstacles.iter().any(|o| {
            let r = 0.5 * o.size[0].hypot(o.size[1]) + margin;
            (q.x - o.center[0]).hypot(q.y - o.center[1]) < r
        });
        if q.y.abs() < spec.road.half_width - margin && !on_obstacle {
            assert!(q.z.abs() < 1e-6, "road point {q:?} off the plane");
            n += 1;
        }
    }
    assert!(n > 10_000, "{n} road points");
}

#[test]
fn camera_never_sees_same_instant_lidar_returns() {
    let w = world();
    let ds = &w.dataset;
    let k = ds.intrinsics;
    for scan in &ds.scans {
        let vehicle = ds.trajectory.pose_at(scan.timestamp).unwrap().to_transform();
        let to_camera = vehicle.compose(&w.truth_left.to_transform()).inverse();
        let to_vehicle = ds.lidar_extrinsics[&scan.sensor_id].to_transform();
        let world_of = vehicle.compose(&to_vehicle);
        for p in &scan.cloud.points {
            let c = to_camera.transform_point(&world_of.transform_point(&p.position));
            assert!(
                c.z <= Z_MIN || k.project(&c).is_none(),
                "lidar {} at t={} sees {c:?} in the camera",
                scan.sensor_id,
                scan.timestamp
            );
        }
    }
}

#[test]
fn truth_minimizes_the_zero_noise_cost_on_a_coarse_grid() {
    let w = world();
    let session = Session::new(&w.dataset, CameraSide::Left, &Config::default()).unwrap();
    let ids = session.select(5).unwrap();
    let problem = session.problem(&ids, &w.truth_left).unwrap();
    let at_truth = problem.cost(&w.truth_left).f_sum;
    let cfg = SweepConfig {
        steps: 31,
        range_m: 0.3,
        range_deg: 3.0,
    };
    for row in sweep_all(&problem, &w.truth_left, &cfg) {
        assert!(
            at_truth <= row.cost.f_sum,
            "param {} offset {}: {} < cost at truth {at_truth}",
            row.param,
            row.offset,
            row.cost.f_sum
        );
    }
}

#[test]
fn crosswalk_frame_outranks_blank_road() {
    let config = Config::default();
    let utility = |spec: &SceneSpec| {
        let w = render_dataset(spec, 7).unwrap();
        analyze_frame(&w.dataset, 0, CameraSide::Left, &config).utility
    };
    let blank = utility(&single_frame_scene(Vec::new()));
    let crosswalk = utility(&single_frame_scene(vec![9.0]));
    assert!(
        crosswalk.u_i > blank.u_i,
        "crosswalk {crosswalk:?} vs blank {blank:?}"
    );
}

#[test]
fn rendering_is_deterministic() {
    let spec = single_frame_scene(vec![9.0]);
    let a = render_dataset(&spec, 3).unwrap();
    let b = render_dataset(&spec, 3).unwrap();
    assert_eq!(a.dataset.frames, b.dataset.frames);
    assert_eq!(a.dataset.scans, b.dataset.scans);
    assert_eq!(a.frame_truth, b.frame_truth);
}

#[test]
fn camera_without_road_is_rejected() {
    let mut spec = single_frame_scene(Vec::new());
    spec.camera.truth.rx_deg = 0.0;
    spec.camera.truth.rz_deg = 0.0;
    assert!(render_dataset(&spec, 1).is_err());
}

#[test]
fn projected_markings_overlap_image_markings_at_truth() {
    let w = world();
    let session = Session::new(&w.dataset, CameraSide::Left, &Config::default()).unwrap();
    let id = session.select(1).unwrap()[0];
    let lidar = session.project(id, &w.truth_left).unwrap();
    let labels = &w.frame_truth[id].labels;
    let (mut inter, mut union) = (0, 0);
    for v in 0..labels.height() {
        for u in 0..labels.width() {
            let label = *labels.get(u, v);
            if !*lidar.valid.get(u, v) || !matches!(label, ROAD | MARKING) {
                continue;
            }
            // asphalt returns 40, paint 200
            let a = *lidar.image.get(u, v) >= 120;
            let b = label == MARKING;
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
    }
    let iou = inter as f64 / union as f64;
    assert!(union > 500 && iou >= 0.8, "frame {id}: IoU {iou} over {union} pixels");
}
