//! Cost sweeps along single parameters and repeatability over random initializations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{CalibrationProblem, NelderMeadOptions, Session};
use crate::config::{RepeatConfig, SweepConfig};
use crate::costs::CostBreakdown;
use crate::error::Result;
use crate::geometry::Pose6;

pub const PARAM_NAMES: [&str; 6] = ["tx", "ty", "tz", "rx", "ry", "rz"];

/// Evenly spaced offsets over `[-range, range]`; index `(steps - 1) / 2` is
/// exactly zero when `steps` is odd.
pub fn sweep_offsets(range: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 || range == 0.0 {
        return vec![0.0];
    }
    let step = 2.0 * range / (steps - 1) as f64;
    let mid = (steps - 1) as f64 / 2.0;
    (0..steps).map(|i| (i as f64 - mid) * step).collect()
}

/// Applies an offset to one parameter; rotations are given in degrees.
fn offset_pose(p: &Pose6, param: usize, offset: f64) -> Pose6 {
    let mut a = p.to_array();
    a[param] += if param < 3 { offset } else { offset.to_radians() };
    Pose6::from_array(a)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub param: usize,
    /// Meters for translations, degrees for rotations.
    pub offset: f64,
    pub cost: CostBreakdown,
}

pub fn sweep(problem: &CalibrationProblem, reference: &Pose6, param: usize, range: f64, steps: usize) -> Vec<SweepRow> {
    assert!(param < 6, "parameter index out of range");
    sweep_offsets(range, steps)
        .into_iter()
        .map(|offset| SweepRow {
            param,
            offset,
            cost: if offset == 0.0 {
                problem.cost(reference)
            } else {
                problem.cost(&offset_pose(reference, param, offset))
            },
        })
        .collect()
}

/// Sweeps all six parameters.
pub fn sweep_all(problem: &CalibrationProblem, reference: &Pose6, cfg: &SweepConfig) -> Vec<SweepRow> {
    (0..6)
        .flat_map(|p| {
            let range = if p < 3 { cfg.range_m } else { cfg.range_deg };
            sweep(problem, reference, p, range, cfg.steps)
        })
        .collect()
}

/// Index of the smallest `f_sum`; the first one on ties.
pub fn argmin_index(rows: &[SweepRow]) -> usize {
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.cost.f_sum < rows[best].cost.f_sum {
            best = i;
        }
    }
    best
}

pub const SWEEP_HEADER: [&str; 6] = ["param", "offset", "f_edge", "f_nid", "f_plane", "f_sum"];

pub fn encode_sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            PARAM_NAMES[r.param].to_string(),
            format!("{:.6}", r.offset),
            format!("{:.9}", r.cost.f_edge),
            format!("{:.9}", r.cost.f_nid),
            format!("{:.9}", r.cost.f_plane),
            format!("{:.9}", r.cost.f_sum),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Parse {
        context: "csv".into(),
        message: e.to_string(),
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    w.into_inner().map_err(|e| crate::Error::Parse {
        context: "csv".into(),
        message: e.to_string(),
    })
}

/// Uniform perturbations in `[-m, m]^3 x [-deg, deg]^3`, in meters and degrees.
pub fn perturbations(runs: usize, perturb_m: f64, perturb_deg: f64, seed: u64) -> Vec<[f64; 6]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |r: f64| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
    (0..runs)
        .map(|_| {
            let mut p = [0.0; 6];
            for (i, v) in p.iter_mut().enumerate() {
                *v = draw(if i < 3 { perturb_m } else { perturb_deg });
            }
            p
        })
        .collect()
}

fn perturbed(reference: &Pose6, d: &[f64; 6]) -> Pose6 {
    let mut a = reference.to_array();
    for i in 0..6 {
        a[i] += if i < 3 { d[i] } else { d[i].to_radians() };
    }
    Pose6::from_array(a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatRun {
    pub run: usize,
    pub images: usize,
    pub init: Pose6,
    pub estimate: Pose6,
    /// `estimate - reference`, meters then degrees.
    pub errors: [f64; 6],
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history_monotone: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Linear-interpolated 25th, 50th and 75th percentiles.
pub fn quartiles(values: &[f64]) -> Quartiles {
    assert!(!values.is_empty(), "quartiles of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
    };
    Quartiles {
        q1: at(0.25),
        median: at(0.5),
        q3: at(0.75),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepeatSummary {
    pub images: usize,
    pub param: usize,
    pub quartiles: Quartiles,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatabilityReport {
    pub runs: Vec<RepeatRun>,
    pub summary: Vec<RepeatSummary>,
}

impl RepeatabilityReport {
    pub fn quartiles(&self, images: usize, param: usize) -> Option<Quartiles> {
        self.summary
            .iter()
            .find(|s| s.images == images && s.param == param)
            .map(|s| s.quartiles)
    }
}

/// Calibrates from `cfg.runs` perturbed starts for every image count in
/// `cfg.images`; the same perturbations are reused for each count.
pub fn repeatability(
    session: &Session,
    reference: &Pose6,
    cfg: &RepeatConfig,
    opts: &NelderMeadOptions,
    seed: u64,
) -> Result<RepeatabilityReport> {
    let deltas = perturbations(cfg.runs, cfg.perturb_m, cfg.perturb_deg, seed);
    log::info!("repeatability: {} runs, seed {seed}", cfg.runs);
    let mut runs = Vec::new();
    for &k in &cfg.images {
        let ids = session.select(k)?;
        let batch = deltas
            .par_iter()
            .enumerate()
            .map(|(run, d)| -> Result<RepeatRun> {
                let init = perturbed(reference, d);
                let r = session.problem(&ids, &init)?.solve(&init, opts);
                if !r.converged {
                    log::warn!("run {run} with {k} images did not converge");
                }
                Ok(RepeatRun {
                    run,
                    images: k,
                    init,
                    estimate: r.estimate,
                    errors: r.estimate.difference(reference),
                    cost: r.cost,
                    iterations: r.iterations,
                    converged: r.converged,
                    history_monotone: super::is_monotone_nonincreasing(&r.history),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        runs.extend(batch);
    }
    let mut summary = Vec::new();
    for &k in &cfg.images {
        for param in 0..6 {
            let errs: Vec<f64> = runs.iter().filter(|r| r.images == k).map(|r| r.errors[param]).collect();
            summary.push(RepeatSummary {
                images: k,
                param,
                quartiles: quartiles(&errs),
            });
        }
    }
    Ok(RepeatabilityReport { runs, summary })
}

pub const REPEAT_HEADER: [&str; 23] = [
    "run", "images", "init_tx", "init_ty", "init_tz", "init_rx", "init_ry", "init_rz", "est_tx", "est_ty", "est_tz",
    "est_rx", "est_ry", "est_rz", "err_tx", "err_ty", "err_tz", "err_rx", "err_ry", "err_rz", "cost", "iters",
    "converged",
];

fn pose_fields(p: &Pose6) -> Vec<String> {
    let a = p.to_array();
    (0..6)
        .map(|i| format!("{:.6}", if i < 3 { a[i] } else { a[i].to_degrees() }))
        .collect()
}

pub fn encode_repeat_csv(report: &RepeatabilityReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPEAT_HEADER).map_err(csv_err)?;
    for r in &report.runs {
        let mut rec = vec![r.run.to_string(), r.images.to_string()];
        rec.extend(pose_fields(&r.init));
        rec.extend(pose_fields(&r.estimate));
        rec.extend(r.errors.iter().map(|e| format!("{e:.6}")));
        rec.push(format!("{:.9}", r.cost));
        rec.push(r.iterations.to_string());
        rec.push(r.converged.to_string());
        w.write_record(rec).map_err(csv_err)?;
    }
    finish(w)
}

pub const SUMMARY_HEADER: [&str; 6] = ["images", "param", "q25", "q50", "q75", "iqr"];

pub fn encode_summary_csv(report: &RepeatabilityReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for s in &report.summary {
        let q = s.quartiles;
        w.write_record([
            s.images.to_string(),
            PARAM_NAMES[s.param].to_string(),
            format!("{:.6}", q.q1),
            format!("{:.6}", q.median),
            format!("{:.6}", q.q3),
            format!("{:.6}", q.iqr()),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_symmetric_with_exact_zero() {
        let o = sweep_offsets(0.3, 61);
        assert_eq!(o.len(), 61);
        assert_eq!(o[30], 0.0);
        assert!((o[0] + 0.3).abs() < 1e-12 && (o[60] - 0.3).abs() < 1e-12);
        assert!((o[31] - 0.01).abs() < 1e-12);
        assert_eq!(sweep_offsets(0.0, 61), vec![0.0]);
        assert_eq!(sweep_offsets(0.5, 1), vec![0.0]);
    }

    #[test]
    fn quartiles_interpolate() {
        let q = quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
        let q = quartiles(&[1.0, 2.0]);
        assert_eq!((q.q1, q.median, q.q3), (1.25, 1.5, 1.75));
        assert_eq!(quartiles(&[7.0]).iqr(), 0.0);
    }

    #[test]
    fn perturbations_are_seeded_and_bounded() {
        let a = perturbations(40, 0.3, 3.0, 9);
        assert_eq!(a, perturbations(40, 0.3, 3.0, 9));
        assert_ne!(a, perturbations(40, 0.3, 3.0, 10));
        assert!(a.iter().all(|p| p[..3].iter().all(|v| v.abs() <= 0.3) && p[3..].iter().all(|v| v.abs() <= 3.0)));
        assert!(perturbations(3, 0.0, 0.0, 1).iter().all(|p| *p == [0.0; 6]));
    }

    #[test]
    fn offset_pose_uses_degrees_for_rotations() {
        let p = Pose6::identity();
        let q = offset_pose(&p, 4, 2.0);
        assert!((q.ry - 2f64.to_radians()).abs() < 1e-15);
        assert_eq!(offset_pose(&p, 0, 0.5).tx, 0.5);
    }

    #[test]
    fn argmin_takes_first_tie() {
        let row = |f: f64| SweepRow {
            param: 0,
            offset: 0.0,
            cost: CostBreakdown {
                f_sum: f,
                ..Default::default()
            },
        };
        assert_eq!(argmin_index(&[row(3.0), row(1.0), row(1.0)]), 1);
    }
}
