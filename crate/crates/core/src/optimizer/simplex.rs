//! Downhill simplex (Nelder–Mead) minimization.

use std::cmp::Ordering;

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const BETA: f64 = 0.5;
const SIGMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Initial simplex edge along each axis.
    pub step: Vec<f64>,
    /// Relative cost spread below which the simplex has converged.
    pub f_tol: f64,
    /// Per-axis simplex extent below which the simplex has converged.
    pub x_tol: Vec<f64>,
    pub max_iter: usize,
    /// Rebuild a fresh simplex at the first minimum and continue once.
    pub restart: bool,
}

impl NelderMeadOptions {
    /// Six-axis pose options: translations in meters, rotations in radians.
    pub fn pose(step_m: f64, step_deg: f64, f_tol: f64, x_tol_m: f64, x_tol_deg: f64, max_iter: usize, restart: bool) -> Self {
        let r = step_deg.to_radians();
        let xr = x_tol_deg.to_radians();
        NelderMeadOptions {
            step: vec![step_m, step_m, step_m, r, r, r],
            f_tol,
            x_tol: vec![x_tol_m, x_tol_m, x_tol_m, xr, xr, xr],
            max_iter,
            restart,
        }
    }
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions::pose(0.1, 1.0, 1e-6, 1e-4, 0.01, 2000, true)
    }
}

/// Vertices sorted by cost, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexState {
    pub vertices: Vec<Vec<f64>>,
    pub costs: Vec<f64>,
    pub iteration: usize,
    /// Best cost at the start of every iteration.
    pub history: Vec<f64>,
}

impl SimplexState {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.costs.len()).collect();
        idx.sort_by(|&a, &b| self.costs[a].partial_cmp(&self.costs[b]).unwrap_or(Ordering::Equal));
        self.vertices = idx.iter().map(|&i| self.vertices[i].clone()).collect();
        self.costs = idx.iter().map(|&i| self.costs[i]).collect();
    }

    pub fn best(&self) -> (&[f64], f64) {
        (&self.vertices[0], self.costs[0])
    }

    /// Largest per-axis distance of any vertex from the best one, relative to `x_tol`.
    fn within_x_tol(&self, x_tol: &[f64]) -> bool {
        let b = &self.vertices[0];
        self.vertices[1..]
            .iter()
            .all(|v| v.iter().zip(b).zip(x_tol).all(|((a, b), t)| (a - b).abs() <= *t))
    }

    fn within_f_tol(&self, f_tol: f64) -> bool {
        let (lo, hi) = (self.costs[0], self.costs[self.costs.len() - 1]);
        hi.is_finite() && hi - lo <= f_tol * lo.abs().max(hi.abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best cost per iteration over all stages.
    pub history: Vec<f64>,
}

fn sanitize(c: f64) -> f64 {
    if c.is_finite() {
        c
    } else {
        f64::INFINITY
    }
}

struct Counted<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        sanitize((self.f)(x))
    }
}

fn stage<F: FnMut(&[f64]) -> f64>(f: &mut Counted<F>, x0: &[f64], f0: f64, opts: &NelderMeadOptions) -> (SimplexState, bool) {
    let n = x0.len();
    let mut vertices = vec![x0.to_vec()];
    let mut costs = vec![f0];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.step[i];
        costs.push(f.eval(&v));
        vertices.push(v);
    }
    let mut s = SimplexState {
        vertices,
        costs,
        iteration: 0,
        history: Vec::new(),
    };
    loop {
        s.sort();
        s.history.push(s.costs[0]);
        if let Some(prev) = s.history.iter().rev().nth(1) {
            debug_assert!(s.costs[0] <= *prev, "best cost increased");
        }
        if s.costs[0] == f64::INFINITY {
            return (s, false);
        }
        if s.within_f_tol(opts.f_tol) || s.within_x_tol(&opts.x_tol) {
            return (s, true);
        }
        if s.iteration >= opts.max_iter {
            return (s, false);
        }
        s.iteration += 1;

        let centroid: Vec<f64> = (0..n).map(|j| s.vertices[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let worst = s.vertices[n].clone();
        let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect() };

        let xr = along(ALPHA);
        let fr = f.eval(&xr);
        if fr < s.costs[0] {
            let xe = along(ALPHA * GAMMA);
            let fe = f.eval(&xe);
            if fe < fr {
                s.vertices[n] = xe;
                s.costs[n] = fe;
            } else {
                s.vertices[n] = xr;
                s.costs[n] = fr;
            }
            continue;
        }
        if fr < s.costs[n - 1] {
            s.vertices[n] = xr;
            s.costs[n] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < s.costs[n] {
            let xc = along(ALPHA * BETA);
            let fc = f.eval(&xc);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-BETA);
            let fc = f.eval(&xc);
            let ok = fc < s.costs[n];
            (xc, fc, ok)
        };
        if accept {
            s.vertices[n] = xc;
            s.costs[n] = fc;
            continue;
        }
        let best = s.vertices[0].clone();
        for i in 1..=n {
            let v: Vec<f64> = best.iter().zip(&s.vertices[i]).map(|(b, x)| b + SIGMA * (x - b)).collect();
            s.costs[i] = f.eval(&v);
            s.vertices[i] = v;
        }
    }
}

/// Minimizes `f` from `x0`. Non-finite costs count as `+inf`; if every vertex
/// is infinite the result is `x0` with `converged = false`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> NelderMeadResult {
    assert_eq!(opts.step.len(), x0.len(), "step dimension");
    assert_eq!(opts.x_tol.len(), x0.len(), "x_tol dimension");
    let mut f = Counted { f, evaluations: 0 };
    let f0 = f.eval(x0);
    let (first, mut converged) = stage(&mut f, x0, f0, opts);
    let mut iterations = first.iteration;
    let mut history = first.history.clone();
    let (mut x, mut cost) = (first.vertices[0].clone(), first.costs[0]);
    if opts.restart && cost.is_finite() {
        let (second, c) = stage(&mut f, &x, cost, opts);
        iterations += second.iteration;
        history.extend(&second.history);
        converged = c;
        if second.costs[0] <= cost {
            x = second.vertices[0].clone();
            cost = second.costs[0];
        }
    }
    if !cost.is_finite() {
        x = x0.to_vec();
        converged = false;
    }
    NelderMeadResult {
        x,
        cost,
        iterations,
        evaluations: f.evaluations,
        converged,
        history,
    }
}

/// True when no entry exceeds its predecessor.
pub fn is_monotone_nonincreasing(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0])
}
