//! First-order and quasi-Newton minimizers over flat parameter vectors.

use serde::{Deserialize, Serialize};

/// A differentiable scalar objective. `eval` writes the gradient into `grad`
/// and returns the objective value.
pub trait Objective {
    type Error;
    fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64, Self::Error>;
}

/// Adam with a cosine-decayed step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    /// Final step size reached at the end of the cosine schedule.
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn lr_at(&self, iter: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr;
        }
        let frac = iter as f64 / (total - 1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig, dim: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }

    /// In-place update of `x` along `grad` with step size `lr`.
    pub fn update(&mut self, x: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..x.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            x[i] -= lr * mh / (vh.sqrt() + c.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub memory: usize,
    /// Stop when the max-norm of the gradient drops below this.
    pub grad_tol: f64,
    /// Stop when the relative decrease of one step drops below this.
    pub ftol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 50,
            grad_tol: 1e-10,
            ftol: 1e-14,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LbfgsStatus {
    /// The iteration budget was used up.
    Budget,
    GradientTolerance,
    /// One step decreased the objective by less than `ftol` (relative).
    Stalled,
    /// The line search failed to find an acceptable step along a descent direction.
    LineSearchFailed,
}

/// Limited-memory BFGS with a strong-Wolfe line search.
pub struct Lbfgs {
    cfg: LbfgsConfig,
    s: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    rho: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct LinePoint {
    alpha: f64,
    f: f64,
    slope: f64,
}

impl Lbfgs {
    pub fn new(cfg: LbfgsConfig) -> Self {
        Lbfgs {
            cfg,
            s: Vec::new(),
            y: Vec::new(),
            rho: Vec::new(),
        }
    }

    fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
        let k = self.s.len();
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        if let Some(last) = k.checked_sub(1) {
            let gamma = dot(&self.s[last], &self.y[last]) / dot(&self.y[last], &self.y[last]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q
    }

    /// Runs up to `iterations` quasi-Newton steps from `x`, calling `on_iter(k, f)`
    /// after each accepted step. `x` always holds the last accepted point.
    pub fn minimize<O: Objective>(
        &mut self,
        obj: &mut O,
        x: &mut Vec<f64>,
        iterations: usize,
        mut on_iter: impl FnMut(usize, f64, &[f64]),
    ) -> Result<(f64, LbfgsStatus), O::Error> {
        let n = x.len();
        let mut grad = vec![0.0; n];
        let mut f = obj.eval(x, &mut grad)?;
        for it in 0..iterations {
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax < self.cfg.grad_tol {
                return Ok((f, LbfgsStatus::GradientTolerance));
            }
            let mut d = self.direction(&grad);
            let mut slope = dot(&d, &grad);
            if !(slope < 0.0) {
                // lost descent: restart from steepest descent
                self.s.clear();
                self.y.clear();
                self.rho.clear();
                d = grad.iter().map(|g| -g).collect();
                slope = dot(&d, &grad);
            }
            let alpha0 = if self.s.is_empty() {
                (1.0 / d.iter().map(|v| v.abs()).sum::<f64>().max(1e-300)).min(1.0)
            } else {
                1.0
            };
            let mut new_grad = vec![0.0; n];
            let search = self.line_search(obj, x, &d, f, slope, alpha0, &mut new_grad)?;
            let Some((alpha, new_f)) = search else {
                if self.s.is_empty() {
                    return Ok((f, LbfgsStatus::LineSearchFailed));
                }
                self.s.clear();
                self.y.clear();
                self.rho.clear();
                continue;
            };
            let step: Vec<f64> = d.iter().map(|v| alpha * v).collect();
            for (xi, si) in x.iter_mut().zip(&step) {
                *xi += si;
            }
            let yv: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&step, &yv);
            if sy > 1e-300 {
                if self.s.len() == self.cfg.memory {
                    self.s.remove(0);
                    self.y.remove(0);
                    self.rho.remove(0);
                }
                self.s.push(step);
                self.y.push(yv);
                self.rho.push(1.0 / sy);
            }
            let decrease = (f - new_f) / f.abs().max(new_f.abs()).max(1e-300);
            f = new_f;
            grad = new_grad;
            on_iter(it, f, x);
            if decrease < self.cfg.ftol {
                return Ok((f, LbfgsStatus::Stalled));
            }
        }
        Ok((f, LbfgsStatus::Budget))
    }

    /// Strong-Wolfe search (bracketing + zoom with cubic interpolation).
    /// On success returns the step and objective; `grad_out` holds the gradient there.
    #[allow(clippy::too_many_arguments)]
    fn line_search<O: Objective>(
        &self,
        obj: &mut O,
        x: &[f64],
        d: &[f64],
        f0: f64,
        slope0: f64,
        alpha_init: f64,
        grad_out: &mut [f64],
    ) -> Result<Option<(f64, f64)>, O::Error> {
        let (c1, c2) = (self.cfg.c1, self.cfg.c2);
        let mut trial = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        let mut evals = 0;
        let mut probe = |alpha: f64, g: &mut [f64], evals: &mut usize| -> Result<LinePoint, O::Error> {
            *evals += 1;
            for i in 0..x.len() {
                trial[i] = x[i] + alpha * d[i];
            }
            let f = obj.eval(&trial, g)?;
            let slope = dot(g, d);
            Ok(LinePoint { alpha, f, slope })
        };

        let mut prev = LinePoint {
            alpha: 0.0,
            f: f0,
            slope: slope0,
        };
        let mut alpha = alpha_init;
        let (mut lo, mut hi);
        loop {
            let cur = probe(alpha, &mut g, &mut evals)?;
            if !cur.f.is_finite() {
                // overshoot into a non-finite region: shrink
                alpha = 0.5 * (prev.alpha + alpha);
                if evals >= self.cfg.max_line_evals {
                    return Ok(None);
                }
                continue;
            }
            if cur.f > f0 + c1 * cur.alpha * slope0 || (evals > 1 && cur.f >= prev.f) {
                lo = prev;
                hi = cur;
                break;
            }
            if cur.slope.abs() <= -c2 * slope0 {
                grad_out.copy_from_slice(&g);
                return Ok(Some((cur.alpha, cur.f)));
            }
            if cur.slope >= 0.0 {
                lo = cur;
                hi = prev;
                break;
            }
            if evals >= self.cfg.max_line_evals {
                grad_out.copy_from_slice(&g);
                return Ok(Some((cur.alpha, cur.f)));
            }
            prev = cur;
            alpha *= 2.0;
        }

        // zoom
        let mut best: Option<(f64, f64, Vec<f64>)> = None;
        while evals < self.cfg.max_line_evals {
            let a = cubic_min(&lo, &hi);
            let cur = probe(a, &mut g, &mut evals)?;
            if cur.f.is_finite() && cur.f < f0 + c1 * cur.alpha * slope0 {
                if best.as_ref().is_none_or(|b| cur.f < b.1) {
                    best = Some((cur.alpha, cur.f, g.clone()));
                }
            }
            if !cur.f.is_finite() || cur.f > f0 + c1 * cur.alpha * slope0 || cur.f >= lo.f {
                hi = cur;
            } else {
                if cur.slope.abs() <= -c2 * slope0 {
                    grad_out.copy_from_slice(&g);
                    return Ok(Some((cur.alpha, cur.f)));
                }
                if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1e-300) {
                break;
            }
        }
        // accept the best sufficient-decrease point if the curvature condition never held
        Ok(best.map(|(a, f, gb)| {
            grad_out.copy_from_slice(&gb);
            (a, f)
        }))
    }
}

/// Minimizer of the cubic interpolating both end points, safeguarded into the interval.
fn cubic_min(a: &LinePoint, b: &LinePoint) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a, b) } else { (b, a) };
    let width = hi.alpha - lo.alpha;
    let mid = 0.5 * (lo.alpha + hi.alpha);
    if !b.f.is_finite() || width <= 0.0 {
        return mid;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    if !t.is_finite() {
        return mid;
    }
    let margin = 0.1 * width;
    t.clamp(lo.alpha + margin, hi.alpha - margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        type Error = Infallible;
        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64, Infallible> {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            Ok((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        }
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        type Error = Infallible;
        fn eval(&mut self, x: &[f64], g: &mut [f64]) -> Result<f64, Infallible> {
            let mut f = 0.0;
            for i in 0..x.len() {
                g[i] = 2.0 * self.0[i] * x[i];
                f += self.0[i] * x[i] * x[i];
            }
            Ok(f)
        }
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let mut x = vec![-1.2, 1.0];
        let mut opt = Lbfgs::new(LbfgsConfig::default());
        let (f, _) = opt.minimize(&mut Rosenbrock, &mut x, 200, |_, _, _| {}).unwrap();
        assert!(f < 1e-12, "f = {f}");
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn lbfgs_steps_never_increase_objective() {
        let mut x = vec![3.0, -2.0, 1.0, 0.5];
        let mut opt = Lbfgs::new(LbfgsConfig::default());
        let mut last = f64::INFINITY;
        opt.minimize(&mut Quadratic(vec![1.0, 10.0, 100.0, 1000.0]), &mut x, 50, |_, f, _| {
            assert!(f <= last);
            last = f;
        })
        .unwrap();
        assert!(last < 1e-20);
    }

    #[test]
    fn adam_descends_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            lr_min: 1e-3,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, 2);
        let mut x = vec![1.0, -2.0];
        let mut g = vec![0.0; 2];
        let mut q = Quadratic(vec![1.0, 3.0]);
        let f0 = q.eval(&x, &mut g).unwrap();
        for it in 0..500 {
            q.eval(&x, &mut g).unwrap();
            adam.update(&mut x, &g, cfg.lr_at(it, 500));
        }
        let f = q.eval(&x, &mut g).unwrap();
        assert!(f < 1e-4 * f0, "f = {f}");
    }

    #[test]
    fn cosine_schedule_end_points() {
        let cfg = AdamConfig::default();
        assert_eq!(cfg.lr_at(0, 100), cfg.lr);
        assert!((cfg.lr_at(99, 100) - cfg.lr_min).abs() < 1e-18);
        assert!(cfg.lr_at(50, 100) < cfg.lr && cfg.lr_at(50, 100) > cfg.lr_min);
    }
}
