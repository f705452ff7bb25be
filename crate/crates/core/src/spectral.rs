//! Fourier pseudospectral integration of periodic 1D benchmark equations.
//!
//! Every equation is written as `û_t = L(k) û + N(û)` with a diagonal linear
//! part and a pseudospectral nonlinearity, and integrated either with the
//! fourth-order exponential time-differencing Runge-Kutta scheme (default) or
//! with classical RK4.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, SnapshotGrid};

pub const BURGERS_VISCOSITY: f64 = 0.1;

/// Fraction of spectral energy allowed in the top third of the spectrum.
pub const ALIASING_ENERGY_LIMIT: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("solution diverged at t = {time}")]
    Divergence { time: f64 },
    #[error("under-resolved at t = {time}: {fraction:e} of the energy sits in the top third of the spectrum")]
    Resolution { time: f64, fraction: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    /// `u_t = -u u_x + 0.1 u_xx`
    Burgers,
    /// `u_t = -u u_x - u_xxx`
    Kdv,
    /// `u_t = -u u_x - u_xx - u_xxxx`
    Ks,
    /// `ψ_t = 0.5 i ψ_xx + i |ψ|² ψ`, stored as channels `u = Re ψ`, `v = Im ψ`.
    Nls,
    /// `u_t = u_xx`
    Heat,
}

impl Equation {
    pub fn channels(self) -> Vec<String> {
        match self {
            Equation::Nls => vec!["u".into(), "v".into()],
            _ => vec!["u".into()],
        }
    }

    fn linear(self, k: f64) -> Complex64 {
        let k2 = k * k;
        match self {
            Equation::Burgers => Complex64::new(-BURGERS_VISCOSITY * k2, 0.0),
            // -u_xxx -> -(ik)^3 = i k^3
            Equation::Kdv => Complex64::new(0.0, k2 * k),
            Equation::Ks => Complex64::new(k2 - k2 * k2, 0.0),
            Equation::Nls => Complex64::new(0.0, -0.5 * k2),
            Equation::Heat => Complex64::new(-k2, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// `amplitude · sin(wavenumber · x + phase)`
    Sine {
        amplitude: f64,
        wavenumber: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude · cos(wavenumber · x)`
    Cosine { amplitude: f64, wavenumber: f64 },
    /// `amplitude · exp(-((x - center) / width)²)`
    Gaussian { amplitude: f64, center: f64, width: f64 },
    /// KdV soliton `3c sech²(√c (x - center) / 2)` moving right with speed `c`.
    Soliton { speed: f64, center: f64 },
    /// `amplitude · sech(x)` (real part; imaginary part zero).
    Sech { amplitude: f64 },
}

impl InitialCondition {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            InitialCondition::Sine {
                amplitude,
                wavenumber,
                phase,
            } => amplitude * (wavenumber * x + phase).sin(),
            InitialCondition::Cosine { amplitude, wavenumber } => amplitude * (wavenumber * x).cos(),
            InitialCondition::Gaussian {
                amplitude,
                center,
                width,
            } => amplitude * (-((x - center) / width).powi(2)).exp(),
            InitialCondition::Soliton { speed, center } => soliton(speed, center, 0.0, x),
            InitialCondition::Sech { amplitude } => amplitude / x.cosh(),
        }
    }
}

/// Travelling KdV soliton for `u_t + u u_x + u_xxx = 0`.
pub fn soliton(speed: f64, center: f64, t: f64, x: f64) -> f64 {
    let s = 1.0 / (0.5 * speed.sqrt() * (x - center - speed * t)).cosh();
    3.0 * speed * s * s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Etdrk4,
    Rk4,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub equation: Equation,
    /// Periodic interval `[a, b)`.
    pub domain: [f64; 2],
    pub modes: usize,
    pub t_final: f64,
    pub dt: f64,
    pub save_every: f64,
    pub initial_condition: InitialCondition,
    #[serde(default)]
    pub integrator: Integrator,
    /// 2/3-rule truncation of the nonlinear term.
    #[serde(default = "default_true")]
    pub dealias: bool,
}

fn near_integer(ratio: f64) -> Option<usize> {
    let n = ratio.round();
    ((ratio - n).abs() <= 1e-9 * ratio.max(1.0) && n >= 1.0).then_some(n as usize)
}

impl ProblemSpec {
    /// Checks the spec and returns `(steps per snapshot, number of snapshots)`.
    pub fn validate(&self) -> Result<(usize, usize), SpectralError> {
        let bad = |m: String| Err(SpectralError::Invalid(m));
        if !self.modes.is_power_of_two() || self.modes < 8 {
            return bad(format!("modes must be a power of two >= 8, got {}", self.modes));
        }
        if !(self.domain[1] > self.domain[0]) {
            return bad(format!("empty domain {:?}", self.domain));
        }
        if !(self.t_final > 0.0) || !(self.dt > 0.0) || !(self.save_every > 0.0) {
            return bad("t_final, dt and save_every must be positive".into());
        }
        let Some(steps) = near_integer(self.save_every / self.dt) else {
            return bad(format!("dt {} does not divide save_every {}", self.dt, self.save_every));
        };
        let Some(saves) = near_integer(self.t_final / self.save_every) else {
            return bad(format!(
                "save_every {} does not divide t_final {}",
                self.save_every, self.t_final
            ));
        };
        Ok((steps, saves + 1))
    }

    pub fn xs(&self) -> Vec<f64> {
        let h = (self.domain[1] - self.domain[0]) / self.modes as f64;
        (0..self.modes).map(|j| self.domain[0] + j as f64 * h).collect()
    }
}

/// Periodic spectral state plus the operators acting on it.
struct Spectral {
    eq: Equation,
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Wavenumbers with the Nyquist entry zeroed (odd derivatives).
    k_odd: Vec<f64>,
    mask: Vec<f64>,
    linear: Vec<Complex64>,
    scratch: Vec<Complex64>,
    buf: Vec<Complex64>,
}

impl Spectral {
    fn new(spec: &ProblemSpec) -> Self {
        let n = spec.modes;
        let len = spec.domain[1] - spec.domain[0];
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        let index = |j: usize| if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
        let k_even: Vec<f64> = (0..n).map(|j| 2.0 * PI / len * index(j) as f64).collect();
        let k_odd: Vec<f64> = (0..n)
            .map(|j| if j == n / 2 { 0.0 } else { k_even[j] })
            .collect();
        let mask = (0..n)
            .map(|j| {
                if !spec.dealias || (index(j).unsigned_abs() as usize) * 3 < n {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let linear = (0..n)
            .map(|j| {
                let l = spec.equation.linear(k_even[j]);
                // odd-order dispersion must vanish at Nyquist to keep real fields real
                if j == n / 2 && spec.equation == Equation::Kdv {
                    Complex64::new(0.0, 0.0)
                } else {
                    l
                }
            })
            .collect();
        Spectral {
            eq: spec.equation,
            n,
            fwd,
            inv,
            k_odd,
            mask,
            linear,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            buf: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    fn to_physical(&mut self, hat: &[Complex64], out: &mut [Complex64]) {
        out.copy_from_slice(hat);
        self.inv.process_with_scratch(out, &mut self.scratch);
        let s = 1.0 / self.n as f64;
        out.iter_mut().for_each(|v| *v *= s);
    }

    fn to_spectral(&mut self, data: &mut [Complex64]) {
        self.fwd.process_with_scratch(data, &mut self.scratch);
    }

    /// Pseudospectral nonlinear term `N(û)`.
    fn nonlinear(&mut self, hat: &[Complex64], out: &mut [Complex64]) {
        let mut phys = std::mem::take(&mut self.buf);
        match self.eq {
            Equation::Heat => {
                out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                self.buf = phys;
                return;
            }
            Equation::Burgers | Equation::Kdv | Equation::Ks => {
                // -u u_x = -(u²)_x / 2
                self.to_physical(hat, &mut phys);
                for v in phys.iter_mut() {
                    *v = Complex64::new(v.re * v.re, 0.0);
                }
                self.to_spectral(&mut phys);
                for j in 0..self.n {
                    out[j] = Complex64::new(0.0, -0.5 * self.k_odd[j]) * phys[j] * self.mask[j];
                }
            }
            Equation::Nls => {
                self.to_physical(hat, &mut phys);
                for v in phys.iter_mut() {
                    *v = Complex64::new(0.0, v.norm_sqr()) * *v;
                }
                self.to_spectral(&mut phys);
                for j in 0..self.n {
                    out[j] = phys[j] * self.mask[j];
                }
            }
        }
        self.buf = phys;
    }
}

/// ETDRK4 coefficients, evaluated by contour averages around each `hL`.
struct EtdCoefficients {
    e: Vec<Complex64>,
    e2: Vec<Complex64>,
    q: Vec<Complex64>,
    f1: Vec<Complex64>,
    f2: Vec<Complex64>,
    f3: Vec<Complex64>,
}

impl EtdCoefficients {
    fn new(linear: &[Complex64], h: f64) -> Self {
        const M: usize = 64;
        let roots: Vec<Complex64> = (0..M)
            .map(|j| Complex64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / M as f64))
            .collect();
        let n = linear.len();
        let mut c = EtdCoefficients {
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        for &l in linear {
            let hl = l * h;
            c.e.push(hl.exp());
            c.e2.push((hl * 0.5).exp());
            let (mut q, mut f1, mut f2, mut f3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
            for r in &roots {
                let z = hl + r;
                let ez = z.exp();
                let z3 = z * z * z;
                q += ((z * 0.5).exp() - 1.0) / z;
                f1 += (-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3;
                f2 += (2.0 + z + ez * (z - 2.0)) / z3;
                f3 += (-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3;
            }
            let s = h / M as f64;
            c.q.push(q * s);
            c.f1.push(f1 * s);
            c.f2.push(f2 * s);
            c.f3.push(f3 * s);
        }
        c
    }
}

struct Stepper {
    sp: Spectral,
    etd: Option<EtdCoefficients>,
    h: f64,
    nv: Vec<Complex64>,
    na: Vec<Complex64>,
    nb: Vec<Complex64>,
    nc: Vec<Complex64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c: Vec<Complex64>,
}

impl Stepper {
    fn new(spec: &ProblemSpec, h: f64) -> Self {
        let sp = Spectral::new(spec);
        let etd = (spec.integrator == Integrator::Etdrk4).then(|| EtdCoefficients::new(&sp.linear, h));
        let z = vec![Complex64::default(); spec.modes];
        Stepper {
            sp,
            etd,
            h,
            nv: z.clone(),
            na: z.clone(),
            nb: z.clone(),
            nc: z.clone(),
            a: z.clone(),
            b: z.clone(),
            c: z,
        }
    }

    fn step(&mut self, v: &mut [Complex64]) {
        let n = v.len();
        match &self.etd {
            Some(k) => {
                self.sp.nonlinear(v, &mut self.nv);
                for j in 0..n {
                    self.a[j] = k.e2[j] * v[j] + k.q[j] * self.nv[j];
                }
                self.sp.nonlinear(&self.a, &mut self.na);
                for j in 0..n {
                    self.b[j] = k.e2[j] * v[j] + k.q[j] * self.na[j];
                }
                self.sp.nonlinear(&self.b, &mut self.nb);
                for j in 0..n {
                    self.c[j] = k.e2[j] * self.a[j] + k.q[j] * (2.0 * self.nb[j] - self.nv[j]);
                }
                self.sp.nonlinear(&self.c, &mut self.nc);
                for j in 0..n {
                    v[j] = k.e[j] * v[j]
                        + self.nv[j] * k.f1[j]
                        + 2.0 * (self.na[j] + self.nb[j]) * k.f2[j]
                        + self.nc[j] * k.f3[j];
                }
            }
            None => {
                let h = self.h;
                let lin = self.sp.linear.clone();
                let rhs = |sp: &mut Spectral, x: &[Complex64], out: &mut [Complex64]| {
                    sp.nonlinear(x, out);
                    for j in 0..x.len() {
                        out[j] += lin[j] * x[j];
                    }
                };
                rhs(&mut self.sp, v, &mut self.nv);
                for j in 0..n {
                    self.a[j] = v[j] + 0.5 * h * self.nv[j];
                }
                rhs(&mut self.sp, &self.a, &mut self.na);
                for j in 0..n {
                    self.b[j] = v[j] + 0.5 * h * self.na[j];
                }
                rhs(&mut self.sp, &self.b, &mut self.nb);
                for j in 0..n {
                    self.c[j] = v[j] + h * self.nb[j];
                }
                rhs(&mut self.sp, &self.c, &mut self.nc);
                for j in 0..n {
                    v[j] += h / 6.0 * (self.nv[j] + 2.0 * self.na[j] + 2.0 * self.nb[j] + self.nc[j]);
                }
            }
        }
    }
}

fn top_third_energy(hat: &[Complex64]) -> f64 {
    let n = hat.len();
    let mut total = 0.0;
    let mut top = 0.0;
    for (j, c) in hat.iter().enumerate() {
        let idx = if j < n / 2 { j } else { n - j };
        let e = c.norm_sqr();
        total += e;
        if idx * 3 >= n {
            top += e;
        }
    }
    if total > 0.0 {
        top / total
    } else {
        0.0
    }
}

/// Integrates `spec` and returns the saved snapshots (`u`, or `u`/`v` for NLS).
pub fn simulate(spec: &ProblemSpec) -> Result<SnapshotGrid, SpectralError> {
    let (steps_per_save, n_saves) = spec.validate()?;
    let n = spec.modes;
    let xs = spec.xs();
    let h = spec.save_every / steps_per_save as f64;
    let mut stepper = Stepper::new(spec, h);

    let mut v: Vec<Complex64> = xs
        .iter()
        .map(|&x| Complex64::new(spec.initial_condition.eval(x), 0.0))
        .collect();
    stepper.sp.to_spectral(&mut v);

    let n_ch = spec.equation.channels().len();
    let mut out: Vec<Array2<f64>> = (0..n_ch).map(|_| Array2::zeros((n_saves, n))).collect();
    let mut phys = vec![Complex64::default(); n];
    let mut times = Vec::with_capacity(n_saves);
    for s in 0..n_saves {
        let time = s as f64 * spec.save_every;
        if s > 0 {
            for _ in 0..steps_per_save {
                stepper.step(&mut v);
            }
        }
        if v.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(SpectralError::Divergence { time });
        }
        let fraction = top_third_energy(&v);
        if fraction > ALIASING_ENERGY_LIMIT {
            return Err(SpectralError::Resolution { time, fraction });
        }
        stepper.sp.to_physical(&v, &mut phys);
        for (j, p) in phys.iter().enumerate() {
            out[0][[s, j]] = p.re;
            if n_ch == 2 {
                out[1][[s, j]] = p.im;
            }
        }
        times.push(time);
    }
    Ok(SnapshotGrid::new_1d(times, xs, spec.equation.channels(), out)?)
}
