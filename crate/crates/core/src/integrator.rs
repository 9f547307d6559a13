//! Dormand–Prince 5(4) with step-size control, exact hitting of output
//! times, an optional projection hook, and Hermite-type dense output.

#[allow(unused_imports)] // std builds resolve these as inherent methods
use num_traits::Float;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Which times end up in [`Trajectory::times`].
#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// Every accepted step.
    Steps,
    /// t0, t0 + dt, …, and t1.
    Uniform(f64),
    /// Exactly these times, increasing, inside [t0, t1].
    Times(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub sampling: Sampling,
    /// Keep per-step interpolation data.
    pub dense: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            rtol: 1e-10,
            atol: 1e-12,
            max_step: f64::INFINITY,
            initial_step: None,
            max_steps: 5_000_000,
            sampling: Sampling::Steps,
            dense: false,
        }
    }
}

impl Options {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryMeta {
    pub rtol: f64,
    pub atol: f64,
    pub stats: StepStats,
    /// Caller-supplied identifier of the system that produced the data.
    pub spec_hash: Option<u64>,
}

/// Interpolation data for one accepted step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.rcont;
        for i in 0..out.len() {
            out[i] = r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i])));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub segments: Vec<DenseSegment>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&[f64]> {
        self.states.last().map(|s| s.as_slice())
    }

    pub fn has_dense(&self) -> bool {
        !self.segments.is_empty()
    }

    /// Index of the segment containing `t` (clamped to the covered range).
    pub fn segment_index(&self, t: f64) -> Option<usize> {
        if self.segments.is_empty() {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.t1() < t);
        Some(idx.min(self.segments.len() - 1))
    }

    /// Dense state at `t`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let i = self.segment_index(t).ok_or(Error::MissingDenseOutput)?;
        let seg = &self.segments[i];
        let mut out = vec![0.0; seg.rcont[0].len()];
        seg.eval_into(t, &mut out);
        Ok(out)
    }
}

/// Normalizes γ and removes the normal part of p, for a state laid out as
/// `[γ (n), p (n), …]`.
pub fn project_state(y: &mut [f64], n: usize) -> Result<()> {
    let norm = y[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm >= 0.5) {
        return Err(Error::OffManifold((norm - 1.0).abs()));
    }
    for v in &mut y[..n] {
        *v /= norm;
    }
    let (g, rest) = y.split_at_mut(n);
    let dot: f64 = g.iter().zip(rest.iter()).map(|(a, b)| a * b).sum();
    for i in 0..n {
        rest[i] -= dot * g[i];
    }
    Ok(())
}

/// The controller aims the local error estimate at this fraction of the
/// requested tolerance, so that accumulated global error stays near it.
const TOL_FRACTION: f64 = 0.05;

fn scaled_norm(v: &[f64], y0: &[f64], y1: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = v.len();
    let s: f64 = (0..n)
        .map(|i| {
            let sk = TOL_FRACTION * (atol + rtol * y0[i].abs().max(y1[i].abs()));
            (v[i] / sk).powi(2)
        })
        .sum();
    (s / n as f64).sqrt()
}

fn sample_grid(t0: f64, t1: f64, sampling: &Sampling) -> Result<Vec<f64>> {
    match sampling {
        Sampling::Steps => Ok(vec![t1]),
        Sampling::Uniform(dt) => {
            if !(*dt > 0.0) {
                return Err(Error::InvalidOptions("sample spacing must be positive"));
            }
            let mut out = Vec::new();
            let mut k = 1u64;
            loop {
                let t = t0 + k as f64 * dt;
                if t >= t1 - 1e-12 * dt {
                    break;
                }
                out.push(t);
                k += 1;
            }
            out.push(t1);
            Ok(out)
        }
        Sampling::Times(ts) => {
            let mut out: Vec<f64> = ts.iter().copied().filter(|&t| t > t0).collect();
            if out.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidOptions("sample times must increase"));
            }
            if out.last().is_some_and(|&t| t > t1) {
                return Err(Error::InvalidOptions("sample time beyond the end"));
            }
            if out.is_empty() {
                out.push(t1);
            }
            Ok(out)
        }
    }
}

/// Integrates y' = f(t, y) from `t0` to `t1 > t0`.
///
/// `projection` runs after every accepted step; the derivative at the new
/// point is then recomputed.
pub fn integrate<F>(
    mut rhs: F,
    y0: &[f64],
    t0: f64,
    t1: f64,
    opts: &Options,
    projection: Option<&dyn Fn(&mut [f64]) -> Result<()>>,
) -> Result<Trajectory>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(opts.rtol > 0.0 && opts.atol > 0.0) {
        return Err(Error::InvalidOptions("tolerances must be positive"));
    }
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidOptions("need finite t0 <= t1"));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState(t0));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    if let Some(p) = projection {
        p(&mut y)?;
    }
    let mut traj = Trajectory {
        times: vec![t0],
        states: vec![y.clone()],
        segments: Vec::new(),
        meta: TrajectoryMeta {
            rtol: opts.rtol,
            atol: opts.atol,
            stats: StepStats::default(),
            spec_hash: None,
        },
    };
    if t1 == t0 {
        return Ok(traj);
    }
    let samples = sample_grid(t0, t1, &opts.sampling)?;
    let mut next_sample = 0usize;
    let record_steps = matches!(opts.sampling, Sampling::Steps);

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut yerr = vec![0.0; n];
    let mut stats = StepStats::default();

    rhs(t0, &y, &mut k1);
    stats.evaluations += 1;

    let hmax = opts.max_step.min(t1 - t0);
    let mut h = match opts.initial_step {
        Some(h) if h > 0.0 => h.min(hmax),
        _ => {
            let h = initial_step(&mut rhs, t0, &y, &k1, hmax, opts, &mut ytmp, &mut k2);
            stats.evaluations += 1;
            h
        }
    };

    let mut t = t0;
    let mut facold = 1e-4f64;
    let mut last_rejected = false;
    let mut nonfinite = false;

    while next_sample < samples.len() {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::TooManySteps(opts.max_steps));
        }
        let target = samples[next_sample];
        let mut hit = false;
        let mut hstep = h.min(hmax);
        if t + hstep >= target - 1e-14 * target.abs().max(1.0) {
            hstep = target - t;
            hit = true;
        }
        if hstep < 1e-14 * t.abs().max(1.0) && !hit {
            return Err(if nonfinite {
                Error::NonFiniteState(t)
            } else {
                Error::StepSizeUnderflow { t, h: hstep }
            });
        }

        for i in 0..n {
            ytmp[i] = y[i] + hstep * A21 * k1[i];
        }
        rhs(t + C2 * hstep, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + hstep * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * hstep, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + hstep * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * hstep, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + hstep * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * hstep, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] = y[i]
                + hstep * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + hstep, &ytmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i]
                + hstep * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + hstep, &ynew, &mut k7);
        stats.evaluations += 6;
        for i in 0..n {
            yerr[i] = hstep
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let err = scaled_norm(&yerr, &y, &ynew, opts.rtol, opts.atol);

        if !err.is_finite() || ynew.iter().any(|v| !v.is_finite()) {
            nonfinite = true;
            stats.rejected += 1;
            last_rejected = true;
            h = hstep * 0.1;
            continue;
        }

        let expo1 = 0.2 - 0.04 * 0.75;
        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(0.04) / 0.9).clamp(0.1, 5.0);
            let mut hnew = hstep / fac;
            facold = err.max(1e-4);
            if last_rejected {
                hnew = hnew.min(hstep);
            }
            last_rejected = false;
            nonfinite = false;
            stats.accepted += 1;

            if opts.dense {
                let mut rc5 = vec![0.0; n];
                let mut rc2 = vec![0.0; n];
                let mut rc3 = vec![0.0; n];
                let mut rc4 = vec![0.0; n];
                for i in 0..n {
                    let ydiff = ynew[i] - y[i];
                    let bspl = hstep * k1[i] - ydiff;
                    rc2[i] = ydiff;
                    rc3[i] = bspl;
                    rc4[i] = ydiff - hstep * k7[i] - bspl;
                    rc5[i] = hstep
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                traj.segments.push(DenseSegment {
                    t0: t,
                    h: hstep,
                    rcont: [y.clone(), rc2, rc3, rc4, rc5],
                });
            }

            t = if hit { target } else { t + hstep };
            core::mem::swap(&mut y, &mut ynew);
            if let Some(p) = projection {
                p(&mut y)?;
                rhs(t, &y, &mut k1);
                stats.evaluations += 1;
            } else {
                core::mem::swap(&mut k1, &mut k7);
            }
            if hit {
                next_sample += 1;
                if !record_steps || next_sample == samples.len() {
                    traj.times.push(t);
                    traj.states.push(y.clone());
                }
            } else if record_steps {
                traj.times.push(t);
                traj.states.push(y.clone());
            }
            // a clamped step says little about the natural step size
            h = if hit { hnew.max(h) } else { hnew };
        } else {
            h = hstep / (fac11 / 0.9).min(10.0);
            stats.rejected += 1;
            last_rejected = true;
        }
    }
    traj.meta.stats = stats;
    Ok(traj)
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    hmax: f64,
    opts: &Options,
    ytmp: &mut [f64],
    f1: &mut [f64],
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = opts.atol + opts.rtol * y0[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y0[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 {
        1e-6
    } else {
        (dny / dnf).sqrt() * 0.01
    };
    h = h.min(hmax);
    for i in 0..n {
        ytmp[i] = y0[i] + h * f0[i];
    }
    rhs(t0 + h, ytmp, f1);
    let mut der2 = 0.0;
    for i in 0..n {
        let sk = opts.atol + opts.rtol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(hmax)
}
