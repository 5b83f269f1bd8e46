//! Box-constrained gradient ascent used to maximize the log marginal
//! likelihood.
//!
//! Each iteration moves along a quasi-Newton (BFGS) ascent direction, falling
//! back to the plain gradient whenever that direction stops being an ascent
//! direction, with an Armijo backtracking line search. Parameters outside the
//! `free` mask never move.

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// Stop once an accepted step changes the objective by less than
    /// `tol * max(1, |f|)`.
    pub tol: f64,
    /// Largest change of any coordinate in one step.
    pub max_step: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            max_iter: 200,
            tol: 1e-6,
            max_step: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AscentOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
}

pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn clamp(&self, theta: &mut [f64], free: &[bool]) {
        for (i, t) in theta.iter_mut().enumerate() {
            if free[i] {
                *t = t.clamp(self.lower[i], self.upper[i]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximizes `objective` starting from `start`.
///
/// `objective` returns the value and its gradient; an `Err` at a trial point
/// is treated as a rejected step. An `Err` at the start point is returned.
pub fn maximize<F>(
    mut objective: F,
    start: &[f64],
    free: &[bool],
    bounds: &Bounds,
    opts: &AscentOptions,
) -> Result<AscentOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = start.len();
    let mut x = start.to_vec();
    bounds.clamp(&mut x, free);
    let (mut f, mut g) = objective(&x)?;
    let initial_value = f;
    let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
    let m = idx.len();
    // inverse Hessian approximation of -f over the free coordinates
    let mut h = identity(m);
    let mut iterations = 0;

    // projected gradient: zero components that push against an active bound
    let project = |x: &[f64], g: &[f64]| -> Vec<f64> {
        idx.iter()
            .map(|&i| {
                let gi = g[i];
                if (x[i] <= bounds.lower[i] && gi < 0.0) || (x[i] >= bounds.upper[i] && gi > 0.0) {
                    0.0
                } else {
                    gi
                }
            })
            .collect()
    };

    // true while `h` is still the (unscaled) identity
    let mut fresh = true;
    while iterations < opts.max_iter && m > 0 {
        iterations += 1;
        let gp = project(&x, &g);
        if gp.iter().all(|v| *v == 0.0) {
            break;
        }
        let mut d = mat_vec(&h, &gp);
        if dot(&d, &gp) <= 0.0 || d.iter().any(|v| !v.is_finite()) {
            h = identity(m);
            fresh = true;
            d = gp.clone();
        }

        let gradient_step = fresh;
        let Some((xn, fnew, gn, s)) = line_search(&mut objective, &x, f, &gp, &d, &idx, free, bounds, opts) else {
            if gradient_step {
                break;
            }
            // the quasi-Newton model went stale: retry along the gradient
            h = identity(m);
            fresh = true;
            continue;
        };
        let yv: Vec<f64> = idx.iter().map(|&i| -(gn[i] - g[i])).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if fresh {
                let scale = sy / dot(&yv, &yv);
                for (k, row) in h.iter_mut().enumerate() {
                    row[k] = scale;
                }
                fresh = false;
            }
            bfgs_update(&mut h, &s, &yv, sy);
        }
        let delta = fnew - f;
        x = xn;
        f = fnew;
        g = gn;
        if delta.abs() < opts.tol * f.abs().max(1.0) {
            if gradient_step {
                break;
            }
            h = identity(m);
            fresh = true;
        }
    }

    Ok(AscentOutcome {
        theta: x,
        value: f,
        initial_value,
        iterations,
    })
}

type Accepted = (Vec<f64>, f64, Vec<f64>, Vec<f64>);

/// Armijo backtracking along `d`; returns the accepted point, its value and
/// gradient, and the step taken in the free coordinates.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f: f64,
    gp: &[f64],
    d: &[f64],
    idx: &[usize],
    free: &[bool],
    bounds: &Bounds,
    opts: &AscentOptions,
) -> Option<Accepted>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let largest = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut step = if largest > opts.max_step {
        opts.max_step / largest
    } else {
        1.0
    };
    for _ in 0..20 {
        let mut trial = x.to_vec();
        for (k, &i) in idx.iter().enumerate() {
            trial[i] += step * d[k];
        }
        bounds.clamp(&mut trial, free);
        let moved: Vec<f64> = idx.iter().map(|&i| trial[i] - x[i]).collect();
        if moved.iter().all(|v| *v == 0.0) {
            return None;
        }
        if let Ok((ft, gt)) = objective(&trial) {
            let gain = dot(gp, &moved);
            if ft.is_finite() && ft >= f + 1e-4 * gain && ft > f {
                return Some((trial, ft, gt, moved));
            }
        }
        step *= 0.5;
    }
    None
}

fn identity(m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|row| dot(row, v)).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..m {
        for j in 0..m {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wide(n: usize) -> Bounds {
        Bounds {
            lower: vec![-100.0; n],
            upper: vec![100.0; n],
        }
    }

    #[test]
    fn finds_maximum_of_concave_quadratic() {
        let obj = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (t[0] - 1.0, t[1] + 2.0);
            Ok((-(a * a) - 10.0 * b * b, vec![-2.0 * a, -20.0 * b]))
        };
        let opts = AscentOptions {
            tol: 1e-14,
            ..Default::default()
        };
        let out = maximize(obj, &[5.0, 5.0], &[true, true], &wide(2), &opts).unwrap();
        assert!((out.theta[0] - 1.0).abs() < 1e-5, "{:?}", out.theta);
        assert!((out.theta[1] + 2.0).abs() < 1e-5);
        assert!(out.value >= out.initial_value);
    }

    #[test]
    fn respects_bounds_and_frozen_coordinates() {
        let obj = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((t[0] + t[1], vec![1.0, 1.0]))
        };
        let bounds = Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![3.0, 3.0],
        };
        let out = maximize(obj, &[0.5, 0.5], &[true, false], &bounds, &AscentOptions::default())
            .unwrap();
        assert_eq!(out.theta, vec![3.0, 0.5]);
    }

    #[test]
    fn failed_trial_points_are_rejected() {
        let obj = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
            if t[0] > 1.0 {
                return Err(crate::Error::NonFinite("test"));
            }
            Ok((t[0], vec![1.0]))
        };
        let out = maximize(obj, &[0.0], &[true], &wide(1), &AscentOptions::default()).unwrap();
        assert!(out.theta[0] <= 1.0 && out.theta[0] > 0.9);
    }
}
