//! Dense generic route: sequential quadratic programming with a
//! Goldfarb–Idnani dual active-set kernel.
//!
//! The objective is separable, so its Hessian is diagonal and the quadratic
//! model is exact up to a small curvature floor for linear coordinates.
//! After the change of variables `y = √q ⊙ p` every subproblem is a
//! projection in the Euclidean norm.

use nalgebra::{DMatrix, DVector};

use super::{residual_with, Coord, Coords};
use crate::constraints::{ConstraintSystem, Row};
use crate::data::CAP;
use crate::scalar::Scalar;

const LINEAR_WEIGHT: f64 = 1e-3;

pub(crate) struct GenericOutput<T> {
    pub u0: Vec<T>,
    pub u1: Vec<T>,
    pub mu: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// `min ½|y|² + cᵀy` subject to `n_iᵀ y ≥ b_i`.
struct Qp {
    dim: usize,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

struct QpSolution {
    y: Vec<f64>,
    lambda: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Qp {
    fn solve(&self, c: &[f64]) -> Result<QpSolution, String> {
        let n = self.dim;
        let mut y: Vec<f64> = c.iter().map(|v| -v).collect();
        let norms: Vec<f64> = self.rows.iter().map(|r| dot(r, r).sqrt()).collect();
        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut ignored: Vec<usize> = Vec::new();
        let limit = 50 * (n + self.rows.len()) + 100;
        let mut steps = 0;

        loop {
            let mut pick = None;
            let mut worst = 0.0;
            for (i, row) in self.rows.iter().enumerate() {
                if norms[i] == 0.0 || active.contains(&i) || ignored.contains(&i) {
                    continue;
                }
                let raw = dot(row, &y) - self.rhs[i];
                if raw >= -1e-14 * (1.0 + self.rhs[i].abs()) {
                    continue;
                }
                let s = raw / norms[i];
                if s < worst {
                    worst = s;
                    pick = Some(i);
                }
            }
            let Some(p) = pick else { break };
            let np = &self.rows[p];
            let mut up = 0.0;

            loop {
                steps += 1;
                if steps > limit {
                    return Err("active-set iteration limit reached".into());
                }
                let (z, r) = self.directions(&active, np);
                let zn = dot(&z, np);
                let sp = dot(np, &y) - self.rhs[p];

                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (k, &rk) in r.iter().enumerate() {
                    if rk > 1e-14 {
                        let t = u[k] / rk;
                        if t < t1 {
                            t1 = t;
                            drop = Some(k);
                        }
                    }
                }
                let t2 = if zn > 1e-14 * norms[p] * norms[p] {
                    -sp / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    let ynorm = dot(&y, &y).sqrt();
                    if sp >= -1e-11 * (1.0 + self.rhs[p].abs() + norms[p] * ynorm) {
                        // dependent row violated only by rounding
                        ignored.push(p);
                        break;
                    }
                    return Err("quadratic subproblem is infeasible".into());
                }
                for (uk, rk) in u.iter_mut().zip(&r) {
                    *uk -= t * rk;
                }
                up += t;
                if t2.is_finite() {
                    for (yi, zi) in y.iter_mut().zip(&z) {
                        *yi += t * zi;
                    }
                }
                if t2 <= t1 {
                    active.push(p);
                    u.push(up);
                    break;
                }
                let k = drop.expect("partial step has a blocking constraint");
                active.remove(k);
                u.remove(k);
            }
        }

        let mut lambda = vec![0.0; self.rows.len()];
        for (&i, &ui) in active.iter().zip(&u) {
            lambda[i] = ui.max(0.0);
        }
        Ok(QpSolution { y, lambda })
    }

    /// Primal direction `z = (I − N N⁺) n` and dual direction `r = N⁺ n`.
    fn directions(&self, active: &[usize], np: &[f64]) -> (Vec<f64>, Vec<f64>) {
        if active.is_empty() {
            return (np.to_vec(), Vec::new());
        }
        let k = active.len();
        let nmat = DMatrix::from_fn(self.dim, k, |i, j| self.rows[active[j]][i]);
        let n = DVector::from_column_slice(np);
        let qr = nmat.qr();
        let qt_n = qr.q().transpose() * &n;
        let w = qr
            .r()
            .solve_upper_triangular(&qt_n)
            .unwrap_or_else(|| DVector::zeros(k));
        let z = &n - qr.q() * qt_n;
        (z.iter().copied().collect(), w.iter().copied().collect())
    }
}

/// Problem data in `f64` over the free (non-pinned) coordinates.
struct Layout {
    m: usize,
    coords: Vec<Coord<f64>>,
    /// Positions in the stacked `(u0, u1)` vector.
    free: Vec<usize>,
    /// Crossing rows restricted to the free coordinates.
    crossing: Vec<Vec<f64>>,
}

fn to_f64<T: Scalar>(c: &Coord<T>) -> Coord<f64> {
    match *c {
        Coord::Smooth { d, r, thresh } => Coord::Smooth {
            d: d.as_f64(),
            r: r.as_f64(),
            thresh: thresh.as_f64(),
        },
        Coord::Linear { r } => Coord::Linear { r: r.as_f64() },
        Coord::Pinned => Coord::Pinned,
    }
}

impl Layout {
    fn new<T: Scalar>(coords: &Coords<T>, system: &ConstraintSystem) -> Self {
        let m = coords.m();
        let all: Vec<Coord<f64>> = coords.arms.iter().flatten().map(to_f64).collect();
        let free: Vec<usize> = (0..2 * m).filter(|&i| !matches!(all[i], Coord::Pinned)).collect();
        let dense = system.dense();
        let crossing = system
            .rows()
            .iter()
            .zip(&dense)
            .filter(|(row, _)| !matches!(row, Row::NonPositive { .. }))
            .map(|(_, a)| free.iter().map(|&i| f64::from(a[i])).collect())
            .collect();
        Self {
            m,
            coords: free.iter().map(|&i| all[i]).collect(),
            free,
            crossing,
        }
    }

    fn upper(&self, barrier: bool) -> Vec<f64> {
        self.coords
            .iter()
            .map(|c| if barrier { c.upper() } else { 0.0 })
            .collect()
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.coords.iter().zip(x).map(|(c, &u)| c.objective(u)).sum()
    }

    /// Constraints on a step `p` from `x`, scaled by `1/√q`.
    fn qp(&self, x: &[f64], scale: &[f64], upper: &[f64]) -> Qp {
        let n = self.free.len();
        let mut rows = Vec::with_capacity(self.crossing.len() + 2 * n);
        let mut rhs = Vec::with_capacity(rows.capacity());
        for a in &self.crossing {
            rows.push(a.iter().zip(scale).map(|(ai, si)| ai / si).collect());
            rhs.push(-dot(a, x));
        }
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = -1.0 / scale[i];
            rows.push(e);
            rhs.push(x[i] - upper[i]);
            let mut e = vec![0.0; n];
            e[i] = 1.0 / scale[i];
            rows.push(e);
            rhs.push(-CAP - x[i]);
        }
        Qp { dim: n, rows, rhs }
    }

    fn unpack<T: Scalar>(&self, x: &[f64]) -> (Vec<T>, Vec<T>) {
        let mut full = vec![T::zero(); 2 * self.m];
        for (&i, &v) in self.free.iter().zip(x) {
            full[i] = T::lit(v.min(0.0).max(-CAP));
        }
        let u1 = full.split_off(self.m);
        (full, u1)
    }

    fn pack<T: Scalar>(&self, u0: &[T], u1: &[T]) -> Vec<f64> {
        self.free
            .iter()
            .map(|&i| if i < self.m { u0[i] } else { u1[i - self.m] }.as_f64())
            .collect()
    }

    /// Whether some feasible point keeps every smooth coordinate strictly
    /// negative. The feasible set is a cone up to the lower bound, so this is
    /// checked at unit distance without lower bounds.
    fn barrier_feasible(&self) -> bool {
        let n = self.free.len();
        let mut rows = self.crossing.clone();
        let mut rhs = vec![0.0; rows.len()];
        for (i, c) in self.coords.iter().enumerate() {
            let mut e = vec![0.0; n];
            e[i] = -1.0;
            rows.push(e);
            rhs.push(if matches!(c, Coord::Smooth { .. }) { 1.0 } else { 0.0 });
        }
        Qp { dim: n, rows, rhs }.solve(&vec![0.0; n]).is_ok()
    }

    fn project(&self, target: &[f64], barrier: bool) -> Result<Vec<f64>, String> {
        self.project_within(target, barrier, super::BARRIER)
    }

    /// Projection with every smooth coordinate at most `-margin`.
    fn project_within(&self, target: &[f64], barrier: bool, margin: f64) -> Result<Vec<f64>, String> {
        if barrier && !self.barrier_feasible() {
            return Err("no feasible point keeps event coordinates below zero".into());
        }
        let n = self.free.len();
        let zero = vec![0.0; n];
        let upper: Vec<f64> = self
            .coords
            .iter()
            .map(|c| match c {
                Coord::Smooth { .. } if barrier => -margin,
                _ => 0.0,
            })
            .collect();
        let qp = self.qp(&zero, &vec![1.0; n], &upper);
        let c: Vec<f64> = target.iter().map(|t| -t).collect();
        let sol = qp.solve(&c)?;
        Ok(sol.y)
    }
}

/// Euclidean projection of `(u0, u1)` onto the feasible set; pinned
/// coordinates are set to zero.
pub(crate) fn project_onto_system<T: Scalar>(
    coords: &Coords<T>,
    system: &ConstraintSystem,
    u0: &[T],
    u1: &[T],
    barrier: bool,
) -> Result<(Vec<T>, Vec<T>), String> {
    let layout = Layout::new(coords, system);
    let target = layout.pack(u0, u1);
    let x = layout.project(&target, barrier)?;
    Ok(layout.unpack(&x))
}

pub(crate) fn solve_generic<T: Scalar>(
    coords: &Coords<T>,
    system: &ConstraintSystem,
    km: &[Vec<T>; 2],
    opts: &super::SolverOptions,
) -> Result<GenericOutput<T>, String> {
    let layout = Layout::new(coords, system);
    let m = layout.m;
    let target = layout.pack(&km[0], &km[1]);
    let f64_coords = Coords {
        arms: [
            coords.arms[0].iter().map(to_f64).collect(),
            coords.arms[1].iter().map(to_f64).collect(),
        ],
    };
    let residual = |x: &[f64], mu: &[f64]| {
        let (a, b) = layout.unpack::<f64>(x);
        residual_with(&f64_coords, system, &a, &b, mu)
    };
    let finish = |x: &[f64], mu: &[f64], iterations, converged| {
        let (u0, u1) = layout.unpack(x);
        GenericOutput {
            u0,
            u1,
            mu: mu.iter().map(|&v| T::lit(v)).collect(),
            iterations,
            converged,
        }
    };

    let margin = layout
        .coords
        .iter()
        .zip(&target)
        .filter(|(c, _)| matches!(c, Coord::Smooth { .. }))
        .map(|(_, &t)| 0.5 * -t)
        .fold(1.0, f64::min)
        .max(super::BARRIER);
    let mut x = match layout.project_within(&target, true, margin) {
        Ok(x) => x,
        Err(_) => {
            // every feasible point puts an arm with events at a zero jump
            let mut x = layout.project(&target, false)?;
            for v in x.iter_mut().filter(|v| **v > -super::BARRIER) {
                *v = 0.0;
            }
            return Ok(finish(&x, &vec![0.0; m], 0, true));
        }
    };

    let upper = layout.upper(true);
    let n = x.len();
    let mut mu = vec![0.0; m];
    for it in 0..opts.max_iter {
        let grad: Vec<f64> = layout.coords.iter().zip(&x).map(|(c, &u)| c.gradient(u)).collect();
        let q: Vec<f64> = layout
            .coords
            .iter()
            .zip(&x)
            .zip(grad.iter().zip(&upper))
            .map(|((c, &u), (&g, &hi))| {
                let w = 1.0 + c.at_risk();
                if let Coord::Smooth { .. } = c {
                    return (-c.curvature(u)).max(1e-10 * w);
                }
                // weight at which a lone step would just reach the bound it heads for
                let room = if g < 0.0 { u + CAP } else { hi - u };
                if room > 0.0 {
                    (LINEAR_WEIGHT * w).min((g.abs() / room).max(1e-10 * w))
                } else {
                    LINEAR_WEIGHT * w
                }
            })
            .collect();
        let scale: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
        let qp = layout.qp(&x, &scale, &upper);
        let c: Vec<f64> = grad.iter().zip(&scale).map(|(g, s)| -g / s).collect();
        let sol = qp.solve(&c)?;
        mu.copy_from_slice(&sol.lambda[..m]);

        if residual(&x, &mu) <= opts.tol {
            return Ok(finish(&x, &mu, it, true));
        }

        let p: Vec<f64> = sol.y.iter().zip(&scale).map(|(y, s)| y / s).collect();
        let slope = dot(&grad, &p);
        let f0 = layout.objective(&x);
        let mut alpha = 1.0;
        let mut next = x.clone();
        let mut moved = false;
        for _ in 0..60 {
            for i in 0..n {
                next[i] = (x[i] + alpha * p[i]).min(upper[i]).max(-CAP);
            }
            // rounding slack so that steps below the resolution of f pass
            let noise = 4.0 * f64::EPSILON * (1.0 + f0.abs());
            if layout.objective(&next) >= f0 + 1e-4 * alpha * slope - noise {
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !moved || next == x {
            let converged = residual(&x, &mu) <= opts.tol;
            return Ok(finish(&x, &mu, it + 1, converged));
        }
        x = next;
        if residual(&x, &mu) <= opts.tol {
            return Ok(finish(&x, &mu, it + 1, true));
        }
    }
    let converged = residual(&x, &mu) <= opts.tol;
    Ok(finish(&x, &mu, opts.max_iter, converged))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qp_projection_onto_halfspace() {
        // project (1, 1) onto x + y ≤ 0
        let qp = Qp {
            dim: 2,
            rows: vec![vec![-1.0, -1.0]],
            rhs: vec![0.0],
        };
        let sol = qp.solve(&[-1.0, -1.0]).unwrap();
        assert!(sol.y[0].abs() < 1e-12 && sol.y[1].abs() < 1e-12);
        assert!((sol.lambda[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn qp_detects_infeasibility() {
        let qp = Qp {
            dim: 1,
            rows: vec![vec![1.0], vec![-1.0]],
            rhs: vec![1.0, 0.0],
        };
        assert!(qp.solve(&[0.0]).is_err());
    }

    #[test]
    fn qp_box_and_coupling() {
        // min ½|y − (2, −1)|² s.t. y0 ≤ y1, y ≥ −3
        let qp = Qp {
            dim: 2,
            rows: vec![vec![-1.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]],
            rhs: vec![0.0, -3.0, -3.0],
        };
        let sol = qp.solve(&[-2.0, 1.0]).unwrap();
        assert!((sol.y[0] - 0.5).abs() < 1e-12 && (sol.y[1] - 0.5).abs() < 1e-12);
        assert!((sol.lambda[0] - 1.5).abs() < 1e-12);
    }
}
