//! Dense two-phase primal simplex with bounded variables.
//!
//! Sized for desk-scale relaxations (a few hundred rows); the tableau is
//! stored densely. Every variable
//! must have finite bounds; rows may be `≤`, `=` or `≥`.

use std::time::Instant;

use super::{Constraint, MilpError, Relation};

const PIVOT_TOL: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-7;
const MAX_ITERATIONS: usize = 200_000;
/// Consecutive degenerate pivots before switching to Bland's rule.
const DEGENERATE_RUN: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum At {
    Lower,
    Upper,
    Basic(usize),
}

struct Tableau {
    rows: usize,
    cols: usize,
    t: Vec<f64>,
    xb: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<At>,
    ub: Vec<f64>,
    d: Vec<f64>,
    iterations: usize,
    deadline: Option<Instant>,
}

impl Tableau {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.cols + j]
    }

    fn price(&mut self, cost: &[f64]) {
        self.d.copy_from_slice(cost);
        for i in 0..self.rows {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.cols..(i + 1) * self.cols];
                for (d, &a) in self.d.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
    }

    fn entering(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..self.cols {
            if self.ub[j] <= 0.0 {
                continue;
            }
            let gain = match self.state[j] {
                At::Lower if self.d[j] < -COST_TOL => -self.d[j],
                At::Upper if self.d[j] > COST_TOL => self.d[j],
                _ => continue,
            };
            if bland {
                return Some(j);
            }
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((j, gain));
            }
        }
        best.map(|(j, _)| j)
    }

    /// Runs simplex iterations until optimal for the current prices.
    fn optimize(&mut self) -> Result<(), MilpError> {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let Some(j) = self.entering(bland) else {
                return Ok(());
            };
            self.iterations += 1;
            if self.iterations > MAX_ITERATIONS {
                return Err(MilpError::LpIterationLimit);
            }
            if self.iterations % 16 == 0 && self.deadline.is_some_and(|d| Instant::now() >= d) {
                return Err(MilpError::DeadlineReached);
            }
            let delta = if self.state[j] == At::Lower { 1.0 } else { -1.0 };

            // ratio test; `None` row means a bound flip of the entering var
            let mut step = self.ub[j];
            let mut leave: Option<(usize, bool)> = None;
            for i in 0..self.rows {
                let alpha = delta * self.at(i, j);
                let (limit, to_upper) = if alpha > PIVOT_TOL {
                    (self.xb[i].max(0.0) / alpha, false)
                } else if alpha < -PIVOT_TOL {
                    let u = self.ub[self.basis[i]];
                    if u.is_infinite() {
                        continue;
                    }
                    ((u - self.xb[i]).max(0.0) / -alpha, true)
                } else {
                    continue;
                };
                let take = if limit < step - 1e-12 {
                    true
                } else if let Some((r, _)) = leave {
                    limit <= step + 1e-12
                        && if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            alpha.abs() > self.at(r, j).abs()
                        }
                } else {
                    false
                };
                if take {
                    step = limit.min(step);
                    leave = Some((i, to_upper));
                }
            }
            if step.is_infinite() {
                return Err(MilpError::Unbounded);
            }
            degenerate = if step < 1e-12 { degenerate + 1 } else { 0 };

            for i in 0..self.rows {
                let a = self.at(i, j);
                if a != 0.0 {
                    self.xb[i] -= delta * a * step;
                }
            }
            match leave {
                None => {
                    self.state[j] = if self.state[j] == At::Lower {
                        At::Upper
                    } else {
                        At::Lower
                    };
                }
                Some((r, to_upper)) => {
                    let entering_value = if self.state[j] == At::Lower {
                        step
                    } else {
                        self.ub[j] - step
                    };
                    let out = self.basis[r];
                    self.state[out] = if to_upper { At::Upper } else { At::Lower };
                    self.pivot(r, j);
                    self.xb[r] = entering_value;
                    self.basis[r] = j;
                    self.state[j] = At::Basic(r);
                }
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let cols = self.cols;
        let p = self.at(r, j);
        let (before, rest) = self.t.split_at_mut(r * cols);
        let (row, after) = rest.split_at_mut(cols);
        row.iter_mut().for_each(|v| *v /= p);
        row[j] = 1.0;
        let update = |other: &mut [f64]| {
            for chunk in other.chunks_mut(cols) {
                let f = chunk[j];
                if f != 0.0 {
                    for (v, &rv) in chunk.iter_mut().zip(row.iter()) {
                        *v -= f * rv;
                    }
                    chunk[j] = 0.0;
                }
            }
        };
        update(before);
        update(after);
        let f = self.d[j];
        if f != 0.0 {
            for (v, &rv) in self.d.iter_mut().zip(row.iter()) {
                *v -= f * rv;
            }
            self.d[j] = 0.0;
        }
    }

    fn value_of(&self, j: usize) -> f64 {
        match self.state[j] {
            At::Lower => 0.0,
            At::Upper => self.ub[j],
            At::Basic(r) => self.xb[r],
        }
    }
}

/// Minimizes `cost·x` subject to `rows` and `lb ≤ x ≤ ub`.
pub fn solve_lp<'a>(
    cost: &[f64],
    rows: impl IntoIterator<Item = &'a Constraint>,
    lb: &[f64],
    ub: &[f64],
) -> Result<LpOutcome, MilpError> {
    solve_lp_until(cost, rows, lb, ub, None)
}

/// [`solve_lp`] that gives up with [`MilpError::DeadlineReached`] once
/// `deadline` passes.
pub fn solve_lp_until<'a>(
    cost: &[f64],
    rows: impl IntoIterator<Item = &'a Constraint>,
    lb: &[f64],
    ub: &[f64],
    deadline: Option<Instant>,
) -> Result<LpOutcome, MilpError> {
    let n = cost.len();
    debug_assert!(lb.len() == n && ub.len() == n);
    if lb.iter().zip(ub).any(|(l, u)| l > u) {
        return Ok(LpOutcome::Infeasible);
    }

    // shift to lb = 0 and turn ≥ rows into ≤ rows
    let mut dense: Vec<(Vec<f64>, bool, f64)> = Vec::new();
    for c in rows {
        let mut a = vec![0.0; n];
        for &(v, coef) in &c.coeffs {
            a[v] += coef;
        }
        let sign = if c.relation == Relation::Ge { -1.0 } else { 1.0 };
        let shift: f64 = a.iter().zip(lb).map(|(x, l)| x * l).sum();
        let rhs = sign * (c.rhs - shift);
        a.iter_mut().for_each(|x| *x *= sign);
        dense.push((a, c.relation == Relation::Eq, rhs));
    }
    let m = dense.len();
    let needs_art: Vec<bool> = dense.iter().map(|(_, eq, b)| *eq || *b < 0.0).collect();
    let arts = needs_art.iter().filter(|&&x| x).count();
    let cols = n + m + arts;

    let mut t = vec![0.0; m * cols];
    let mut ubv = vec![0.0; cols];
    for j in 0..n {
        ubv[j] = ub[j] - lb[j];
    }
    let mut xb = vec![0.0; m];
    let mut basis = vec![0; m];
    let mut state = vec![At::Lower; cols];
    let mut art = n + m;
    for (i, (a, eq, b)) in dense.into_iter().enumerate() {
        let flip = if b < 0.0 { -1.0 } else { 1.0 };
        let row = &mut t[i * cols..(i + 1) * cols];
        for j in 0..n {
            row[j] = flip * a[j];
        }
        row[n + i] = flip;
        ubv[n + i] = if eq { 0.0 } else { f64::INFINITY };
        xb[i] = flip * b;
        if needs_art[i] {
            row[art] = 1.0;
            ubv[art] = f64::INFINITY;
            basis[i] = art;
            state[art] = At::Basic(i);
            art += 1;
        } else {
            basis[i] = n + i;
            state[n + i] = At::Basic(i);
        }
    }

    let mut tab = Tableau {
        rows: m,
        cols,
        t,
        xb,
        basis,
        state,
        ub: ubv,
        d: vec![0.0; cols],
        iterations: 0,
        deadline,
    };

    if arts > 0 {
        let mut phase1 = vec![0.0; cols];
        phase1[n + m..].iter_mut().for_each(|c| *c = 1.0);
        tab.price(&phase1);
        tab.optimize()?;
        let infeas: f64 = (n + m..cols).map(|j| tab.value_of(j)).sum();
        if infeas > FEAS_TOL {
            return Ok(LpOutcome::Infeasible);
        }
        for j in n + m..cols {
            tab.ub[j] = 0.0;
            if let At::Basic(r) = tab.state[j] {
                tab.xb[r] = 0.0;
            }
        }
    }

    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(cost);
    tab.price(&phase2);
    tab.optimize()?;

    let x: Vec<f64> = (0..n)
        .map(|j| (lb[j] + tab.value_of(j)).clamp(lb[j], ub[j]))
        .collect();
    let value = cost.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpOutcome::Optimal { x, value })
}
