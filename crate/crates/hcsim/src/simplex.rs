//! Exact linear programming over the rationals.
//!
//! A dense two-phase tableau simplex with Bland's rule: slow compared to a
//! floating-point solver, immune to cycling, and exact, which is what the
//! share and bin LPs need (their optima feed tolerance checks at 1e-9 and
//! the polytope cross-checks expect exact agreement). Problem sizes here
//! are a handful of variables and constraints, so performance is a
//! non-issue.
//!
//! All variables are implicitly nonnegative; the objective is always
//! minimized. [`LinearProgram::solve_lex_min`] resolves degenerate optima
//! to the lexicographically smallest optimal point under a caller-chosen
//! variable order, which is how every consumer obtains deterministic
//! witnesses.

use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};
use crate::ratio::Rat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<Rat>,
    pub cmp: Cmp,
    pub rhs: Rat,
}

impl Constraint {
    pub fn new(coeffs: Vec<Rat>, cmp: Cmp, rhs: Rat) -> Self {
        Constraint { coeffs, cmp, rhs }
    }
}

/// min `objective . x` subject to the constraints and `x >= 0`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<Rat>,
    pub constraints: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LpSolution {
    pub value: Rat,
    pub point: Vec<Rat>,
}

struct Tableau {
    /// `rows x (ncols + 1)`; the last column is the right-hand side.
    a: Vec<Vec<Rat>>,
    basis: Vec<usize>,
    ncols: usize,
    /// Columns the entering rule must skip (artificials in phase 2).
    banned: Vec<bool>,
}

impl Tableau {
    fn pivot(&mut self, row: usize, col: usize) {
        let inv = self.a[row][col].recip();
        for c in 0..=self.ncols {
            self.a[row][c] = &self.a[row][c] * &inv;
        }
        for r in 0..self.a.len() {
            if r != row && !self.a[r][col].is_zero() {
                let factor = self.a[r][col].clone();
                for c in 0..=self.ncols {
                    let delta = &factor * &self.a[row][c];
                    self.a[r][c] = &self.a[r][c] - delta;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Reduced costs for objective `c` over the current basis.
    fn reduced_costs(&self, c: &[Rat]) -> Vec<Rat> {
        let mut r = c.to_vec();
        for (row, &b) in self.basis.iter().enumerate() {
            if c[b].is_zero() {
                continue;
            }
            let cb = c[b].clone();
            for j in 0..self.ncols {
                let delta = &cb * &self.a[row][j];
                r[j] = &r[j] - delta;
            }
        }
        r
    }

    fn objective_value(&self, c: &[Rat]) -> Rat {
        let mut v = Rat::zero();
        for (row, &b) in self.basis.iter().enumerate() {
            if !c[b].is_zero() {
                v += &c[b] * &self.a[row][self.ncols];
            }
        }
        v
    }

    /// Runs simplex to optimality for objective `c`. Returns false when the
    /// problem is unbounded below.
    fn optimize(&mut self, c: &[Rat]) -> bool {
        loop {
            let costs = self.reduced_costs(c);
            // Bland: smallest-index entering column with negative cost.
            let entering = (0..self.ncols)
                .find(|&j| !self.banned[j] && costs[j].is_negative());
            let Some(col) = entering else {
                return true;
            };
            // Bland ratio test: minimum rhs/coeff over positive coeffs,
            // ties to the smallest basis index.
            let mut best: Option<(usize, Rat)> = None;
            for row in 0..self.a.len() {
                if self.a[row][col].is_positive() {
                    let ratio = &self.a[row][self.ncols] / &self.a[row][col];
                    match &best {
                        None => best = Some((row, ratio)),
                        Some((brow, bratio)) => {
                            if ratio < *bratio
                                || (ratio == *bratio && self.basis[row] < self.basis[*brow])
                            {
                                best = Some((row, ratio));
                            }
                        }
                    }
                }
            }
            match best {
                Some((row, _)) => self.pivot(row, col),
                None => return false,
            }
        }
    }
}

impl LinearProgram {
    fn build_tableau(&self) -> (Tableau, usize) {
        let n = self.num_vars;
        let m = self.constraints.len();
        // Column layout: structural vars, then one slack/surplus per
        // inequality, then one artificial per row that needs it.
        let mut num_slack = 0;
        for c in &self.constraints {
            if c.cmp != Cmp::Eq {
                num_slack += 1;
            }
        }
        let ncols = n + num_slack + m;
        let art_base = n + num_slack;
        let mut a = vec![vec![Rat::zero(); ncols + 1]; m];
        let mut basis = vec![0usize; m];
        let mut slack_idx = n;
        let mut num_art = 0;
        for (row, con) in self.constraints.iter().enumerate() {
            debug_assert_eq!(con.coeffs.len(), n);
            let flip = con.rhs.is_negative();
            let (cmp, sign) = if flip {
                let cmp = match con.cmp {
                    Cmp::Le => Cmp::Ge,
                    Cmp::Ge => Cmp::Le,
                    Cmp::Eq => Cmp::Eq,
                };
                (cmp, -Rat::one())
            } else {
                (con.cmp, Rat::one())
            };
            for j in 0..n {
                a[row][j] = &sign * &con.coeffs[j];
            }
            a[row][ncols] = &sign * &con.rhs;
            match cmp {
                Cmp::Le => {
                    a[row][slack_idx] = Rat::one();
                    basis[row] = slack_idx;
                    slack_idx += 1;
                }
                Cmp::Ge => {
                    a[row][slack_idx] = -Rat::one();
                    slack_idx += 1;
                    let art = art_base + num_art;
                    num_art += 1;
                    a[row][art] = Rat::one();
                    basis[row] = art;
                }
                Cmp::Eq => {
                    let art = art_base + num_art;
                    num_art += 1;
                    a[row][art] = Rat::one();
                    basis[row] = art;
                }
            }
        }
        let t = Tableau {
            a,
            basis,
            ncols,
            banned: vec![false; ncols],
        };
        (t, art_base)
    }

    fn extract_point(&self, t: &Tableau) -> Vec<Rat> {
        let mut x = vec![Rat::zero(); self.num_vars];
        for (row, &b) in t.basis.iter().enumerate() {
            if b < self.num_vars {
                x[b] = t.a[row][t.ncols].clone();
            }
        }
        x
    }

    /// Minimizes the objective. The returned point is *an* optimal basic
    /// solution; use [`solve_lex_min`] when the choice must be canonical.
    ///
    /// [`solve_lex_min`]: LinearProgram::solve_lex_min
    pub fn solve(&self) -> Result<LpSolution> {
        let (mut t, art_base) = self.build_tableau();

        // Phase 1: drive the artificial variables to zero.
        if art_base < t.ncols {
            let mut phase1 = vec![Rat::zero(); t.ncols];
            for c in phase1.iter_mut().skip(art_base) {
                *c = Rat::one();
            }
            let bounded = t.optimize(&phase1);
            debug_assert!(bounded, "phase-1 objective is bounded below by zero");
            if !t.objective_value(&phase1).is_zero() {
                return Err(Error::LpInfeasible);
            }
            // Pivot lingering artificials out of the basis; rows where no
            // structural column is available are redundant and harmless.
            for row in 0..t.a.len() {
                if t.basis[row] >= art_base {
                    if let Some(col) = (0..art_base).find(|&j| !t.a[row][j].is_zero()) {
                        t.pivot(row, col);
                    }
                }
            }
            for j in art_base..t.ncols {
                t.banned[j] = true;
            }
        }

        // Phase 2.
        let mut c = vec![Rat::zero(); t.ncols];
        c[..self.num_vars].clone_from_slice(&self.objective);
        if !t.optimize(&c) {
            return Err(Error::LpUnbounded);
        }
        Ok(LpSolution {
            value: t.objective_value(&c),
            point: self.extract_point(&t),
        })
    }

    /// Minimizes the objective, then resolves ties by lexicographically
    /// minimizing the variables listed in `tie_order` (in that order) over
    /// the optimal face. The result is the unique lex-min optimal point,
    /// independent of pivoting history.
    pub fn solve_lex_min(&self, tie_order: &[usize]) -> Result<LpSolution> {
        let base = self.solve()?;
        let mut lp = self.clone();
        lp.constraints.push(Constraint::new(
            self.objective.clone(),
            Cmp::Eq,
            base.value.clone(),
        ));
        let mut point = base.point;
        for &i in tie_order {
            debug_assert!(i < self.num_vars);
            let mut obj = vec![Rat::zero(); self.num_vars];
            obj[i] = Rat::one();
            lp.objective = obj.clone();
            let step = lp.solve()?;
            point = step.point;
            lp.constraints
                .push(Constraint::new(obj, Cmp::Eq, step.value.clone()));
        }
        Ok(LpSolution {
            value: base.value,
            point,
        })
    }

    /// Feasibility check: is there any `x >= 0` satisfying the constraints?
    pub fn is_feasible(&self) -> bool {
        let mut lp = self.clone();
        lp.objective = vec![Rat::zero(); self.num_vars];
        lp.solve().is_ok()
    }
}
