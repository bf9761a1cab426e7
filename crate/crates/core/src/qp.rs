//! Dense convex QP solver for the whole-body controller:
//!
//! ```text
//! min ½ xᵀG x + gᵀx   s.t.  C_E x + c_E = 0,  C_I x + c_I ≤ 0
//! ```
//!
//! Equalities are eliminated through a null-space basis; the remaining
//! inequality problem is solved with a primal active-set method. A feasible
//! starting point, when the origin of the reduced space is infeasible, comes
//! from a least-distance program solved by Lawson–Hanson NNLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const REG_THRESHOLD: f64 = 1e-12;
const REG_SHIFT: f64 = 1e-9;
const FEAS_TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_vector: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_vector: DVector<f64>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let m = gradient.len();
        Self {
            hessian,
            gradient,
            eq_matrix: DMatrix::zeros(0, m),
            eq_vector: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, m),
            ineq_vector: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, matrix: DMatrix<f64>, vector: DVector<f64>) -> Self {
        self.eq_matrix = matrix;
        self.eq_vector = vector;
        self
    }

    pub fn with_inequalities(mut self, matrix: DMatrix<f64>, vector: DVector<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_vector = vector;
        self
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    fn check(&self) -> Result<()> {
        let m = self.dim();
        let bad = self.hessian.shape() != (m, m)
            || self.eq_matrix.ncols() != m
            || self.eq_matrix.nrows() != self.eq_vector.len()
            || self.ineq_matrix.ncols() != m
            || self.ineq_matrix.nrows() != self.ineq_vector.len();
        if bad {
            return Err(Error::Precondition("inconsistent QP dimensions".into()));
        }
        if self.eq_matrix.nrows() > m {
            return Err(Error::Precondition("more equality constraints than variables".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Active inequality indices, in the order they entered.
    pub active_set: Vec<usize>,
    /// Inequality multipliers (zero for inactive rows).
    pub multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    /// Scaled max of stationarity, primal, dual and complementarity violations.
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Default)]
pub struct QpOptions {
    pub max_iter: Option<usize>,
    /// Initial working set, e.g. the active set of the previous control tick.
    pub warm_start: Option<Vec<usize>>,
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &QpOptions::default())
}

pub fn solve_qp_with(problem: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    problem.check()?;
    let m = problem.dim();
    let k = problem.ineq_vector.len();
    let hessian = regularized_hessian(&problem.hessian)?;

    let eq = EqualityElimination::new(&problem.eq_matrix, &problem.eq_vector);
    let Some(eq) = eq else {
        return Ok(QpSolution {
            x: DVector::zeros(m),
            status: QpStatus::Infeasible,
            active_set: Vec::new(),
            multipliers: DVector::zeros(k),
            eq_multipliers: DVector::zeros(problem.eq_vector.len()),
            kkt_residual: f64::INFINITY,
            iterations: 0,
        });
    };

    let z = &eq.basis;
    let red_h = z.transpose() * &hessian * z;
    let red_f = z.transpose() * (&hessian * &eq.particular + &problem.gradient);
    let red_c = &problem.ineq_matrix * z;
    let red_d = &problem.ineq_matrix * &eq.particular + &problem.ineq_vector;

    let max_iter = opts.max_iter.unwrap_or(10 * (m + k) + 50);
    let reduced = ReducedQp {
        h: &red_h,
        f: &red_f,
        c: &red_c,
        d: &red_d,
    };
    let outcome = reduced.solve(opts.warm_start.as_deref(), max_iter);

    let x = &eq.particular + z * &outcome.y;
    let mut multipliers = DVector::zeros(k);
    for (&i, &l) in outcome.working.iter().zip(outcome.lambda.iter()) {
        multipliers[i] = l;
    }
    let partial_stationarity = &hessian * &x + &problem.gradient + problem.ineq_matrix.transpose() * &multipliers;
    let eq_multipliers = eq.multipliers(&partial_stationarity);

    let kkt_residual = kkt_residual(problem, &hessian, &x, &multipliers, &eq_multipliers);
    let status = outcome.status;
    let active_set = if status == QpStatus::Optimal {
        outcome.working.clone()
    } else {
        Vec::new()
    };
    Ok(QpSolution {
        x,
        status,
        active_set,
        multipliers,
        eq_multipliers,
        kkt_residual,
        iterations: outcome.iterations,
    })
}

fn regularized_hessian(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut h = (g + g.transpose()) * 0.5;
    let m = h.nrows();
    if m == 0 {
        return Ok(h);
    }
    let min_eig = h.clone().symmetric_eigenvalues().min();
    let scale = h.amax().max(1.0);
    if min_eig < -1e-8 * scale {
        return Err(Error::Precondition(format!(
            "QP Hessian is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    if min_eig < REG_THRESHOLD {
        for i in 0..m {
            h[(i, i)] += REG_SHIFT;
        }
    }
    Ok(h)
}

/// `x = particular + basis · y` parametrizes the equality-feasible set.
struct EqualityElimination {
    particular: DVector<f64>,
    basis: DMatrix<f64>,
    /// Pseudo-inverse of `C_Eᵀ`, for recovering equality multipliers.
    pinv_t: DMatrix<f64>,
}

impl EqualityElimination {
    /// `None` when the equality system is inconsistent.
    fn new(ce: &DMatrix<f64>, cv: &DVector<f64>) -> Option<Self> {
        let (e, m) = ce.shape();
        if e == 0 {
            return Some(Self {
                particular: DVector::zeros(m),
                basis: DMatrix::identity(m, m),
                pinv_t: DMatrix::zeros(0, m),
            });
        }
        // pad to square so the SVD returns a full right basis
        let mut padded = DMatrix::zeros(m, m);
        padded.view_mut((0, 0), (e, m)).copy_from(ce);
        let svd = padded.svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested Vᵀ");
        let smax = svd.singular_values.max();
        let tol = 1e-12 * smax.max(1.0) * m as f64;

        let mut particular = DVector::zeros(m);
        let mut pinv_t = DMatrix::zeros(e, m);
        let mut null_cols = Vec::new();
        for (j, &sigma) in svd.singular_values.iter().enumerate() {
            let v = vt.row(j).transpose();
            if sigma > tol {
                let uj = u.column(j).rows(0, e).into_owned();
                particular -= &v * (uj.dot(cv) / sigma);
                // (C_Eᵀ)⁺ = U Σ⁻¹ Vᵀ restricted to the range
                pinv_t += &uj * v.transpose() / sigma;
            } else {
                null_cols.push(v);
            }
        }
        let residual = ce * &particular + cv;
        if residual.amax() > FEAS_TOL * (1.0 + cv.amax()) {
            return None;
        }
        let basis = if null_cols.is_empty() {
            DMatrix::zeros(m, 0)
        } else {
            DMatrix::from_columns(&null_cols)
        };
        Some(Self {
            particular,
            basis,
            pinv_t,
        })
    }

    fn multipliers(&self, partial_stationarity: &DVector<f64>) -> DVector<f64> {
        -(&self.pinv_t * partial_stationarity)
    }
}

struct ReducedQp<'a> {
    h: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
    c: &'a DMatrix<f64>,
    d: &'a DVector<f64>,
}

struct Outcome {
    y: DVector<f64>,
    working: Vec<usize>,
    lambda: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

impl ReducedQp<'_> {
    fn dim(&self) -> usize {
        self.f.len()
    }

    fn violation(&self, y: &DVector<f64>) -> f64 {
        if self.d.is_empty() {
            return 0.0;
        }
        (self.c * y + self.d).max().max(0.0)
    }

    fn solve(&self, warm: Option<&[usize]>, max_iter: usize) -> Outcome {
        let p = self.dim();
        if p == 0 {
            let y = DVector::zeros(0);
            let status = if self.violation(&y) <= FEAS_TOL * (1.0 + self.d.amax()) {
                QpStatus::Optimal
            } else {
                QpStatus::Infeasible
            };
            return Outcome {
                y,
                working: Vec::new(),
                lambda: Vec::new(),
                status,
                iterations: 0,
            };
        }

        let start = warm
            .and_then(|w| self.warm_start(w))
            .or_else(|| self.feasible_start().map(|y| (y, Vec::new())));
        let Some((y, working)) = start else {
            return Outcome {
                y: DVector::zeros(p),
                working: Vec::new(),
                lambda: Vec::new(),
                status: QpStatus::Infeasible,
                iterations: 0,
            };
        };
        self.active_set(y, working, max_iter)
    }

    /// Solves the equality QP with the guessed working set active; accepted only if feasible.
    fn warm_start(&self, guess: &[usize]) -> Option<(DVector<f64>, Vec<usize>)> {
        let k = self.d.len();
        let mut working: Vec<usize> = Vec::new();
        for &i in guess {
            if i < k && !working.contains(&i) && working.len() < self.dim() && self.independent(&working, i) {
                working.push(i);
            }
        }
        let y0 = DVector::zeros(self.dim());
        let (step, _) = self.kkt_step(&y0, &working)?;
        let y = step;
        if self.violation(&y) <= 1e-10 * (1.0 + self.d.amax()) {
            Some((y, working))
        } else {
            None
        }
    }

    fn feasible_start(&self) -> Option<DVector<f64>> {
        let p = self.dim();
        let y0 = DVector::zeros(p);
        if self.violation(&y0) == 0.0 {
            return Some(y0);
        }
        let y = least_distance_point(self.c, self.d)?;
        if self.violation(&y) <= FEAS_TOL * (1.0 + self.d.amax()) {
            Some(y)
        } else {
            None
        }
    }

    fn independent(&self, working: &[usize], candidate: usize) -> bool {
        let rows: Vec<_> = working
            .iter()
            .chain(std::iter::once(&candidate))
            .map(|&i| self.c.row(i).into_owned())
            .collect();
        let stacked = DMatrix::from_rows(&rows);
        let sv = stacked.singular_values();
        let scale = sv.max();
        scale > 0.0 && sv.min() > 1e-10 * scale
    }

    /// Solves `[H A_Wᵀ; A_W 0][s; λ] = [−(H y + f); −(A_W y + d_W)]`.
    fn kkt_step(&self, y: &DVector<f64>, working: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
        let p = self.dim();
        let w = working.len();
        let mut kkt = DMatrix::zeros(p + w, p + w);
        let mut rhs = DVector::zeros(p + w);
        kkt.view_mut((0, 0), (p, p)).copy_from(self.h);
        let grad = self.h * y + self.f;
        rhs.rows_mut(0, p).copy_from(&(-grad));
        for (r, &i) in working.iter().enumerate() {
            let row = self.c.row(i);
            kkt.view_mut((p + r, 0), (1, p)).copy_from(&row);
            kkt.view_mut((0, p + r), (p, 1)).copy_from(&row.transpose());
            rhs[p + r] = -(row.dot(&y.transpose()) + self.d[i]);
        }
        let sol = kkt.lu().solve(&rhs)?;
        let step = y + sol.rows(0, p);
        let lambda = sol.rows(p, w).iter().copied().collect();
        Some((step, lambda))
    }

    fn active_set(&self, mut y: DVector<f64>, mut working: Vec<usize>, max_iter: usize) -> Outcome {
        let k = self.d.len();
        let mut at_subproblem_min = false;
        let mut iterations = 0;
        loop {
            if iterations >= max_iter {
                return Outcome {
                    y,
                    working,
                    lambda: Vec::new(),
                    status: QpStatus::MaxIter,
                    iterations,
                };
            }
            iterations += 1;
            let Some((target, lambda)) = self.kkt_step(&y, &working) else {
                return Outcome {
                    y,
                    working,
                    lambda: Vec::new(),
                    status: QpStatus::MaxIter,
                    iterations,
                };
            };
            let step = &target - &y;
            let tiny = step.amax() <= 1e-13 * (1.0 + y.amax());
            if at_subproblem_min || tiny {
                at_subproblem_min = false;
                let grad_scale = 1.0 + (self.h * &y + self.f).amax();
                let most_negative = lambda
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l < -1e-12 * grad_scale)
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(working[a.0].cmp(&working[b.0])));
                match most_negative {
                    None => {
                        return Outcome {
                            y,
                            working,
                            lambda,
                            status: QpStatus::Optimal,
                            iterations,
                        }
                    }
                    Some((pos, _)) => {
                        working.remove(pos);
                        continue;
                    }
                }
            }

            let mut alpha = 1.0;
            let mut blocking = None;
            let step_norm = step.amax();
            for i in 0..k {
                if working.contains(&i) {
                    continue;
                }
                let row = self.c.row(i);
                let slope = row.dot(&step.transpose());
                if slope <= 1e-14 * row.amax() * step_norm {
                    continue;
                }
                let ratio = (-(row.dot(&y.transpose()) + self.d[i]) / slope).max(0.0);
                if ratio < alpha {
                    alpha = ratio;
                    blocking = Some(i);
                }
            }
            y += &step * alpha;
            match blocking {
                Some(i) => working.push(i),
                None => at_subproblem_min = true,
            }
        }
    }
}

/// Point of `{y : C y + d ≤ 0}` nearest the origin, or `None` if the set is empty.
fn least_distance_point(c: &DMatrix<f64>, d: &DVector<f64>) -> Option<DVector<f64>> {
    let (k, p) = c.shape();
    // LDP form G y ≥ h with G = −C, h = d; rows normalized
    let mut e = DMatrix::zeros(p + 1, k);
    for i in 0..k {
        let norm = c.row(i).norm();
        if norm < 1e-14 {
            if d[i] > FEAS_TOL {
                return None;
            }
            continue;
        }
        for j in 0..p {
            e[(j, i)] = -c[(i, j)] / norm;
        }
        e[(p, i)] = d[i] / norm;
    }
    let mut f = DVector::zeros(p + 1);
    f[p] = 1.0;
    let u = nnls(&e, &f);
    let r = &e * u - &f;
    if r.norm() < 1e-12 || r[p] >= -1e-14 {
        return None;
    }
    Some(-r.rows(0, p) / r[p])
}

/// Lawson–Hanson non-negative least squares: `min ‖E u − f‖` subject to `u ≥ 0`.
pub(crate) fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> DVector<f64> {
    let k = e.ncols();
    let mut x = DVector::zeros(k);
    let mut passive = vec![false; k];
    let mut excluded = vec![false; k];
    let tol = 1e-12 * (1.0 + e.amax() * f.amax());

    for _ in 0..3 * k + 10 {
        let w = e.transpose() * (f - e * &x);
        let candidate = (0..k)
            .filter(|&j| !passive[j] && !excluded[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].partial_cmp(&w[b]).unwrap().then(b.cmp(&a)));
        let Some(t) = candidate else { break };
        passive[t] = true;
        excluded.iter_mut().for_each(|v| *v = false);

        for inner in 0..3 * k + 10 {
            let cols: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(e.nrows(), cols.len(), |r, c| e[(r, cols[c])]);
            let sol = sub.svd(true, true).solve(f, 1e-14).unwrap_or_else(|_| DVector::zeros(cols.len()));
            let mut z = DVector::zeros(k);
            for (c, &j) in cols.iter().enumerate() {
                z[j] = sol[c];
            }
            if cols.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            if inner == 0 && cols.iter().all(|&j| j == t || z[j] > 0.0) && z[t] <= 0.0 {
                // the entering column cannot move; leave it out for this round
                passive[t] = false;
                excluded[t] = true;
                break;
            }
            let mut alpha = f64::INFINITY;
            for &j in &cols {
                if z[j] <= 0.0 {
                    let a = x[j] / (x[j] - z[j]);
                    alpha = alpha.min(a);
                }
            }
            x += (z - &x) * alpha;
            for &j in &cols {
                if x[j] <= 1e-15 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x
}

fn kkt_residual(
    problem: &QpProblem,
    hessian: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> f64 {
    let hx = hessian * x;
    let stat = &hx + &problem.gradient + problem.ineq_matrix.transpose() * lambda + problem.eq_matrix.transpose() * mu;
    let stat_scale = 1.0 + problem.gradient.amax() + hx.amax();
    let mut res = stat.amax() / stat_scale;
    if !problem.eq_vector.is_empty() {
        res = res.max((&problem.eq_matrix * x + &problem.eq_vector).amax());
    }
    if !problem.ineq_vector.is_empty() {
        let slack = &problem.ineq_matrix * x + &problem.ineq_vector;
        res = res.max(slack.max().max(0.0));
        res = res.max((-lambda.min()).max(0.0));
        let comp_scale = 1.0 + lambda.amax();
        let comp = slack.iter().zip(lambda.iter()).map(|(s, l)| (s * l).abs()).fold(0.0, f64::max);
        res = res.max(comp / comp_scale);
    }
    res
}
