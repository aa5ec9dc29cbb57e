//! Optimistic value iteration over a confidence ellipsoid intersected with the
//! set of parameters that induce valid transition kernels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{ActionId, LinearMixtureSsp, StateId};
use crate::error::{Error, Result};
use crate::wls::{ConfidenceEllipsoid, GramInverse};

/// Constraint violation accepted when declaring a point feasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// Minimise over the intersection of ellipsoid and validity polytope.
    Exact,
    /// Ellipsoid-only closed form, truncated to `[0, v_max]`.
    #[default]
    Fast,
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    normal: DVector<f64>,
    rhs: f64,
    norm_sq: f64,
}

impl Row {
    fn residual(&self, x: &DVector<f64>) -> f64 {
        self.normal.dot(x) - self.rhs
    }
}

/// The parameters `theta` for which every `<phi(.|s,a), theta>` is a
/// probability distribution and the goal is absorbing.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    dim: usize,
    equalities: Vec<Row>,
    /// `<normal, theta> >= rhs`
    inequalities: Vec<Row>,
    inconsistent: bool,
    /// Affine hulls of candidate faces, when there are few enough to enumerate.
    faces: Option<Vec<Face>>,
}

/// `{theta0 + basis z}`: the affine set where the equalities and one subset of
/// the inequalities hold with equality.
#[derive(Debug, Clone, PartialEq)]
struct Face {
    theta0: DVector<f64>,
    basis: DMatrix<f64>,
}

/// Upper bound on the number of inequality subsets examined by the active-set solver.
const FACE_ENUMERATION_LIMIT: usize = 20_000;
const RANK_TOLERANCE: f64 = 1e-10;

/// Particular solution and null-space basis of `rows theta = rhs`, or `None`
/// when the system is inconsistent.
fn affine_hull(rows: &[&Row], dim: usize) -> Option<Face> {
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for r in rows {
        gram.ger(1.0, &r.normal, &r.normal, 1.0);
        rhs.axpy(r.rhs, &r.normal, 1.0);
    }
    let eig = gram.symmetric_eigen();
    let cutoff = RANK_TOLERANCE * eig.eigenvalues.amax().max(1.0);
    let mut theta0 = DVector::zeros(dim);
    let mut null_cols = Vec::new();
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(i);
        if ev > cutoff {
            theta0.axpy(v.dot(&rhs) / ev, &v.into_owned(), 1.0);
        } else {
            null_cols.push(v.into_owned());
        }
    }
    let consistent = rows
        .iter()
        .all(|r| r.residual(&theta0).abs() <= 1e-9 * (1.0 + r.rhs.abs()));
    let basis = if null_cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&null_cols)
    };
    consistent.then_some(Face { theta0, basis })
}

fn binomial_sum(n: usize, k_max: usize) -> usize {
    let mut total = 0usize;
    let mut term = 1usize;
    for k in 0..=k_max.min(n) {
        total = total.saturating_add(term);
        term = term.saturating_mul(n - k) / (k + 1);
    }
    total
}

impl ConstraintSet {
    pub fn from_env(env: &LinearMixtureSsp) -> Self {
        let d = env.dim();
        let mut set = Self {
            dim: d,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            inconsistent: false,
            faces: None,
        };
        let mut buf = vec![0.0; d];
        for s in 0..env.num_states() {
            for a in 0..env.num_actions() {
                let mut total = DVector::zeros(d);
                for s_next in 0..env.num_states() {
                    env.write_feature(s_next, s, a, &mut buf);
                    let phi = DVector::from_column_slice(&buf);
                    if s == env.goal() {
                        let target = if s_next == env.goal() { 1.0 } else { 0.0 };
                        set.push_equality(phi.clone(), target);
                    } else {
                        set.push_inequality(phi.clone(), 0.0);
                    }
                    total += phi;
                }
                set.push_equality(total, 1.0);
            }
        }
        set.faces = set.enumerate_faces();
        set
    }

    fn enumerate_faces(&self) -> Option<Vec<Face>> {
        if self.inconsistent {
            return None;
        }
        let eq: Vec<&Row> = self.equalities.iter().collect();
        let base = affine_hull(&eq, self.dim)?;
        let k_max = base.basis.ncols();
        let n = self.inequalities.len();
        if binomial_sum(n, k_max) > FACE_ENUMERATION_LIMIT {
            return None;
        }
        let mut faces = Vec::new();
        let mut subset: Vec<usize> = Vec::with_capacity(k_max);
        fn walk(
            set: &ConstraintSet,
            start: usize,
            k_max: usize,
            subset: &mut Vec<usize>,
            faces: &mut Vec<Face>,
        ) {
            let mut rows: Vec<&Row> = set.equalities.iter().collect();
            rows.extend(subset.iter().map(|&i| &set.inequalities[i]));
            match affine_hull(&rows, set.dim) {
                Some(face) => faces.push(face),
                // no superset can be consistent either
                None => return,
            }
            if subset.len() == k_max {
                return;
            }
            for i in start..set.inequalities.len() {
                subset.push(i);
                walk(set, i + 1, k_max, subset, faces);
                subset.pop();
            }
        }
        walk(self, 0, k_max, &mut subset, &mut faces);
        Some(faces)
    }

    fn push_equality(&mut self, normal: DVector<f64>, rhs: f64) {
        let norm_sq = normal.norm_squared();
        if norm_sq == 0.0 {
            if rhs != 0.0 {
                self.inconsistent = true;
            }
            return;
        }
        if !self
            .equalities
            .iter()
            .any(|r| r.rhs == rhs && r.normal == normal)
        {
            self.equalities.push(Row {
                normal,
                rhs,
                norm_sq,
            });
        }
    }

    fn push_inequality(&mut self, normal: DVector<f64>, rhs: f64) {
        let norm_sq = normal.norm_squared();
        if norm_sq == 0.0 {
            if rhs > 0.0 {
                self.inconsistent = true;
            }
            return;
        }
        if !self
            .inequalities
            .iter()
            .any(|r| r.rhs == rhs && r.normal == normal)
        {
            self.inequalities.push(Row {
                normal,
                rhs,
                norm_sq,
            });
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_constraints(&self) -> usize {
        self.equalities.len() + self.inequalities.len()
    }

    /// Largest violation over all constraints (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        if self.inconsistent {
            return f64::INFINITY;
        }
        let eq = self.equalities.iter().map(|r| r.residual(x).abs());
        let ineq = self.inequalities.iter().map(|r| (-r.residual(x)).max(0.0));
        eq.chain(ineq).fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.max_violation(x) <= FEASIBILITY_TOLERANCE
    }

    /// Euclidean projection onto the polytope (Dykstra over its half-spaces and hyperplanes).
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        dykstra(x, None, self, DYKSTRA_MAX_SWEEPS).0
    }
}

const DYKSTRA_MAX_SWEEPS: usize = 20_000;
const DYKSTRA_TOLERANCE: f64 = 1e-13;

/// Dykstra's alternating projection onto `ellipsoid ∩ polytope`. Returns the
/// point and whether the sweep-to-sweep change fell below tolerance.
fn dykstra(
    start: &DVector<f64>,
    ellipsoid: Option<&ConfidenceEllipsoid>,
    constraints: &ConstraintSet,
    max_sweeps: usize,
) -> (DVector<f64>, bool) {
    let mut x = start.clone();
    let n_ineq = constraints.inequalities.len();
    let mut corr_ineq = vec![DVector::<f64>::zeros(x.len()); n_ineq];
    let mut corr_ell = DVector::<f64>::zeros(x.len());
    let scale = 1.0 + start.norm();
    for _ in 0..max_sweeps {
        let prev = x.clone();
        if let Some(e) = ellipsoid {
            let y = &x + &corr_ell;
            let p = e.project(&y);
            corr_ell = &y - &p;
            x = p;
        }
        // hyperplanes are affine, so their Dykstra corrections vanish
        for row in &constraints.equalities {
            let r = row.residual(&x);
            x.axpy(-r / row.norm_sq, &row.normal, 1.0);
        }
        for (row, corr) in constraints.inequalities.iter().zip(corr_ineq.iter_mut()) {
            let y = &x + &*corr;
            let r = row.residual(&y);
            if r < 0.0 {
                let p = &y - &row.normal * (r / row.norm_sq);
                *corr = &y - &p;
                x = p;
            } else {
                *corr = DVector::zeros(x.len());
                x = y;
            }
        }
        if (&x - &prev).norm() <= DYKSTRA_TOLERANCE * scale {
            return (x, true);
        }
    }
    (x, false)
}

/// Outcome of searching for a point in `ellipsoid ∩ polytope`.
#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible(DVector<f64>),
    /// Alternating projections converged to two distinct points: the sets are disjoint.
    Disjoint {
        gap: f64,
    },
    /// Budget exhausted while the gap was still moving; no conclusion.
    Stalled {
        gap: f64,
    },
}

impl Feasibility {
    pub fn witness(&self) -> Option<&DVector<f64>> {
        match self {
            Feasibility::Feasible(w) => Some(w),
            _ => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }
}

pub const FEASIBILITY_MAX_ROUNDS: usize = 5_000;

/// Alternates between the closed-form ellipsoid projection and the polytope
/// projection, starting from the ellipsoid center.
pub fn feasibility_check(
    ellipsoid: &ConfidenceEllipsoid,
    constraints: &ConstraintSet,
) -> Feasibility {
    feasibility_check_with(ellipsoid, constraints, FEASIBILITY_MAX_ROUNDS)
}

pub fn feasibility_check_with(
    ellipsoid: &ConfidenceEllipsoid,
    constraints: &ConstraintSet,
    max_rounds: usize,
) -> Feasibility {
    if constraints.inconsistent {
        return Feasibility::Disjoint { gap: f64::INFINITY };
    }
    let slack = FEASIBILITY_TOLERANCE;
    let mut x = ellipsoid.center().clone();
    let mut last_gap = f64::INFINITY;
    for _ in 0..max_rounds {
        let y = constraints.project(&x);
        if ellipsoid.distance(&y) <= ellipsoid.radius() + slack
            && constraints.max_violation(&y) <= slack
        {
            return Feasibility::Feasible(y);
        }
        let next = ellipsoid.project(&y);
        let gap = (&next - &y).norm();
        if constraints.max_violation(&next) <= slack {
            return Feasibility::Feasible(next);
        }
        if gap <= slack {
            // both projections agree to tolerance; refine through the joint projection
            let (z, _) = dykstra(&y, Some(ellipsoid), constraints, DYKSTRA_MAX_SWEEPS);
            if constraints.max_violation(&z) <= slack
                && ellipsoid.distance(&z) <= ellipsoid.radius() + slack
            {
                return Feasibility::Feasible(z);
            }
        }
        let step = (&next - &x).norm();
        if gap > slack
            && step <= 1e-14 * (1.0 + x.norm())
            && (last_gap - gap).abs() <= 1e-14 * (1.0 + gap)
        {
            return Feasibility::Disjoint { gap };
        }
        last_gap = gap;
        x = next;
    }
    Feasibility::Stalled { gap: last_gap }
}

/// Objective tolerance of the exact optimistic minimisation.
pub const EXACT_OBJECTIVE_TOLERANCE: f64 = 1e-7;
const EXACT_MAX_STEPS: usize = 200;

/// Minimiser of a linear objective over the intersection.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMin {
    pub value: f64,
    pub argmin: DVector<f64>,
}

/// `min <theta, phi>` over `ellipsoid ∩ polytope` by enumerating faces of the
/// polytope. On each face's affine hull the minimum over the ellipsoid has a
/// closed form; the smallest candidate satisfying every constraint is the
/// optimum. Returns `None` when the constraint set is too large to enumerate
/// or no candidate is feasible.
pub fn active_set_min(
    ellipsoid: &ConfidenceEllipsoid,
    constraints: &ConstraintSet,
    phi: &DVector<f64>,
) -> Option<ExactMin> {
    let faces = constraints.faces.as_ref()?;
    let a = ellipsoid.shape();
    let r2 = ellipsoid.radius() * ellipsoid.radius();
    let mut best: Option<ExactMin> = None;
    for face in faces {
        let offset = &face.theta0 - ellipsoid.center();
        let a_off = a * &offset;
        let h0 = offset.dot(&a_off);
        let candidate = if face.basis.ncols() == 0 {
            if h0 > r2 * (1.0 + 1e-12) + 1e-15 {
                continue;
            }
            face.theta0.clone()
        } else {
            let n = &face.basis;
            let h = n.transpose() * a * n;
            let g = n.transpose() * &a_off;
            let Some(chol) = h.cholesky() else { continue };
            let z_c = -chol.solve(&g);
            let rho2 = r2 - h0 - g.dot(&z_c);
            if rho2 < 0.0 {
                continue;
            }
            let w = n.transpose() * phi;
            let h_inv_w = chol.solve(&w);
            let wq = w.dot(&h_inv_w);
            let z = if wq > 1e-300 {
                z_c - h_inv_w * (rho2.sqrt() / wq.sqrt())
            } else {
                z_c
            };
            &face.theta0 + n * z
        };
        if constraints.max_violation(&candidate) > FEASIBILITY_TOLERANCE {
            continue;
        }
        let value = candidate.dot(phi);
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(ExactMin {
                value,
                argmin: candidate,
            });
        }
    }
    best
}

/// `min <theta, phi>` over `ellipsoid ∩ polytope` by projected gradient steps
/// of geometrically growing length, starting from a feasible point.
pub fn exact_min_from(
    ellipsoid: &ConfidenceEllipsoid,
    constraints: &ConstraintSet,
    phi: &DVector<f64>,
    start: &DVector<f64>,
) -> ExactMin {
    let norm = phi.norm();
    if norm == 0.0 {
        return ExactMin {
            value: 0.0,
            argmin: start.clone(),
        };
    }
    let dir = phi / norm;
    let mut x = start.clone();
    let mut best = x.dot(phi);
    let mut eta = 1e-2 * (1.0 + start.norm());
    let mut quiet = 0;
    for _ in 0..EXACT_MAX_STEPS {
        let trial = &x - &dir * eta;
        let (p, _) = dykstra(&trial, Some(ellipsoid), constraints, DYKSTRA_MAX_SWEEPS);
        let feasible = constraints.max_violation(&p) <= FEASIBILITY_TOLERANCE
            && ellipsoid.distance(&p) <= ellipsoid.radius() + FEASIBILITY_TOLERANCE;
        let value = if feasible { p.dot(phi) } else { best };
        let gain = best - value;
        if value < best {
            best = value;
            x = p;
        }
        if gain <= EXACT_OBJECTIVE_TOLERANCE * norm * 1e-2 {
            quiet += 1;
            if quiet >= 3 && eta > 1e6 * (1.0 + start.norm()) {
                break;
            }
        } else {
            quiet = 0;
        }
        eta *= 2.0;
    }
    ExactMin {
        value: best,
        argmin: x,
    }
}

/// Inner minimisation `min_{theta in C ∩ B} <theta, phi>`.
///
/// Exact mode requires a feasible intersection; fast mode uses the
/// ellipsoid closed form truncated to `[0, v_max]`.
pub fn optimistic_min(
    ellipsoid: &ConfidenceEllipsoid,
    constraints: &ConstraintSet,
    phi: &DVector<f64>,
    mode: SolverMode,
    v_max: f64,
) -> Result<f64> {
    match mode {
        SolverMode::Fast => Ok(fast_min(ellipsoid, phi, v_max)),
        SolverMode::Exact => match feasibility_check(ellipsoid, constraints) {
            Feasibility::Feasible(w) => Ok(active_set_min(ellipsoid, constraints, phi)
                .unwrap_or_else(|| exact_min_from(ellipsoid, constraints, phi, &w))
                .value),
            Feasibility::Disjoint { gap } => Err(Error::Infeasible { gap }),
            Feasibility::Stalled { gap } => Err(Error::FeasibilityStalled {
                gap,
                iterations: FEASIBILITY_MAX_ROUNDS,
            }),
        },
    }
}

#[inline]
pub fn fast_min(ellipsoid: &ConfidenceEllipsoid, phi: &DVector<f64>, v_max: f64) -> f64 {
    let raw = ellipsoid.center().dot(phi) - ellipsoid.radius() * ellipsoid.ellipsoid_norm(phi);
    raw.clamp(0.0, v_max.max(0.0))
}

/// Dense `Q(s,a)` table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    /// `value` at every non-goal state, zero at the goal.
    pub fn constant(num_states: usize, num_actions: usize, goal: StateId, value: f64) -> Self {
        let mut q = Self::zeros(num_states, num_actions);
        for s in (0..num_states).filter(|&s| s != goal) {
            q.row_mut(s).fill(value);
        }
        q
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: StateId, a: ActionId) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: StateId, a: ActionId, v: f64) {
        self.values[s * self.num_actions + a] = v;
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    fn row_mut(&mut self, s: StateId) -> &mut [f64] {
        &mut self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    /// Greedy action and its value; ties go to the lowest action index.
    pub fn greedy(&self, s: StateId) -> (ActionId, f64) {
        let mut best = (0, f64::INFINITY);
        for (a, &q) in self.row(s).iter().enumerate() {
            if q < best.1 {
                best = (a, q);
            }
        }
        best
    }

    pub fn state_values(&self) -> Vec<f64> {
        (0..self.num_states).map(|s| self.greedy(s).1).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviParams {
    pub epsilon: f64,
    pub q: f64,
    pub mode: SolverMode,
    /// Upper bound `B` on values; fast mode truncates the inner minimum to it.
    pub b: f64,
    /// Added to every non-goal cost (zero unless running on perturbed costs).
    pub cost_shift: f64,
}

impl DeviParams {
    /// `ceil(log(B/eps)/q) * 10`.
    pub fn iteration_cap(&self) -> usize {
        let ratio = (self.b / self.epsilon).max(std::f64::consts::E);
        ((ratio.ln() / self.q).ceil() * 10.0).max(10.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Copy)]
pub enum DeviStatus {
    Converged,
    Disjoint,
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviResult {
    pub q: QTable,
    pub v: Vec<f64>,
    pub iterations: usize,
    pub status: DeviStatus,
    /// `||V^(i+1) - V^(i)||_inf` for every sweep, in order.
    pub sup_changes: Vec<f64>,
}

impl DeviResult {
    pub fn feasible(&self) -> bool {
        self.status == DeviStatus::Converged
    }

    pub fn converged(&self) -> bool {
        self.status == DeviStatus::Converged
    }

    /// Largest ratio `change_{i+1} / change_i` over consecutive sweeps.
    pub fn worst_contraction_ratio(&self) -> f64 {
        self.sup_changes
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

/// Per-(s,a) memo of the exact minimiser. The inner minimum is positively
/// homogeneous in `phi`, so a minimiser for one direction serves every
/// positive multiple of it.
struct ExactCache {
    entries: Vec<Option<(DVector<f64>, DVector<f64>)>>,
}

impl ExactCache {
    fn lookup_or_solve(
        &mut self,
        idx: usize,
        phi: &DVector<f64>,
        ellipsoid: &ConfidenceEllipsoid,
        constraints: &ConstraintSet,
        witness: &DVector<f64>,
    ) -> f64 {
        let norm = phi.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let dir = phi / norm;
        if let Some((cached_dir, argmin)) = &self.entries[idx] {
            if (cached_dir - &dir).norm() <= 1e-14 {
                return argmin.dot(phi);
            }
        }
        let sol = active_set_min(ellipsoid, constraints, phi).unwrap_or_else(|| {
            let start = self.entries[idx]
                .as_ref()
                .map(|(_, a)| a.clone())
                .unwrap_or_else(|| witness.clone());
            exact_min_from(ellipsoid, constraints, phi, &start)
        });
        self.entries[idx] = Some((dir, sol.argmin));
        sol.value
    }
}

/// Optimistic value iteration with transition bonus `q`.
///
/// Starts from `Q = V = 0` and applies
/// `Q(s,a) <- c(s,a) + (1-q) min_{theta in C ∩ B} <theta, phi_V(s,a)>` until
/// the sup-norm change of `V` drops below `epsilon`. When the intersection is
/// empty (or its emptiness cannot be ruled out) the zero table is returned.
pub fn devi(
    env: &LinearMixtureSsp,
    ellipsoid: &ConfidenceEllipsoid,
    constraints: &ConstraintSet,
    params: &DeviParams,
) -> Result<DeviResult> {
    if !(params.epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "DEVI needs epsilon > 0, got {}",
            params.epsilon
        )));
    }
    if !(0.0..=1.0).contains(&params.q) {
        return Err(Error::InvalidInput(format!(
            "DEVI needs q in [0,1], got {}",
            params.q
        )));
    }
    let (ns, na, goal) = (env.num_states(), env.num_actions(), env.goal());
    let zero = |status| DeviResult {
        q: QTable::zeros(ns, na),
        v: vec![0.0; ns],
        iterations: 0,
        status,
        sup_changes: Vec::new(),
    };

    let witness = match params.mode {
        SolverMode::Fast => None,
        SolverMode::Exact => match feasibility_check(ellipsoid, constraints) {
            Feasibility::Feasible(w) => Some(w),
            Feasibility::Disjoint { .. } => return Ok(zero(DeviStatus::Disjoint)),
            Feasibility::Stalled { .. } => return Ok(zero(DeviStatus::Stalled)),
        },
    };
    let mut cache = ExactCache {
        entries: vec![None; ns * na],
    };

    let cap = params.iteration_cap();
    let mut values = vec![0.0; ns];
    let mut sup_changes = Vec::new();
    let mut phi = DVector::zeros(env.dim());
    for iteration in 1..=cap {
        let mut next_q = QTable::zeros(ns, na);
        for s in (0..ns).filter(|&s| s != goal) {
            for a in 0..na {
                env.feature_expectation_into(&values, s, a, phi.as_mut_slice());
                let inner = match &witness {
                    None => fast_min(ellipsoid, &phi, params.b),
                    Some(w) => cache.lookup_or_solve(s * na + a, &phi, ellipsoid, constraints, w),
                };
                let cost = env.cost(s, a) + params.cost_shift;
                next_q.set(s, a, cost + (1.0 - params.q) * inner);
            }
        }
        let next_v = next_q.state_values();
        let change = values
            .iter()
            .zip(&next_v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        sup_changes.push(change);
        values = next_v;
        if change < params.epsilon {
            return Ok(DeviResult {
                q: next_q,
                v: values,
                iterations: iteration,
                status: DeviStatus::Converged,
                sup_changes,
            });
        }
        if !change.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        what: "DEVI",
        iterations: cap,
        residual: sup_changes.last().copied().unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SyntheticInstance;
    use nalgebra::DMatrix;

    fn synthetic() -> LinearMixtureSsp {
        LinearMixtureSsp::synthetic(SyntheticInstance::new(4, 0.25, 1.0 / 12.0).unwrap())
    }

    fn singleton(env: &LinearMixtureSsp) -> ConfidenceEllipsoid {
        ConfidenceEllipsoid::new(env.theta_star().clone(), DMatrix::identity(4, 4), 0.0).unwrap()
    }

    #[test]
    fn theta_star_satisfies_constraints() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        assert!(cs.contains(env.theta_star()));
        // 1 normalisation row, 16 nonnegativity rows after deduplication
        assert_eq!(cs.num_constraints(), 17);
    }

    #[test]
    fn ellipsoid_at_theta_star_is_feasible() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        for r in [0.0, 1e-3, 0.5] {
            let e = ConfidenceEllipsoid::new(env.theta_star().clone(), DMatrix::identity(4, 4), r)
                .unwrap();
            let w = feasibility_check(&e, &cs);
            assert_eq!(w.witness(), Some(env.theta_star()));
        }
    }

    #[test]
    fn huge_ellipsoid_is_feasible() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        let e =
            ConfidenceEllipsoid::new(DVector::from_element(4, 3.0), DMatrix::identity(4, 4), 1e3)
                .unwrap();
        let w = feasibility_check(&e, &cs);
        let w = w.witness().unwrap();
        assert!(cs.contains(w) && e.contains(w));
    }

    #[test]
    fn separated_ellipsoid_is_not_feasible() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        // normalisation requires theta_4 = 1; center sits at theta_4 = 2
        let mut center = env.theta_star().clone();
        center[3] = 2.0;
        let e = ConfidenceEllipsoid::new(center, DMatrix::identity(4, 4), 1e-6).unwrap();
        match feasibility_check(&e, &cs) {
            Feasibility::Disjoint { gap } | Feasibility::Stalled { gap } => assert!(gap > 0.5),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn singleton_gives_true_expectation_in_both_modes() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        let e = singleton(&env);
        let phi = env.feature_expectation(&[2.0, 0.0], 0, 5);
        let truth = phi.dot(env.theta_star());
        for mode in [SolverMode::Exact, SolverMode::Fast] {
            let v = optimistic_min(&e, &cs, &phi, mode, 3.0).unwrap();
            assert!((v - truth).abs() < 1e-9, "{mode:?}: {v} vs {truth}");
        }
    }

    #[test]
    fn zero_feature_gives_zero() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        let e = ConfidenceEllipsoid::new(env.theta_star().clone(), DMatrix::identity(4, 4), 0.1)
            .unwrap();
        for mode in [SolverMode::Exact, SolverMode::Fast] {
            assert_eq!(
                optimistic_min(&e, &cs, &DVector::zeros(4), mode, 3.0).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn singleton_fixed_points() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        let e = singleton(&env);
        for (q, expect) in [(0.0, 3.0), (0.1, 2.5)] {
            for mode in [SolverMode::Exact, SolverMode::Fast] {
                let params = DeviParams {
                    epsilon: 1e-9,
                    q,
                    mode,
                    b: 10.0,
                    cost_shift: 0.0,
                };
                let res = devi(&env, &e, &cs, &params).unwrap();
                assert!(
                    (res.v[0] - expect).abs() < 1e-6,
                    "{mode:?} q={q}: {}",
                    res.v[0]
                );
                assert_eq!(res.v[1], 0.0);
            }
        }
    }

    #[test]
    fn infeasible_input_returns_zero_table() {
        let env = synthetic();
        let cs = ConstraintSet::from_env(&env);
        let mut center = env.theta_star().clone();
        center[3] = 2.0;
        let e = ConfidenceEllipsoid::new(center, DMatrix::identity(4, 4), 1e-6).unwrap();
        let params = DeviParams {
            epsilon: 0.01,
            q: 0.01,
            mode: SolverMode::Exact,
            b: 3.0,
            cost_shift: 0.0,
        };
        let res = devi(&env, &e, &cs, &params).unwrap();
        assert!(!res.feasible());
        assert_eq!(res.q, QTable::zeros(2, 8));
    }

    #[test]
    fn greedy_tie_breaks_low() {
        let q = QTable::constant(3, 4, 2, 1.0);
        assert_eq!(q.greedy(0), (0, 1.0));
        assert_eq!(q.greedy(2), (0, 0.0));
    }

    #[test]
    fn iteration_cap_formula() {
        let p = DeviParams {
            epsilon: 0.01,
            q: 0.01,
            mode: SolverMode::Fast,
            b: 3.0,
            cost_shift: 0.0,
        };
        assert_eq!(
            p.iteration_cap(),
            ((300f64.ln() / 0.01).ceil() * 10.0) as usize
        );
    }
}
