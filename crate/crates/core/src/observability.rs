//! The three observability tests: the spectral rank condition on the
//! truncated Koopman representation, the Lie-derivative rank test, and the
//! empirical observability Gramian.
//!
//! For the spectral test the eigenvalues of `Lambda` are grouped by
//! closeness; each group of multiplicity `r` contributes a `q x r` matrix of
//! inner products between its eigenspace basis and the measurement-expansion
//! rows, and the system is observable iff every such matrix has full column
//! rank. In the scalar truncated coordinates the eigenspaces of the diagonal
//! complex form are spanned by standard basis vectors, so each matrix is the
//! restriction of `C` to the group's columns.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{flow, FlowError};
use crate::exprlang::{lie_derivative, EvalError, Expr, ExprError};
use crate::koopman::CanonicalSystem;
use crate::linalg;
use crate::NonlinearSystem;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservabilityError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("domain widening failed: {0}")]
    Domain(String),
}

/// Tolerances shared by the rank tests; every value is pinned here and
/// overridable from the command line.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    /// Eigenvalue grouping: `|li - lj| <= group_tol * (1 + |li|)`.
    pub group_tol: f64,
    /// Exact-analysis SVD cutoff factor (`sigma_max * max(dims) * rank_rel`).
    pub rank_rel: f64,
    /// Gramian SVD cutoff factor (`sigma_max * gramian_rel`).
    pub gramian_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            group_tol: 1e-8,
            rank_rel: linalg::RANK_REL_EXACT,
            gramian_rel: linalg::RANK_REL_GRAMIAN,
        }
    }
}

/// A cluster of (numerically) equal eigenvalues of `Lambda` with an
/// orthonormal basis of its eigenspace.
#[derive(Debug, Clone)]
pub struct EigenGroup {
    pub representative: Complex64,
    /// Member indices into the Koopman set.
    pub indices: Vec<usize>,
    pub multiplicity: usize,
    pub eigenvectors: Vec<DVector<Complex64>>,
}

/// Groups a spectrum by the transitive closure of
/// `|li - lj| <= tol * (1 + |li|)`; multiplicities sum to the spectrum size.
pub fn group_eigenvalues(spectrum: &[Complex64], tol: f64) -> Vec<EigenGroup> {
    let n = spectrum.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (spectrum[i] - spectrum[j]).norm();
            if d <= tol * (1.0 + spectrum[i].norm()) || d <= tol * (1.0 + spectrum[j].norm()) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[rj] = ri;
                }
            }
        }
    }
    let mut groups: Vec<EigenGroup> = Vec::new();
    let mut root_of: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        let slot = match root_of[root] {
            Some(g) => g,
            None => {
                groups.push(EigenGroup {
                    representative: spectrum[i],
                    indices: Vec::new(),
                    multiplicity: 0,
                    eigenvectors: Vec::new(),
                });
                root_of[root] = Some(groups.len() - 1);
                groups.len() - 1
            }
        };
        groups[slot].indices.push(i);
    }
    for g in &mut groups {
        g.multiplicity = g.indices.len();
        // Standard basis vectors of the diagonal form, orthonormalized for
        // the record (they already are).
        let basis: Vec<DVector<Complex64>> = g
            .indices
            .iter()
            .map(|&i| {
                let mut e = DVector::zeros(n);
                e[i] = Complex64::new(1.0, 0.0);
                e
            })
            .collect();
        g.eigenvectors = linalg::gram_schmidt(&basis).expect("independent basis");
    }
    groups
}

/// The `q x r` matrix with entry `(k, j) = <w_ij, c_k>` (Hermitian inner
/// product, conjugating the eigenvector).
pub fn build_observability_matrix(
    group: &EigenGroup,
    c: &DMatrix<Complex64>,
) -> DMatrix<Complex64> {
    let q = c.nrows();
    let r = group.multiplicity;
    DMatrix::from_fn(q, r, |k, j| {
        let w = &group.eigenvectors[j];
        (0..c.ncols()).map(|m| w[m].conj() * c[(k, m)]).sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    KoopmanRank,
    LieRank,
    EmpiricalGramian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Verdict {
    Observable,
    Unobservable { failing_groups: Vec<usize> },
}

impl Verdict {
    pub fn is_observable(&self) -> bool {
        matches!(self, Verdict::Observable)
    }
}

/// Per-group entry of the serialized report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupReport {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub multiplicity: usize,
    pub rank: usize,
    pub required: usize,
    pub pass: bool,
}

/// Outcome of one observability method, in the shape the reports are
/// serialized in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservabilityReport {
    pub method: Method,
    pub verdict: Verdict,
    pub groups: Vec<GroupReport>,
    /// Rank found by the Lie/Gramian tests (None for the spectral test).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub state_dim: usize,
    /// Set when the Lie test stopped deepening on its expression budget.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncated_at_order: Option<usize>,
    pub tolerances: Tolerances,
    pub samples: usize,
}

/// Spectral rank test outcome, with the analysis objects alongside the
/// serializable report.
#[derive(Debug, Clone)]
pub struct KoopmanRankOutcome {
    pub report: ObservabilityReport,
    pub groups: Vec<EigenGroup>,
    pub o_matrices: Vec<DMatrix<Complex64>>,
}

/// Rank condition on explicit spectral data: observable iff every group's
/// matrix has rank equal to its multiplicity.
pub fn koopman_rank_from_parts(
    spectrum: &[Complex64],
    c: &DMatrix<Complex64>,
    state_dim: usize,
    tols: &Tolerances,
) -> KoopmanRankOutcome {
    let groups = group_eigenvalues(spectrum, tols.group_tol);
    // Each O_i is a slice of C; rank it against the overall scale of C so a
    // group whose entries are pure fit noise reads as rank zero.
    let c_scale = c.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let mut reports = Vec::with_capacity(groups.len());
    let mut o_matrices = Vec::with_capacity(groups.len());
    let mut failing = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let o = build_observability_matrix(g, c);
        let (rank, _) = linalg::numerical_rank_c_floored(&o, tols.rank_rel, c_scale);
        let pass = rank == g.multiplicity;
        if !pass {
            failing.push(gi);
        }
        reports.push(GroupReport {
            lambda_re: g.representative.re,
            lambda_im: g.representative.im,
            multiplicity: g.multiplicity,
            rank,
            required: g.multiplicity,
            pass,
        });
        o_matrices.push(o);
    }
    let verdict = if failing.is_empty() {
        Verdict::Observable
    } else {
        Verdict::Unobservable { failing_groups: failing }
    };
    KoopmanRankOutcome {
        report: ObservabilityReport {
            method: Method::KoopmanRank,
            verdict,
            groups: reports,
            rank: None,
            state_dim,
            truncated_at_order: None,
            tolerances: *tols,
            samples: 0,
        },
        groups,
        o_matrices,
    }
}

/// Spectral rank test on a canonical system.
pub fn koopman_rank_test(cs: &CanonicalSystem, tols: &Tolerances) -> KoopmanRankOutcome {
    koopman_rank_from_parts(cs.spectrum(), cs.c_complex(), cs.state_dim(), tols)
}

/// The smallest number of independent measurements that could possibly make
/// the system observable: the largest eigenvalue multiplicity.
pub fn min_measurements(report: &ObservabilityReport) -> usize {
    report.groups.iter().map(|g| g.multiplicity).max().unwrap_or(0)
}

#[derive(Debug, Clone, Copy)]
pub struct LieRankOptions {
    /// Highest Lie-derivative order to stack (defaults to the state
    /// dimension when `None`).
    pub max_order: Option<usize>,
    /// Stop deepening when the symbolic derivatives exceed this many nodes;
    /// the outcome is then marked truncated.
    pub node_budget: usize,
    pub rank_rel: f64,
}

impl Default for LieRankOptions {
    fn default() -> Self {
        LieRankOptions {
            max_order: None,
            node_budget: 1 << 20,
            rank_rel: linalg::RANK_REL_EXACT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LieRankOutcome {
    pub rank: usize,
    pub state_dim: usize,
    /// Number of Lie-derivative levels stacked (order 0 counts as one).
    pub orders_used: usize,
    pub truncated: bool,
    pub locally_weakly_observable: bool,
    pub singular_values: Vec<f64>,
}

/// Stacks gradients of `h, L_f h, L_f^2 h, ...` evaluated at `x0` until the
/// rank saturates, reaches the state dimension, or hits the order cap.
pub fn lie_rank_test(
    sys: &NonlinearSystem,
    x0: &[f64],
    opts: &LieRankOptions,
) -> Result<LieRankOutcome, ObservabilityError> {
    let n = sys.state_dim();
    let max_order = opts.max_order.unwrap_or(n).max(1);
    let mut current: Vec<Expr<f64>> = sys.measurement().components().to_vec();
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    let mut orders_used = 0usize;
    let mut truncated = false;
    let mut rank = 0usize;
    let singular_values;

    loop {
        for comp in &current {
            for i in 1..=n {
                rows.push(comp.differentiate(i).evaluate(x0)?);
            }
            n_rows += 1;
        }
        orders_used += 1;
        let stacked = DMatrix::from_row_slice(n_rows, n, &rows);
        let (r, sv) = linalg::numerical_rank_r(&stacked, opts.rank_rel);
        let saturated = r == rank && orders_used > 1;
        rank = r;
        if rank == n || orders_used >= max_order || saturated {
            singular_values = sv;
            break;
        }
        let mut next = Vec::with_capacity(current.len());
        let mut nodes = 0usize;
        for comp in &current {
            let lifted = lie_derivative(comp, sys.field())?;
            nodes += lifted.node_count();
            next.push(lifted);
        }
        if nodes > opts.node_budget {
            truncated = true;
            singular_values = sv;
            break;
        }
        current = next;
    }

    Ok(LieRankOutcome {
        rank,
        state_dim: n,
        orders_used,
        truncated,
        locally_weakly_observable: rank == n,
        singular_values,
    })
}

impl LieRankOutcome {
    pub fn to_report(&self, tols: &Tolerances) -> ObservabilityReport {
        ObservabilityReport {
            method: Method::LieRank,
            verdict: if self.locally_weakly_observable {
                Verdict::Observable
            } else {
                Verdict::Unobservable { failing_groups: Vec::new() }
            },
            groups: Vec::new(),
            rank: Some(self.rank),
            state_dim: self.state_dim,
            truncated_at_order: self.truncated.then_some(self.orders_used),
            tolerances: *tols,
            samples: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GramianOutcome {
    pub gramian: DMatrix<f64>,
    pub rank: usize,
    pub state_dim: usize,
    pub singular_values: Vec<f64>,
    pub locally_weakly_observable: bool,
}

/// Empirical observability Gramian
/// `G = 1/(4 eps^2) * integral of Phi' Phi` with `Phi` columns
/// `y(x0 + eps e_i) - y(x0 - eps e_i)`, trapezoidal quadrature on the RK4
/// grid. The rank cutoff is relative to the largest singular value
/// (`gramian_rel`, default 1e-6) since the estimator carries
/// finite-difference noise.
pub fn empirical_gramian(
    sys: &NonlinearSystem,
    x0: &[f64],
    eps: f64,
    t_final: f64,
    dt: f64,
    tols: &Tolerances,
) -> Result<GramianOutcome, ObservabilityError> {
    let n = sys.state_dim();
    let q = sys.measurement_dim();
    // Perturbed starts may step just over the sampling box; pad it.
    let wide = sys
        .widen_domain(eps * (1.0 + 1e-9))
        .map_err(|e| ObservabilityError::Domain(e.to_string()))?;

    let mut diffs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n); // [i][time][k]
    let mut n_steps = None;
    for i in 0..n {
        let mut plus = x0.to_vec();
        plus[i] += eps;
        let mut minus = x0.to_vec();
        minus[i] -= eps;
        let tp = flow(&wide, &plus, t_final, dt)?;
        let tm = flow(&wide, &minus, t_final, dt)?;
        let steps = tp.len();
        assert_eq!(steps, tm.len(), "perturbed runs share the grid");
        if let Some(s) = n_steps {
            assert_eq!(s, steps);
        }
        n_steps = Some(steps);
        diffs.push(
            tp.measurements
                .iter()
                .zip(&tm.measurements)
                .map(|(yp, ym)| yp.iter().zip(ym).map(|(a, b)| a - b).collect())
                .collect(),
        );
    }

    let steps = n_steps.unwrap_or(1);
    let mut g = DMatrix::<f64>::zeros(n, n);
    if steps > 1 {
        for t in 0..steps {
            let w = if t == 0 || t == steps - 1 { 0.5 * dt } else { dt };
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for k in 0..q {
                        acc += diffs[i][t][k] * diffs[j][t][k];
                    }
                    g[(i, j)] += w * acc;
                }
            }
        }
    }
    let scale = 1.0 / (4.0 * eps * eps);
    for i in 0..n {
        for j in i..n {
            let v = g[(i, j)] * scale;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }

    let (rank, singular_values) = linalg::numerical_rank_noisy(&g, tols.gramian_rel);
    Ok(GramianOutcome {
        gramian: g,
        rank,
        state_dim: n,
        singular_values,
        locally_weakly_observable: rank == n,
    })
}

impl GramianOutcome {
    pub fn to_report(&self, tols: &Tolerances) -> ObservabilityReport {
        ObservabilityReport {
            method: Method::EmpiricalGramian,
            verdict: if self.locally_weakly_observable {
                Verdict::Observable
            } else {
                Verdict::Unobservable { failing_groups: Vec::new() }
            },
            groups: Vec::new(),
            rank: Some(self.rank),
            state_dim: self.state_dim,
            truncated_at_order: None,
            tolerances: *tols,
            samples: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use crate::koopman::{build_canonical, CanonicalConfig};
    use crate::models;
    use crate::ExprVector;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn example2_canonical(alt: bool) -> CanonicalSystem {
        let m = models::example2();
        let sys = if alt { m.alt_system.as_ref().unwrap() } else { &m.system };
        build_canonical(sys, m.kset.as_ref().unwrap(), &CanonicalConfig::default()).unwrap()
    }

    #[test]
    fn grouping_collects_repeated_eigenvalues() {
        let spectrum = vec![c(1., 0.), c(1., 0.), c(2., 0.), c(2., 0.), c(4., 0.)];
        let groups = group_eigenvalues(&spectrum, 1e-8);
        let sizes: Vec<(f64, usize)> = groups
            .iter()
            .map(|g| (g.representative.re, g.multiplicity))
            .collect();
        assert_eq!(sizes, vec![(1.0, 2), (2.0, 2), (4.0, 1)]);

        let spectrum = vec![c(0., 0.), c(-3., 0.), c(-3., 0.)];
        let groups = group_eigenvalues(&spectrum, 1e-8);
        let sizes: Vec<(f64, usize)> = groups
            .iter()
            .map(|g| (g.representative.re, g.multiplicity))
            .collect();
        assert_eq!(sizes, vec![(0.0, 1), (-3.0, 2)]);
    }

    #[test]
    fn conjugate_eigenvalues_form_distinct_groups() {
        let sqrt3 = 3.0f64.sqrt();
        let angle = 5.0 * std::f64::consts::PI / 6.0;
        let lam = Complex64::from_polar(sqrt3, angle);
        let spectrum = vec![c(0., 0.), lam, lam.conj()];
        let groups = group_eigenvalues(&spectrum, 1e-8);
        assert_eq!(groups.len(), 3);
        assert!(groups.iter().all(|g| g.multiplicity == 1));
    }

    #[test]
    fn observability_matrices_for_the_symmetric_measurement() {
        let cs = example2_canonical(false);
        let out = koopman_rank_test(&cs, &Tolerances::default());
        // Group lambda = 1 spans e1, e2; C = [0,0,2,2,1] annihilates it.
        let o1 = &out.o_matrices[0];
        assert_eq!((o1.nrows(), o1.ncols()), (1, 2));
        assert!(o1.iter().all(|z| z.norm() < 1e-12));
        assert_eq!(out.report.groups[0].rank, 0);
        assert!(!out.report.groups[0].pass);
        // Group lambda = 2 sees [2, 2]: rank 1, still short of r = 2.
        assert_eq!(out.report.groups[1].rank, 1);
        assert!(!out.report.groups[1].pass);
        // Group lambda = 4 passes.
        assert!(out.report.groups[2].pass);
        assert_eq!(
            out.report.verdict,
            Verdict::Unobservable { failing_groups: vec![0, 1] }
        );
        assert_eq!(min_measurements(&out.report), 2);
    }

    #[test]
    fn observability_matrices_for_the_asymmetric_measurement() {
        let cs = example2_canonical(true);
        let out = koopman_rank_test(&cs, &Tolerances::default());
        let o1 = &out.o_matrices[0];
        // Rows of the alternative C restricted to columns 1, 2.
        assert!((o1[(0, 0)].re - 2.0).abs() < 1e-8);
        assert!(o1[(0, 1)].norm() < 1e-8);
        assert!(o1[(1, 0)].norm() < 1e-8);
        assert!((o1[(1, 1)].re - 1.0).abs() < 1e-8);
        assert!(out.report.verdict.is_observable());
        for g in &out.report.groups {
            assert_eq!(g.rank, g.multiplicity);
        }
    }

    #[test]
    fn single_mode_with_a_nonzero_entry_has_rank_one() {
        let spectrum = vec![c(4., 0.)];
        let cmat = DMatrix::from_row_slice(1, 1, &[c(1., 0.)]);
        let out = koopman_rank_from_parts(&spectrum, &cmat, 1, &Tolerances::default());
        assert_eq!(out.report.groups[0].rank, 1);
        assert!(out.report.verdict.is_observable());
    }

    #[test]
    fn undirected_consensus_with_one_probe_is_unobservable() {
        let m = models::consensus_undirected();
        let cs = build_canonical(
            &m.system,
            m.kset.as_ref().unwrap(),
            &CanonicalConfig::default(),
        )
        .unwrap();
        let out = koopman_rank_test(&cs, &Tolerances::default());
        assert!(!out.report.verdict.is_observable());
        assert_eq!(min_measurements(&out.report), 2);
    }

    #[test]
    fn lie_rank_of_the_symmetric_measurement_saturates_below_n() {
        let m = models::example2();
        let out = lie_rank_test(&m.system, &[1.0, 2.0, 1.0], &LieRankOptions::default()).unwrap();
        assert_eq!(out.rank, 2);
        assert!(!out.locally_weakly_observable);
        assert!(!out.truncated);
    }

    #[test]
    fn lie_rank_of_the_asymmetric_measurement_is_full() {
        let m = models::example2();
        let sys = m.alt_system.as_ref().unwrap();
        let out = lie_rank_test(sys, &[1.0, 2.0, 1.0], &LieRankOptions::default()).unwrap();
        assert_eq!(out.rank, 3);
        assert!(out.locally_weakly_observable);
    }

    #[test]
    fn one_dimensional_linear_system_has_rank_one() {
        let f = ExprVector::new(vec![parse("x1", 1).unwrap()], 1).unwrap();
        let h = ExprVector::new(vec![parse("x1", 1).unwrap()], 1).unwrap();
        let sys = NonlinearSystem::new("scalar", f, h, vec![(-2.0, 2.0)]).unwrap();
        let out = lie_rank_test(&sys, &[1.0], &LieRankOptions::default()).unwrap();
        assert_eq!(out.rank, 1);
        assert!(out.locally_weakly_observable);
    }

    #[test]
    fn gramian_rank_distinguishes_the_two_measurements() {
        let m = models::example2();
        let tols = Tolerances::default();
        let out = empirical_gramian(&m.system, &[1.0, 2.0, 1.0], 1e-4, 1.0, 1e-3, &tols).unwrap();
        assert_eq!(out.rank, 2, "singular values {:?}", out.singular_values);

        let alt = m.alt_system.as_ref().unwrap();
        let out = empirical_gramian(alt, &[1.0, 2.0, 1.0], 1e-4, 1.0, 1e-3, &tols).unwrap();
        assert_eq!(out.rank, 3, "singular values {:?}", out.singular_values);
    }

    #[test]
    fn zero_measurement_gives_a_zero_gramian() {
        let f = ExprVector::new(vec![parse("x1", 1).unwrap()], 1).unwrap();
        let h = ExprVector::new(vec![parse("0*x1", 1).unwrap()], 1).unwrap();
        let sys = NonlinearSystem::new("mute", f, h, vec![(-2.0, 2.0)]).unwrap();
        let out =
            empirical_gramian(&sys, &[1.0], 1e-4, 1.0, 1e-3, &Tolerances::default()).unwrap();
        assert_eq!(out.rank, 0);
        assert!(out.gramian.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gramian_is_symmetric_and_positive_semidefinite() {
        let m = models::example2();
        let out = empirical_gramian(
            &m.system,
            &[1.0, 2.0, 1.0],
            1e-4,
            1.0,
            1e-3,
            &Tolerances::default(),
        )
        .unwrap();
        let g = &out.gramian;
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[(i, j)] - g[(j, i)]).abs() <= 1e-12);
            }
        }
        let eigs = g.clone().symmetric_eigen().eigenvalues;
        for e in eigs.iter() {
            assert!(*e >= -1e-10, "eigenvalue {e}");
        }
    }

    #[test]
    fn corollary_one_short_measurements_force_unobservability() {
        // Whenever q < max multiplicity the rank test must refuse, whatever C is.
        use rand::Rng;
        let mut rng = crate::sampling::seeded_rng(7, 11);
        for _ in 0..50 {
            let r = rng.gen_range(2..5usize);
            let extra = rng.gen_range(0..3usize);
            let q = rng.gen_range(1..r);
            let size = r + extra;
            let mut spectrum = vec![c(-1.0, 0.0); r];
            for k in 0..extra {
                spectrum.push(c(1.0 + k as f64, 0.0));
            }
            let cmat = DMatrix::from_fn(q, size, |_, _| {
                c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0))
            });
            let out = koopman_rank_from_parts(&spectrum, &cmat, size, &Tolerances::default());
            assert!(
                !out.report.verdict.is_observable(),
                "q = {q} < r = {r} must be unobservable"
            );
        }
    }
}
