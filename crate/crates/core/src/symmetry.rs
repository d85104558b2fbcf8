//! Discrete permutation symmetries and their spectral consequences.
//!
//! A state symmetry is a nontrivial permutation `P` with `f(Px) = Pf(x)`;
//! a (fully) symmetric system additionally has `h(Px) = h(x)`. Composing a
//! Koopman eigenfunction with `P` yields another eigenfunction with the same
//! eigenvalue; per eigenfunction the action is either *rotational*
//! (`psi o P = c psi`) or *reflectional* (`psi_i o P = c psi_j` for a partner
//! with the same eigenvalue). Reflectional partners force repeated
//! eigenvalues; with measurements that share the symmetry the system is
//! unobservable, and otherwise the largest multiplicity lower-bounds the
//! number of measurements needed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::exprlang::{EvalError, ExprError};
use crate::koopman::{ComplexExpr, KoopmanEigenpair, KoopmanSet};
use crate::observability::group_eigenvalues;
use crate::NonlinearSystem;

/// A nontrivial permutation of state coordinates.
///
/// Stored as the image map: `P e_i = e_{image(i)}`, so `(Px)_{image(i)} = x_i`.
/// The configuration format lists the 1-based image of each index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSymmetry {
    /// 0-based image map.
    image: Vec<usize>,
    order: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SymmetryError {
    #[error("permutation image {0:?} is not a bijection on 1..=n")]
    NotABijection(Vec<usize>),
    #[error("the identity permutation is not a usable symmetry candidate")]
    IdentityPermutation,
    #[error("permutation acts on {perm} coordinates but the state has {state}")]
    LengthMismatch { perm: usize, state: usize },
    #[error(
        "eigenfunction {index} is neither rotational nor pairs with a partner of equal \
         eigenvalue; the Koopman set looks incomplete under this symmetry"
    )]
    Unresolved {
        index: usize,
        partial: SymmetryClassification,
    },
    #[error("induced permutation does not commute with Lambda: index {i} maps to eigenvalue {to} from {from}")]
    CommutationFailure { i: usize, from: Complex64, to: Complex64 },
    #[error("state symmetry does not hold (residual {residual:.3e})")]
    StateNotSymmetric { residual: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

impl PermutationSymmetry {
    /// Builds from a 1-based image map (`image[i-1]` is where `e_i` goes).
    pub fn from_image_one_based(image: Vec<usize>) -> Result<Self, SymmetryError> {
        let n = image.len();
        let mut seen = vec![false; n];
        for &j in &image {
            if j < 1 || j > n || seen[j - 1] {
                return Err(SymmetryError::NotABijection(image));
            }
            seen[j - 1] = true;
        }
        let zero_based: Vec<usize> = image.iter().map(|j| j - 1).collect();
        if zero_based.iter().enumerate().all(|(i, &j)| i == j) {
            return Err(SymmetryError::IdentityPermutation);
        }
        // Order = lcm of cycle lengths, exact integer arithmetic.
        let mut order = 1usize;
        let mut visited = vec![false; n];
        for start in 0..n {
            if visited[start] {
                continue;
            }
            let mut len = 0;
            let mut cur = start;
            while !visited[cur] {
                visited[cur] = true;
                cur = zero_based[cur];
                len += 1;
            }
            order = order / gcd(order, len) * len;
        }
        Ok(PermutationSymmetry { image: zero_based, order })
    }

    /// Transposition of coordinates `a` and `b` (1-based) on `n` coordinates.
    pub fn swap(a: usize, b: usize, n: usize) -> Result<Self, SymmetryError> {
        let mut image: Vec<usize> = (1..=n).collect();
        image.swap(a - 1, b - 1);
        Self::from_image_one_based(image)
    }

    pub fn dim(&self) -> usize {
        self.image.len()
    }

    /// Smallest positive `k` with `P^k = I`.
    pub fn order(&self) -> usize {
        self.order
    }

    /// 1-based image map, as written in configuration files.
    pub fn image_one_based(&self) -> Vec<usize> {
        self.image.iter().map(|j| j + 1).collect()
    }

    /// `y = P x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (i, &j) in self.image.iter().enumerate() {
            y[j] = x[i];
        }
        y
    }

    /// `P` applied to a complex vector.
    pub fn apply_complex(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        for (i, &j) in self.image.iter().enumerate() {
            y[j] = x[i];
        }
        y
    }

    /// `P^k` applied to a complex vector.
    pub fn apply_complex_power(&self, x: &[Complex64], k: usize) -> Vec<Complex64> {
        let mut y = x.to_vec();
        for _ in 0..(k % self.order) {
            y = self.apply_complex(&y);
        }
        y
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |r, c| if self.image[c] == r { 1.0 } else { 0.0 })
    }

    /// `sigma` with `(Px)_j = x_{sigma(j)}` (1-based in and out).
    fn sigma(&self, j: usize) -> usize {
        self.image
            .iter()
            .position(|&im| im == j - 1)
            .expect("bijection")
            + 1
    }

    /// The composition `psi o P`, i.e. `x -> psi(Px)`, as an expression.
    pub fn compose(&self, psi: &ComplexExpr) -> ComplexExpr {
        psi.relabel_vars(&|j| self.sigma(j))
    }
}

/// Residual summary of a pointwise symmetry check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryCheck {
    pub pass: bool,
    pub max_residual: f64,
    pub tol: f64,
}

/// Checks `f(Px) = P f(x)` on the samples.
/// Passes iff every sample satisfies the bound `tol * (1 + ||f(x)||_inf)`.
pub fn verify_state_symmetry(
    sys: &NonlinearSystem,
    p: &PermutationSymmetry,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<SymmetryCheck, SymmetryError> {
    if p.dim() != sys.state_dim() {
        return Err(SymmetryError::LengthMismatch { perm: p.dim(), state: sys.state_dim() });
    }
    let mut pass = true;
    let mut worst = 0.0f64;
    for x in samples {
        let px = p.apply(x);
        let f_px = sys.field_at(&px)?;
        let p_fx = p.apply(&sys.field_at(x)?);
        let scale = p_fx.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let residual = f_px
            .iter()
            .zip(&p_fx)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(residual);
        if residual > tol * (1.0 + scale) {
            pass = false;
        }
    }
    Ok(SymmetryCheck { pass, max_residual: worst, tol })
}

/// Checks `h(Px) = h(x)` on the samples.
pub fn verify_measurement_symmetry(
    sys: &NonlinearSystem,
    p: &PermutationSymmetry,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<SymmetryCheck, SymmetryError> {
    if p.dim() != sys.state_dim() {
        return Err(SymmetryError::LengthMismatch { perm: p.dim(), state: sys.state_dim() });
    }
    let mut pass = true;
    let mut worst = 0.0f64;
    for x in samples {
        let px = p.apply(x);
        let h_px = sys.measure_at(&px)?;
        let h_x = sys.measure_at(x)?;
        let scale = h_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let residual = h_px
            .iter()
            .zip(&h_x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(residual);
        if residual > tol * (1.0 + scale) {
            pass = false;
        }
    }
    Ok(SymmetryCheck { pass, max_residual: worst, tol })
}

/// A rotational eigenfunction: `psi_i o P = c psi_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationalEntry {
    pub index: usize,
    pub c: Complex64,
}

/// A reflectional pair: `psi_i o P = c psi_j` with equal eigenvalues.
/// `reverse_c` is present when the action swaps the pair both ways
/// (`psi_j o P = reverse_c psi_i`); for permutations of order three or more
/// the orbit can pass through more than two directions, in which case the
/// reverse fit has no single constant and `reverse_c` is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionalPair {
    pub i: usize,
    pub j: usize,
    pub c: Complex64,
    pub reverse_c: Option<Complex64>,
}

/// Buckets of the eigenfunction classification; every Koopman-set index
/// appears in exactly one bucket when classification succeeds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymmetryClassification {
    pub rotational: Vec<RotationalEntry>,
    pub reflectional: Vec<ReflectionalPair>,
    pub unresolved: Vec<usize>,
}

impl SymmetryClassification {
    pub fn has_reflectional_pair(&self) -> bool {
        !self.reflectional.is_empty()
    }
}

/// Least-squares constant for `target ~ c * basis` with rms residual.
fn fit_constant(target: &[Complex64], basis: &[Complex64]) -> (Complex64, f64, f64) {
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0f64;
    for (t, b) in target.iter().zip(basis) {
        num += b.conj() * t;
        den += b.norm_sqr();
    }
    let c = if den == 0.0 { Complex64::new(0.0, 0.0) } else { num / den };
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for (t, b) in target.iter().zip(basis) {
        res += (t - c * b).norm_sqr();
        scale += t.norm_sqr();
    }
    let s = target.len().max(1) as f64;
    (c, (res / s).sqrt(), (scale / s).sqrt())
}

/// Classifies each eigenfunction as rotational or reflectional under `P` by
/// sampled least squares, fitting `psi_i o P` against `psi_i` first and then
/// against same-eigenvalue partners. A successful pair classifies both of
/// its members. Leftovers abort: the reflected eigenfunction of a member of
/// the Koopman set must itself land in the set, so an unresolved index
/// signals an incomplete set.
pub fn classify_eigenfunctions(
    kset: &KoopmanSet,
    p: &PermutationSymmetry,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<SymmetryClassification, SymmetryError> {
    let n = kset.len();
    let mut values = Vec::with_capacity(n);
    let mut composed = Vec::with_capacity(n);
    for pair in kset.pairs() {
        let mut v = Vec::with_capacity(samples.len());
        let mut w = Vec::with_capacity(samples.len());
        for x in samples {
            v.push(pair.psi.eval(x)?);
            w.push(pair.psi.eval(&p.apply(x))?);
        }
        values.push(v);
        composed.push(w);
    }

    let group_tol = 1e-8;
    let mut assigned = vec![false; n];
    let mut out = SymmetryClassification::default();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let (c, residual, scale) = fit_constant(&composed[i], &values[i]);
        if residual <= tol * scale.max(1.0) {
            out.rotational.push(RotationalEntry { index: i, c });
            assigned[i] = true;
            continue;
        }
        let lambda_i = kset.pairs()[i].lambda;
        let mut found = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            let lambda_j = kset.pairs()[j].lambda;
            if (lambda_i - lambda_j).norm() > group_tol * (1.0 + lambda_i.norm()) {
                continue;
            }
            let (cj, rj, sj) = fit_constant(&composed[i], &values[j]);
            if rj <= tol * sj.max(1.0) {
                found = Some((j, cj));
                break;
            }
        }
        match found {
            Some((j, cj)) => {
                let (crev, rrev, srev) = fit_constant(&composed[j], &values[i]);
                let reverse_c = (rrev <= tol * srev.max(1.0)).then_some(crev);
                out.reflectional.push(ReflectionalPair { i, j, c: cj, reverse_c });
                assigned[i] = true;
                assigned[j] = true;
            }
            None => {
                out.unresolved.push(i);
            }
        }
    }
    if let Some(&index) = out.unresolved.first() {
        return Err(SymmetryError::Unresolved { index, partial: out });
    }
    Ok(out)
}

/// One mode identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCheck {
    pub description: String,
    /// `None` when the identity does not apply (non-mutual pair).
    pub residual: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSymmetryReport {
    pub checks: Vec<ModeCheck>,
    pub pass: bool,
}

/// Verifies the mode identities implied by the classification, with
/// `k` the permutation order:
/// rotational `i`: `v_i = c P^{k-1} v_i`; mutual reflectional pair `(i, j)`:
/// `v_j = c P^{k-1} v_i` and `v_i = c' P^{k-1} v_j`. Pairs whose orbit is not
/// a two-cycle (no reverse constant) carry no such identity and are reported
/// as skipped.
pub fn mode_symmetry_check(
    kset: &KoopmanSet,
    p: &PermutationSymmetry,
    classification: &SymmetryClassification,
    tol: f64,
) -> ModeSymmetryReport {
    let k = p.order();
    let mut checks = Vec::new();
    let mut pass = true;
    let diff = |a: &[Complex64], b: &[Complex64]| -> f64 {
        a.iter()
            .zip(b)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).norm()))
    };
    for r in &classification.rotational {
        let v = &kset.pairs()[r.index].mode;
        let moved: Vec<Complex64> = p
            .apply_complex_power(v, k - 1)
            .into_iter()
            .map(|z| r.c * z)
            .collect();
        let residual = diff(v, &moved);
        let ok = residual <= tol;
        pass &= ok;
        checks.push(ModeCheck {
            description: format!("v{0} = c P^{1} v{0}", r.index + 1, k - 1),
            residual: Some(residual),
            pass: ok,
        });
    }
    for pair in &classification.reflectional {
        match pair.reverse_c {
            Some(crev) => {
                let vi = &kset.pairs()[pair.i].mode;
                let vj = &kset.pairs()[pair.j].mode;
                let fwd: Vec<Complex64> = p
                    .apply_complex_power(vi, k - 1)
                    .into_iter()
                    .map(|z| pair.c * z)
                    .collect();
                let rev: Vec<Complex64> = p
                    .apply_complex_power(vj, k - 1)
                    .into_iter()
                    .map(|z| crev * z)
                    .collect();
                let residual = diff(vj, &fwd).max(diff(vi, &rev));
                let ok = residual <= tol;
                pass &= ok;
                checks.push(ModeCheck {
                    description: format!(
                        "v{0} = c P^{2} v{1} and v{1} = c' P^{2} v{0}",
                        pair.j + 1,
                        pair.i + 1,
                        k - 1
                    ),
                    residual: Some(residual),
                    pass: ok,
                });
            }
            None => {
                checks.push(ModeCheck {
                    description: format!(
                        "pair ({}, {}) is not a two-cycle under P; mode identity not applicable",
                        pair.i + 1,
                        pair.j + 1
                    ),
                    residual: None,
                    pass: true,
                });
            }
        }
    }
    ModeSymmetryReport { checks, pass }
}

/// The permutation of Koopman coordinates induced by the state symmetry:
/// reflectional partners swap, rotational indices stay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InducedKoopmanSymmetry {
    /// 0-based image over Koopman-set indices.
    pub image: Vec<usize>,
    pub nonidentity: bool,
}

impl InducedKoopmanSymmetry {
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.image.len();
        DMatrix::from_fn(n, n, |r, c| if self.image[c] == r { 1.0 } else { 0.0 })
    }

    /// `Q w` for a complex vector in Koopman coordinates.
    pub fn apply_complex(&self, w: &DVector<Complex64>) -> DVector<Complex64> {
        let mut y = DVector::zeros(w.len());
        for (i, &j) in self.image.iter().enumerate() {
            y[j] = w[i];
        }
        y
    }
}

/// Builds `Q` from the classification and verifies it commutes with the
/// diagonal spectrum (equal eigenvalues along every orbit).
pub fn induced_q(
    classification: &SymmetryClassification,
    spectrum: &[Complex64],
    group_tol: f64,
) -> Result<InducedKoopmanSymmetry, SymmetryError> {
    let n = spectrum.len();
    let mut image: Vec<usize> = (0..n).collect();
    for pair in &classification.reflectional {
        image[pair.i] = pair.j;
        image[pair.j] = pair.i;
    }
    for (i, &j) in image.iter().enumerate() {
        let from = spectrum[i];
        let to = spectrum[j];
        if (from - to).norm() > group_tol * (1.0 + from.norm()) {
            return Err(SymmetryError::CommutationFailure { i, from, to });
        }
    }
    let nonidentity = image.iter().enumerate().any(|(i, &j)| i != j);
    Ok(InducedKoopmanSymmetry { image, nonidentity })
}

/// Which result the symmetry route applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SymmetryRoute {
    /// State and measurement symmetric: unobservable.
    SymmetricUnobservable,
    /// Fewer measurements than the largest eigenvalue multiplicity.
    MultiplicityShortfall,
    /// Symmetry alone cannot decide; defer to the rank tests.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryVerdict {
    pub route: SymmetryRoute,
    /// Human-readable name of the applied result.
    pub theorem: String,
    pub rationale: String,
    pub measurement_symmetric: bool,
    /// Representative eigenvalue of a repeated group, when one is known.
    pub witness_lambda: Option<Complex64>,
    pub max_multiplicity: Option<usize>,
    /// False when no Koopman set is available and the span hypothesis is
    /// assumed rather than checked.
    pub span_checked: bool,
}

/// Applies the symmetry results: measurement symmetry forces unobservability;
/// otherwise a multiplicity exceeding the measurement count does; otherwise
/// the symmetry route is inconclusive and the rank tests decide. Never
/// returns "observable" on its own.
pub fn symmetry_verdict(
    sys: &NonlinearSystem,
    p: &PermutationSymmetry,
    kset: Option<&KoopmanSet>,
    samples: &[Vec<f64>],
    sym_tol: f64,
    group_tol: f64,
) -> Result<SymmetryVerdict, SymmetryError> {
    let state = verify_state_symmetry(sys, p, samples, sym_tol)?;
    if !state.pass {
        return Err(SymmetryError::StateNotSymmetric { residual: state.max_residual });
    }
    let meas = verify_measurement_symmetry(sys, p, samples, sym_tol)?;

    let group_data = kset.map(|k| {
        let groups = group_eigenvalues(&k.spectrum(), group_tol);
        let max_mult = groups.iter().map(|g| g.multiplicity).max().unwrap_or(0);
        let witness = groups
            .iter()
            .filter(|g| g.multiplicity >= 2)
            .max_by_key(|g| g.multiplicity)
            .map(|g| g.representative);
        (max_mult, witness)
    });

    if meas.pass {
        let (witness, span_checked, note) = match group_data {
            Some((_, witness)) => {
                let note = match witness {
                    Some(l) => format!(
                        "dynamics and measurement share the symmetry; repeated eigenvalue {l} \
                         witnesses the unobservable direction"
                    ),
                    None => "dynamics and measurement share the symmetry; the truncated set \
                             shows no repeated eigenvalue, rank test confirms independently"
                        .to_string(),
                };
                (witness, true, note)
            }
            None => (
                None,
                false,
                "dynamics and measurement share the symmetry; no Koopman set is available, \
                 the span hypothesis is assumed and trajectory indistinguishability is the \
                 supporting evidence"
                    .to_string(),
            ),
        };
        return Ok(SymmetryVerdict {
            route: SymmetryRoute::SymmetricUnobservable,
            theorem: "Theorem 3".to_string(),
            rationale: note,
            measurement_symmetric: true,
            witness_lambda: witness,
            max_multiplicity: group_data.map(|(m, _)| m),
            span_checked,
        });
    }

    if let Some((max_mult, witness)) = group_data {
        let q = sys.measurement_dim();
        if q < max_mult {
            return Ok(SymmetryVerdict {
                route: SymmetryRoute::MultiplicityShortfall,
                theorem: "Corollary 3".to_string(),
                rationale: format!(
                    "q = {q} < max eigenvalue multiplicity {max_mult}; too few measurements"
                ),
                measurement_symmetric: false,
                witness_lambda: witness,
                max_multiplicity: Some(max_mult),
                span_checked: true,
            });
        }
        return Ok(SymmetryVerdict {
            route: SymmetryRoute::Inconclusive,
            theorem: "none".to_string(),
            rationale: format!(
                "measurement is not symmetric and q = {q} >= max multiplicity {max_mult}; \
                 deferring to the rank tests"
            ),
            measurement_symmetric: false,
            witness_lambda: witness,
            max_multiplicity: Some(max_mult),
            span_checked: true,
        });
    }

    Ok(SymmetryVerdict {
        route: SymmetryRoute::Inconclusive,
        theorem: "none".to_string(),
        rationale: "measurement is not symmetric and no Koopman set is available".to_string(),
        measurement_symmetric: false,
        witness_lambda: None,
        max_multiplicity: None,
        span_checked: false,
    })
}

/// The eigenpair `(lambda, psi o P)`: by the symmetry result it must
/// revalidate against the generator with the eigenvalue unchanged.
pub fn reflected_eigenpair(pair: &KoopmanEigenpair, p: &PermutationSymmetry) -> KoopmanEigenpair {
    KoopmanEigenpair {
        lambda: pair.lambda,
        psi: p.compose(&pair.psi),
        mode: pair.mode.clone(),
    }
}
