//! Koopman eigenpairs and the canonical transform.
//!
//! A finite Koopman set turns the nonlinear system into a linear one: with
//! `z_i(x) = psi_i(x)` the dynamics become `z' = Lambda z`, the state is
//! recovered as `x = V z` through the modes, and the measurement expands as
//! `y = C z`. Complex conjugate eigenpairs occupy adjacent indices and are
//! materialized as real 2x2 blocks (real/imaginary parts of the leading
//! member), so `Lambda`, `V`, and `C` are real matrices suitable for
//! simulation and reporting; complex data is kept alongside for the spectral
//! rank analysis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::exprlang::{lie_derivative, EvalError, Expr, ExprError};
use crate::linalg;
use crate::sampling::streams;
use crate::NonlinearSystem;

/// A scalar observable with an optional imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexExpr {
    pub re: Expr<f64>,
    pub im: Option<Expr<f64>>,
}

impl ComplexExpr {
    pub fn real(re: Expr<f64>) -> Self {
        ComplexExpr { re, im: None }
    }

    pub fn complex(re: Expr<f64>, im: Expr<f64>) -> Self {
        ComplexExpr { re, im: Some(im) }
    }

    pub fn is_real(&self) -> bool {
        self.im.is_none()
    }

    pub fn conjugate(&self) -> Self {
        ComplexExpr {
            re: self.re.clone(),
            im: self.im.as_ref().map(|im| -im.clone()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64, EvalError> {
        let re = self.re.evaluate(x)?;
        let im = match &self.im {
            Some(e) => e.evaluate(x)?,
            None => 0.0,
        };
        Ok(Complex64::new(re, im))
    }

    pub fn max_var_index(&self) -> usize {
        self.re
            .max_var_index()
            .max(self.im.as_ref().map_or(0, |e| e.max_var_index()))
    }

    /// Composition with a variable relabeling (see `Expr::relabel_vars`).
    pub fn relabel_vars(&self, map: &impl Fn(usize) -> usize) -> Self {
        ComplexExpr {
            re: self.re.relabel_vars(map),
            im: self.im.as_ref().map(|e| e.relabel_vars(map)),
        }
    }
}

/// One Koopman eigenvalue/eigenfunction/mode triple.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanEigenpair {
    pub lambda: Complex64,
    pub psi: ComplexExpr,
    pub mode: Vec<Complex64>,
}

/// Position of an index in the real canonical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Real eigenvalue; the coordinate is `psi_i(x)` itself.
    Real,
    /// First member of a conjugate pair; carries `Re psi_i(x)`.
    PairFirst,
    /// Second member of a conjugate pair; carries `Im psi_{i-1}(x)`.
    PairSecond,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KoopmanError {
    #[error("the Koopman set is empty")]
    EmptySet,
    #[error("mode of eigenpair {index} is zero; the Koopman set excludes zero modes")]
    ZeroMode { index: usize },
    #[error("mode of eigenpair {index} has {got} entries, expected state dimension {expected}")]
    ModeDimension { index: usize, got: usize, expected: usize },
    #[error("eigenfunction {index} references x{var} but the state dimension is {expected}")]
    EigenfunctionDimension { index: usize, var: usize, expected: usize },
    #[error("complex eigenvalue at index {index} has no adjacent conjugate partner")]
    UnpairedComplexEigenvalue { index: usize },
    #[error("pair at indices {index}/{partner} is not conjugate: {detail}")]
    NotConjugatePair { index: usize, partner: usize, detail: String },
    #[error("eigenvalue {index} is real but its eigenfunction or mode is not")]
    RealSlotComplex { index: usize },
    #[error("eigenfunction values over the sample are dependent: rank {rank} of {size}")]
    DependentEigenfunctions { rank: usize, size: usize },
    #[error("cannot span the state: reconstruction residual {residual:.3e} exceeds {tol:.1e}")]
    StateNotInSpan { residual: f64, tol: f64 },
    #[error("measurement not in Koopman span: fit residual {residual:.3e} exceeds {tol:.1e}")]
    MeasurementNotInSpan { residual: f64, tol: f64 },
    #[error("generator residual of eigenpair {index}: max {max:.3e} exceeds {tol:.3e}")]
    GeneratorResidual { index: usize, max: f64, tol: f64 },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// An ordered, linearly independent collection of eigenpairs with nonzero
/// modes. Complex eigenvalues appear in conjugate pairs at adjacent indices.
#[derive(Debug, Clone)]
pub struct KoopmanSet {
    pairs: Vec<KoopmanEigenpair>,
    n: usize,
    layout: Vec<Slot>,
    generator_tol: f64,
}

/// Treats an eigenvalue as real when its imaginary part is at rounding level.
fn is_real_lambda(lambda: Complex64) -> bool {
    lambda.im.abs() <= 1e-12 * (1.0 + lambda.norm())
}

impl KoopmanSet {
    /// Structural validation: dimensions, nonzero modes, conjugate adjacency.
    /// Pointwise checks (independence, span, generator residuals) live in
    /// [`validate_set`] and [`build_canonical`].
    pub fn new(pairs: Vec<KoopmanEigenpair>, n: usize) -> Result<Self, KoopmanError> {
        if pairs.is_empty() {
            return Err(KoopmanError::EmptySet);
        }
        for (index, p) in pairs.iter().enumerate() {
            if p.mode.len() != n {
                return Err(KoopmanError::ModeDimension {
                    index,
                    got: p.mode.len(),
                    expected: n,
                });
            }
            if p.mode.iter().all(|v| v.norm() == 0.0) {
                return Err(KoopmanError::ZeroMode { index });
            }
            let var = p.psi.max_var_index();
            if var > n {
                return Err(KoopmanError::EigenfunctionDimension { index, var, expected: n });
            }
        }

        let mut layout = vec![Slot::Real; pairs.len()];
        let mut i = 0;
        while i < pairs.len() {
            let lambda = pairs[i].lambda;
            if is_real_lambda(lambda) {
                if !pairs[i].psi.is_real()
                    || pairs[i].mode.iter().any(|v| v.im.abs() > 1e-9)
                {
                    return Err(KoopmanError::RealSlotComplex { index: i });
                }
                layout[i] = Slot::Real;
                i += 1;
                continue;
            }
            let partner = i + 1;
            if partner >= pairs.len() {
                return Err(KoopmanError::UnpairedComplexEigenvalue { index: i });
            }
            let expected = lambda.conj();
            let got = pairs[partner].lambda;
            if (got - expected).norm() > 1e-9 * (1.0 + lambda.norm()) {
                return Err(KoopmanError::NotConjugatePair {
                    index: i,
                    partner,
                    detail: format!("eigenvalue {got} is not the conjugate of {lambda}"),
                });
            }
            for (k, (a, b)) in pairs[i].mode.iter().zip(&pairs[partner].mode).enumerate() {
                if (b - a.conj()).norm() > 1e-9 * (1.0 + a.norm()) {
                    return Err(KoopmanError::NotConjugatePair {
                        index: i,
                        partner,
                        detail: format!("mode entry {k} is not conjugated"),
                    });
                }
            }
            layout[i] = Slot::PairFirst;
            layout[partner] = Slot::PairSecond;
            i += 2;
        }

        Ok(KoopmanSet { pairs, n, layout, generator_tol: 1e-6 })
    }

    /// Overrides the generator-residual tolerance used when validating this
    /// set (sets built from rounded published coefficients need more slack).
    pub fn with_generator_tol(mut self, tol: f64) -> Self {
        self.generator_tol = tol;
        self
    }

    pub fn pairs(&self) -> &[KoopmanEigenpair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn layout(&self) -> &[Slot] {
        &self.layout
    }

    pub fn generator_tol(&self) -> f64 {
        self.generator_tol
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        self.pairs.iter().map(|p| p.lambda).collect()
    }

    /// Matrix of eigenfunction values, one row per sample point.
    pub fn values_matrix(&self, points: &[Vec<f64>]) -> Result<DMatrix<Complex64>, EvalError> {
        let mut m = DMatrix::zeros(points.len(), self.pairs.len());
        for (r, x) in points.iter().enumerate() {
            for (c, p) in self.pairs.iter().enumerate() {
                m[(r, c)] = p.psi.eval(x)?;
            }
        }
        Ok(m)
    }

    /// The transformed coordinates `z = T(x)`: `psi_i(x)` on real slots,
    /// real/imaginary parts of the leading member on conjugate pairs.
    pub fn transform_at(&self, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        let mut z = DVector::zeros(self.pairs.len());
        let mut i = 0;
        while i < self.pairs.len() {
            match self.layout[i] {
                Slot::Real => {
                    z[i] = self.pairs[i].psi.eval(x)?.re;
                    i += 1;
                }
                Slot::PairFirst => {
                    let v = self.pairs[i].psi.eval(x)?;
                    z[i] = v.re;
                    z[i + 1] = v.im;
                    i += 2;
                }
                Slot::PairSecond => unreachable!("layout skips pair seconds"),
            }
        }
        Ok(z)
    }
}

/// Residuals of the generator equation `L_f psi = lambda psi` over a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResidualReport {
    pub index: usize,
    pub max: f64,
    pub mean: f64,
    /// Largest `|psi|` seen; the pass threshold is `tol * (1 + scale)`.
    pub scale: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Checks one eigenpair against the generator equation on the given points.
pub fn validate_eigenpair(
    sys: &NonlinearSystem,
    pair: &KoopmanEigenpair,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<EigenResidualReport, KoopmanError> {
    validate_indexed(sys, pair, usize::MAX, samples, tol)
}

fn validate_indexed(
    sys: &NonlinearSystem,
    pair: &KoopmanEigenpair,
    index: usize,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<EigenResidualReport, KoopmanError> {
    let l_re = lie_derivative(&pair.psi.re, sys.field())?;
    let l_im = match &pair.psi.im {
        Some(im) => Some(lie_derivative(im, sys.field())?),
        None => None,
    };
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    let mut scale = 0.0f64;
    for x in samples {
        let lf = Complex64::new(
            l_re.evaluate(x)?,
            l_im.as_ref().map_or(Ok(0.0), |e| e.evaluate(x))?,
        );
        let psi = pair.psi.eval(x)?;
        let r = (lf - pair.lambda * psi).norm();
        max = max.max(r);
        sum += r;
        scale = scale.max(psi.norm());
    }
    let mean = if samples.is_empty() { 0.0 } else { sum / samples.len() as f64 };
    let pass = max <= tol * (1.0 + scale);
    Ok(EigenResidualReport { index, max, mean, scale, tol, pass })
}

/// Validates every eigenpair of the set; does not stop at the first failure.
pub fn validate_set(
    sys: &NonlinearSystem,
    kset: &KoopmanSet,
    samples: &[Vec<f64>],
) -> Result<Vec<EigenResidualReport>, KoopmanError> {
    kset.pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| validate_indexed(sys, p, i, samples, kset.generator_tol()))
        .collect()
}

/// As [`validate_set`], but errors on the first failing eigenpair.
pub fn ensure_valid_set(
    sys: &NonlinearSystem,
    kset: &KoopmanSet,
    samples: &[Vec<f64>],
) -> Result<Vec<EigenResidualReport>, KoopmanError> {
    let reports = validate_set(sys, kset, samples)?;
    for r in &reports {
        if !r.pass {
            return Err(KoopmanError::GeneratorResidual {
                index: r.index,
                max: r.max,
                tol: r.tol * (1.0 + r.scale),
            });
        }
    }
    Ok(reports)
}

/// Numerical knobs for building the canonical system.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalConfig {
    pub seed: u64,
    /// Sample count factor: `oversample * N` points (at least 30).
    pub oversample: usize,
    /// Absolute residual allowed in the state/measurement span checks.
    pub span_tol: f64,
    /// Relative SVD cutoff for the independence check.
    pub rank_rel: f64,
}

impl Default for CanonicalConfig {
    fn default() -> Self {
        CanonicalConfig {
            seed: 42,
            oversample: 10,
            span_tol: 1e-8,
            rank_rel: linalg::RANK_REL_EXACT,
        }
    }
}

/// Block-diagonal real form of the truncated Koopman representation.
#[derive(Debug, Clone)]
pub struct CanonicalSystem {
    n: usize,
    spectrum: Vec<Complex64>,
    lambda: DMatrix<f64>,
    v: DMatrix<f64>,
    c_real: DMatrix<f64>,
    c_complex: DMatrix<Complex64>,
    kset: KoopmanSet,
}

impl CanonicalSystem {
    pub fn size(&self) -> usize {
        self.spectrum.len()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn measurement_dim(&self) -> usize {
        self.c_real.nrows()
    }

    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// Block-diagonal real `Lambda`: `[lambda]` for real eigenvalues,
    /// `[[Re, -Im], [Im, Re]]` on conjugate pairs.
    pub fn lambda_matrix(&self) -> &DMatrix<f64> {
        &self.lambda
    }

    /// Real `n x N` reconstruction matrix.
    pub fn v_matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Real `q x N` measurement expansion acting on the real coordinates.
    pub fn c_matrix(&self) -> &DMatrix<f64> {
        &self.c_real
    }

    /// Complex measurement coefficients in the eigenfunction basis.
    pub fn c_complex(&self) -> &DMatrix<Complex64> {
        &self.c_complex
    }

    pub fn koopman_set(&self) -> &KoopmanSet {
        &self.kset
    }

    /// `z = T(x)`.
    pub fn transform(&self, x: &[f64]) -> Result<DVector<f64>, EvalError> {
        self.kset.transform_at(x)
    }

    /// `x = V z`; for `z = T(x)` this returns `x` up to the span residual.
    pub fn reconstruct_state(&self, z: &DVector<f64>) -> Result<DVector<f64>, KoopmanError> {
        if z.len() != self.size() {
            return Err(KoopmanError::ModeDimension {
                index: 0,
                got: z.len(),
                expected: self.size(),
            });
        }
        Ok(&self.v * z)
    }

    /// Propagates `z(t) = exp(Lambda t) z0` block by block.
    pub fn propagate(&self, z0: &DVector<f64>, t: f64) -> DVector<f64> {
        let mut z = DVector::zeros(z0.len());
        let layout = self.kset.layout();
        let mut i = 0;
        while i < layout.len() {
            match layout[i] {
                Slot::Real => {
                    z[i] = (self.spectrum[i].re * t).exp() * z0[i];
                    i += 1;
                }
                Slot::PairFirst => {
                    let a = self.spectrum[i].re;
                    let b = self.spectrum[i].im;
                    let growth = (a * t).exp();
                    let (s, c) = (b * t).sin_cos();
                    z[i] = growth * (c * z0[i] - s * z0[i + 1]);
                    z[i + 1] = growth * (s * z0[i] + c * z0[i + 1]);
                    i += 2;
                }
                Slot::PairSecond => unreachable!("layout skips pair seconds"),
            }
        }
        z
    }
}

/// Solves `min || h(x_s) - C psi(x_s) ||` over the sample by SVD least
/// squares. Errors when the fit residual (rms per sample) exceeds `tol`:
/// the measurement is then outside the Koopman span and the spectral
/// analysis cannot proceed.
pub fn expand_measurement(
    sys: &NonlinearSystem,
    kset: &KoopmanSet,
    samples: &[Vec<f64>],
    tol: f64,
) -> Result<(DMatrix<Complex64>, f64), KoopmanError> {
    let psi = kset.values_matrix(samples)?;
    let q = sys.measurement_dim();
    let mut c = DMatrix::zeros(q, kset.len());
    let mut worst = 0.0f64;
    let mut ys = vec![DVector::zeros(samples.len()); q];
    for (s, x) in samples.iter().enumerate() {
        let y = sys.measure_at(x)?;
        for k in 0..q {
            ys[k][s] = Complex64::new(y[k], 0.0);
        }
    }
    for k in 0..q {
        let (row, residual) = linalg::lstsq_c(&psi, &ys[k]);
        let rms = residual / (samples.len() as f64).sqrt();
        worst = worst.max(rms);
        for j in 0..kset.len() {
            c[(k, j)] = row[j];
        }
    }
    if worst > tol {
        return Err(KoopmanError::MeasurementNotInSpan { residual: worst, tol });
    }
    Ok((c, worst))
}

/// Assembles the canonical system: block-diagonal `Lambda`, reconstruction
/// `V` from the modes, and measurement expansion `C`.
///
/// Preconditions checked here: eigenfunction independence over the sample,
/// conjugate-pair consistency, the full state in the span of the set, and the
/// measurement in the span of the set. Generator residuals are the set's own
/// invariant (see [`ensure_valid_set`]).
pub fn build_canonical(
    sys: &NonlinearSystem,
    kset: &KoopmanSet,
    cfg: &CanonicalConfig,
) -> Result<CanonicalSystem, KoopmanError> {
    let n = sys.state_dim();
    let size = kset.len();
    let count = (cfg.oversample * size).max(30);
    let samples = sys.sample_domain(count, cfg.seed, streams::KOOPMAN_VALIDATION);

    // Independence of the eigenfunctions as sampled functions.
    let values = kset.values_matrix(&samples)?;
    let (rank, _) = linalg::numerical_rank_c(&values, cfg.rank_rel);
    if rank < size {
        return Err(KoopmanError::DependentEigenfunctions { rank, size });
    }

    // Conjugate pairs must be conjugate as functions, and real slots real.
    for (i, slot) in kset.layout().iter().enumerate() {
        match slot {
            Slot::PairFirst => {
                for (s, x) in samples.iter().enumerate() {
                    let a = values[(s, i)];
                    let b = values[(s, i + 1)];
                    if (b - a.conj()).norm() > 1e-9 * (1.0 + a.norm()) {
                        return Err(KoopmanError::NotConjugatePair {
                            index: i,
                            partner: i + 1,
                            detail: format!("eigenfunction values differ at sample point {x:?}"),
                        });
                    }
                }
            }
            Slot::Real => {
                for (s, x) in samples.iter().enumerate() {
                    let a = values[(s, i)];
                    if a.im.abs() > 1e-9 * (1.0 + a.norm()) {
                        return Err(KoopmanError::NotConjugatePair {
                            index: i,
                            partner: i,
                            detail: format!(
                                "real eigenvalue but complex eigenfunction value at {x:?}"
                            ),
                        });
                    }
                }
            }
            Slot::PairSecond => {}
        }
    }

    // Reconstruction of the full state from the modes.
    let mut worst = 0.0f64;
    for (s, x) in samples.iter().enumerate() {
        for coord in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, p) in kset.pairs().iter().enumerate() {
                acc += values[(s, j)] * p.mode[coord];
            }
            worst = worst.max((acc.re - x[coord]).abs()).max(acc.im.abs());
        }
    }
    if worst > cfg.span_tol {
        return Err(KoopmanError::StateNotInSpan { residual: worst, tol: cfg.span_tol });
    }

    // Real block-diagonal Lambda and reconstruction V.
    let mut lambda = DMatrix::zeros(size, size);
    let mut v = DMatrix::zeros(n, size);
    for (i, slot) in kset.layout().iter().enumerate() {
        let lam = kset.pairs()[i].lambda;
        match slot {
            Slot::Real => {
                lambda[(i, i)] = lam.re;
                for coord in 0..n {
                    v[(coord, i)] = kset.pairs()[i].mode[coord].re;
                }
            }
            Slot::PairFirst => {
                lambda[(i, i)] = lam.re;
                lambda[(i, i + 1)] = -lam.im;
                lambda[(i + 1, i)] = lam.im;
                lambda[(i + 1, i + 1)] = lam.re;
                for coord in 0..n {
                    let m = kset.pairs()[i].mode[coord];
                    v[(coord, i)] = 2.0 * m.re;
                    v[(coord, i + 1)] = -2.0 * m.im;
                }
            }
            Slot::PairSecond => {}
        }
    }

    // Measurement expansion on an independent sample stream.
    let fit_samples = sys.sample_domain(count, cfg.seed, streams::MEASUREMENT_FIT);
    let (c_complex, _) = expand_measurement(sys, kset, &fit_samples, cfg.span_tol)?;
    let q = sys.measurement_dim();
    let mut c_real = DMatrix::zeros(q, size);
    for (i, slot) in kset.layout().iter().enumerate() {
        for k in 0..q {
            let ck = c_complex[(k, i)];
            match slot {
                Slot::Real => c_real[(k, i)] = ck.re,
                Slot::PairFirst => {
                    c_real[(k, i)] = 2.0 * ck.re;
                    c_real[(k, i + 1)] = -2.0 * ck.im;
                }
                Slot::PairSecond => {}
            }
        }
    }

    Ok(CanonicalSystem {
        n,
        spectrum: kset.spectrum(),
        lambda,
        v,
        c_real,
        c_complex,
        kset: kset.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;
    use crate::models;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn example2_eigenpairs_validate() {
        let m = models::example2();
        let samples = m.system.sample_domain(100, 7, 99);
        let reports = validate_set(&m.system, m.kset.as_ref().unwrap(), &samples).unwrap();
        assert!(reports.iter().all(|r| r.pass), "{reports:?}");
    }

    #[test]
    fn wrong_eigenvalue_fails_validation() {
        let m = models::example2();
        let samples = m.system.sample_domain(100, 7, 99);
        let mut pair = m.kset.as_ref().unwrap().pairs()[2].clone();
        assert_eq!(pair.lambda, c(2.0, 0.0));
        pair.lambda = c(3.0, 0.0);
        let report = validate_eigenpair(&m.system, &pair, &samples, 1e-6).unwrap();
        assert!(!report.pass);
    }

    #[test]
    fn constant_function_is_a_trivial_eigenfunction() {
        let m = models::example2();
        let samples = m.system.sample_domain(100, 7, 99);
        let pair = KoopmanEigenpair {
            lambda: c(0.0, 0.0),
            psi: ComplexExpr::real(Expr::constant(1.0)),
            mode: vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
        };
        let report = validate_eigenpair(&m.system, &pair, &samples, 1e-6).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn example2_canonical_data_matches_the_published_form() {
        let m = models::example2();
        let cs = build_canonical(
            &m.system,
            m.kset.as_ref().unwrap(),
            &CanonicalConfig::default(),
        )
        .unwrap();
        let lambda = cs.lambda_matrix();
        let expected = [1.0, 1.0, 2.0, 2.0, 4.0];
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { expected[i] } else { 0.0 };
                assert!((lambda[(i, j)] - want).abs() < 1e-12);
            }
        }
        let c_mat = cs.c_matrix();
        let want_c = [0.0, 0.0, 2.0, 2.0, 1.0];
        for j in 0..5 {
            assert!(
                (c_mat[(0, j)] - want_c[j]).abs() < 1e-8,
                "C[{j}] = {}",
                c_mat[(0, j)]
            );
        }
    }

    #[test]
    fn example2_alt_measurement_expansion() {
        let m = models::example2();
        let sys = m.alt_system.as_ref().unwrap();
        let cs = build_canonical(sys, m.kset.as_ref().unwrap(), &CanonicalConfig::default())
            .unwrap();
        let want = [[2.0, 0.0, 1.0, 0.0, 1.0], [0.0, 1.0, 0.0, 1.0, 1.0]];
        for k in 0..2 {
            for j in 0..5 {
                assert!(
                    (cs.c_matrix()[(k, j)] - want[k][j]).abs() < 1e-8,
                    "C[{k},{j}] = {}",
                    cs.c_matrix()[(k, j)]
                );
            }
        }
    }

    #[test]
    fn coordinate_measurement_selects_its_coordinate() {
        let m = models::example2();
        let sys = m
            .system
            .with_measurement(
                crate::ExprVector::new(vec![parse("-x1^2 - x2^2 + x3", 3).unwrap()], 3).unwrap(),
            )
            .unwrap();
        let cs = build_canonical(&sys, m.kset.as_ref().unwrap(), &CanonicalConfig::default())
            .unwrap();
        let want = [0.0, 0.0, 0.0, 0.0, 1.0];
        for j in 0..5 {
            assert!((cs.c_matrix()[(0, j)] - want[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn reconstruction_round_trips_on_the_printed_example_point() {
        let m = models::example2();
        let cs = build_canonical(
            &m.system,
            m.kset.as_ref().unwrap(),
            &CanonicalConfig::default(),
        )
        .unwrap();
        let x = [1.0, 2.0, 1.0];
        let z = cs.transform(&x).unwrap();
        assert_eq!(z.as_slice(), &[1.0, 2.0, 1.0, 4.0, -4.0]);
        let back = cs.reconstruct_state(&z).unwrap();
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-10);
        }

        let zero = cs.transform(&[0.0, 0.0, 0.0]).unwrap();
        let back = cs.reconstruct_state(&zero).unwrap();
        assert!(back.iter().all(|v| v.abs() == 0.0));
    }

    #[test]
    fn directed_consensus_blocks() {
        let m = models::consensus_directed();
        let cs = build_canonical(
            &m.system,
            m.kset.as_ref().unwrap(),
            &CanonicalConfig::default(),
        )
        .unwrap();
        // One 1x1 zero block and one 2x2 block of magnitude sqrt(3) and
        // phase magnitude 5*pi/6.
        let spectrum = cs.spectrum();
        let zero_count = spectrum.iter().filter(|l| l.norm() < 1e-9).count();
        assert_eq!(zero_count, 1);
        let complex: Vec<_> = spectrum.iter().filter(|l| l.im.abs() > 1e-9).collect();
        assert_eq!(complex.len(), 2);
        for l in complex {
            assert!((l.norm() - 3.0f64.sqrt()).abs() < 1e-9, "|lambda| = {}", l.norm());
            assert!(
                (l.arg().abs() - 5.0 * std::f64::consts::PI / 6.0).abs() < 1e-9,
                "angle = {}",
                l.arg()
            );
        }
        // The 2x2 block is the generator of the conjugate pair.
        let lam = cs.lambda_matrix();
        let pair_index = cs
            .koopman_set()
            .layout()
            .iter()
            .position(|s| *s == Slot::PairFirst)
            .unwrap();
        let a = lam[(pair_index, pair_index)];
        let b = lam[(pair_index + 1, pair_index)];
        assert!((a - (-1.5)).abs() < 1e-9);
        assert!((b.abs() - 0.75f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn set_that_cannot_span_the_state_is_rejected() {
        let m = models::example2();
        let trivial = KoopmanSet::new(
            vec![KoopmanEigenpair {
                lambda: c(0.0, 0.0),
                psi: ComplexExpr::real(Expr::constant(1.0)),
                mode: vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            }],
            3,
        )
        .unwrap();
        match build_canonical(&m.system, &trivial, &CanonicalConfig::default()) {
            Err(KoopmanError::StateNotInSpan { .. }) => {}
            other => panic!("expected span failure, got {other:?}"),
        }
    }

    #[test]
    fn unpaired_complex_eigenvalue_is_rejected() {
        let err = KoopmanSet::new(
            vec![KoopmanEigenpair {
                lambda: c(0.0, 1.0),
                psi: ComplexExpr::complex(parse("x1", 1).unwrap(), parse("x1", 1).unwrap()),
                mode: vec![c(1.0, 0.0)],
            }],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, KoopmanError::UnpairedComplexEigenvalue { index: 0 }));
    }

    #[test]
    fn zero_mode_is_rejected() {
        let err = KoopmanSet::new(
            vec![KoopmanEigenpair {
                lambda: c(1.0, 0.0),
                psi: ComplexExpr::real(parse("x1", 1).unwrap()),
                mode: vec![c(0.0, 0.0)],
            }],
            1,
        )
        .unwrap_err();
        assert!(matches!(err, KoopmanError::ZeroMode { index: 0 }));
    }

    #[test]
    fn spectral_propagation_tracks_the_nonlinear_flow() {
        let m = models::example2();
        let cs = build_canonical(
            &m.system,
            m.kset.as_ref().unwrap(),
            &CanonicalConfig::default(),
        )
        .unwrap();
        let x0 = [0.4, -0.8, 0.9];
        let z0 = cs.transform(&x0).unwrap();
        let traj = crate::dynamics::flow(&m.system, &x0, 1.0, 1e-3).unwrap();
        for (k, t) in traj.times.iter().enumerate().step_by(100) {
            let z = cs.propagate(&z0, *t);
            let x = cs.reconstruct_state(&z).unwrap();
            for (a, b) in x.iter().zip(&traj.states[k]) {
                assert!((a - b).abs() < 1e-5, "t = {t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn eigenfunction_products_are_eigenfunctions_with_summed_eigenvalues() {
        let m = models::example2();
        let kset = m.kset.as_ref().unwrap();
        let samples = m.system.sample_domain(100, 7, 99);
        for (i, j) in [(0usize, 1usize), (0, 2), (1, 3), (2, 4)] {
            let a = &kset.pairs()[i];
            let b = &kset.pairs()[j];
            let product = KoopmanEigenpair {
                lambda: a.lambda + b.lambda,
                psi: ComplexExpr::real(a.psi.re.clone() * b.psi.re.clone()),
                mode: vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)],
            };
            let report = validate_eigenpair(&m.system, &product, &samples, 1e-6).unwrap();
            assert!(report.pass, "product of {i} and {j}: {report:?}");
        }
    }

    #[test]
    fn measurement_expansion_generalizes_to_held_out_points() {
        let m = models::example2();
        let cs = build_canonical(
            &m.system,
            m.kset.as_ref().unwrap(),
            &CanonicalConfig::default(),
        )
        .unwrap();
        let fresh = m.system.sample_domain(100, 1234, streams::HOLDOUT);
        for x in &fresh {
            let z = cs.transform(x).unwrap();
            let y = m.system.measure_at(x).unwrap();
            let yz = cs.c_matrix() * z;
            for k in 0..y.len() {
                assert!((yz[k] - y[k]).abs() <= 1e-8, "{} vs {}", yz[k], y[k]);
            }
        }
    }
}
