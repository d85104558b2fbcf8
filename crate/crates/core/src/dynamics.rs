//! Nonlinear systems and fixed-step trajectory integration.

use thiserror::Error;

use crate::exprlang::{EvalError, ExprError, ExprVector};
use crate::sampling::{sample_box, seeded_rng, streams};
use crate::scalar::Scalar;

/// Aborts integration when a state coordinate drops below a floor.
///
/// Used by models whose field divides by a coordinate (oscillator amplitudes):
/// the integration stops cleanly before the term becomes singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGuard<T> {
    /// 0-based coordinate index.
    pub coord: usize,
    pub min: T,
}

/// An autonomous nonlinear system `x' = f(x)`, `y = h(x)` on a box-shaped
/// sampling domain.
#[derive(Debug, Clone)]
pub struct NonlinearSystem<T> {
    name: String,
    n: usize,
    q: usize,
    f: ExprVector<T>,
    h: ExprVector<T>,
    domain_box: Vec<(T, T)>,
    guards: Vec<StateGuard<T>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error("state dimension must be at least 1")]
    EmptyState,
    #[error("measurement dimension must be at least 1")]
    EmptyMeasurement,
    #[error("field has {got} components, expected state dimension {expected}")]
    FieldDimension { got: usize, expected: usize },
    #[error("domain box has {got} intervals, expected {expected}")]
    DomainDimension { got: usize, expected: usize },
    #[error("domain interval {index} is empty ({lo} > {hi})")]
    EmptyInterval { index: usize, lo: f64, hi: f64 },
    #[error("{context} faulted on a domain sample: {source}")]
    SampleFault {
        context: &'static str,
        source: EvalError,
    },
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Integration failure, reported with the time and state where it happened.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("step size must be positive, got {0}")]
    BadStep(f64),
    #[error("initial state has {got} coordinates, expected {expected}")]
    BadInitialState { got: usize, expected: usize },
    #[error("initial state coordinate {index} = {value} outside the domain box [{lo}, {hi}]")]
    OutsideDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("evaluation fault at t = {time}: {source} (state {state:?})")]
    EvaluationFault {
        time: f64,
        state: Vec<f64>,
        source: EvalError,
    },
    #[error("guard tripped at t = {time}: x{coord} = {value} < {min} (state {state:?})")]
    GuardTripped {
        time: f64,
        coord: usize,
        value: f64,
        min: f64,
        state: Vec<f64>,
    },
}

impl<T: Scalar> NonlinearSystem<T> {
    /// Builds and validates a system. The field and measurement must evaluate
    /// fault-free on a 100-point sample of the domain box.
    pub fn new(
        name: impl Into<String>,
        f: ExprVector<T>,
        h: ExprVector<T>,
        domain_box: Vec<(T, T)>,
    ) -> Result<Self, DynamicsError> {
        Self::with_guards(name, f, h, domain_box, Vec::new())
    }

    pub fn with_guards(
        name: impl Into<String>,
        f: ExprVector<T>,
        h: ExprVector<T>,
        domain_box: Vec<(T, T)>,
        guards: Vec<StateGuard<T>>,
    ) -> Result<Self, DynamicsError> {
        let n = f.dim();
        if n == 0 {
            return Err(DynamicsError::EmptyState);
        }
        if h.is_empty() {
            return Err(DynamicsError::EmptyMeasurement);
        }
        if f.len() != n {
            return Err(DynamicsError::FieldDimension { got: f.len(), expected: n });
        }
        if h.dim() != n {
            return Err(DynamicsError::FieldDimension { got: h.dim(), expected: n });
        }
        if domain_box.len() != n {
            return Err(DynamicsError::DomainDimension { got: domain_box.len(), expected: n });
        }
        for (i, &(lo, hi)) in domain_box.iter().enumerate() {
            if lo > hi {
                return Err(DynamicsError::EmptyInterval {
                    index: i,
                    lo: lo.to_f64().unwrap_or(f64::NAN),
                    hi: hi.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        let sys = NonlinearSystem {
            name: name.into(),
            n,
            q: h.len(),
            f,
            h,
            domain_box,
            guards,
        };
        let mut rng = seeded_rng(0, streams::SYSTEM_VALIDATION);
        for x in sample_box(&sys.domain_box, 100, &mut rng) {
            sys.f
                .evaluate(&x)
                .map_err(|source| DynamicsError::SampleFault { context: "field", source })?;
            sys.h
                .evaluate(&x)
                .map_err(|source| DynamicsError::SampleFault { context: "measurement", source })?;
        }
        Ok(sys)
    }

    /// Same system with a different measurement.
    pub fn with_measurement(&self, h: ExprVector<T>) -> Result<Self, DynamicsError> {
        Self::with_guards(
            self.name.clone(),
            self.f.clone(),
            h,
            self.domain_box.clone(),
            self.guards.clone(),
        )
    }

    /// Same system with the domain box padded by `pad` on every side.
    /// Perturbation-based analyses use this so that `x0 ± eps` stays
    /// admissible when `x0` sits on the box boundary.
    pub fn widen_domain(&self, pad: T) -> Result<Self, DynamicsError> {
        let widened = self
            .domain_box
            .iter()
            .map(|&(lo, hi)| (lo - pad, hi + pad))
            .collect();
        Self::with_guards(
            self.name.clone(),
            self.f.clone(),
            self.h.clone(),
            widened,
            self.guards.clone(),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn measurement_dim(&self) -> usize {
        self.q
    }

    pub fn field(&self) -> &ExprVector<T> {
        &self.f
    }

    pub fn measurement(&self) -> &ExprVector<T> {
        &self.h
    }

    pub fn domain_box(&self) -> &[(T, T)] {
        &self.domain_box
    }

    pub fn field_at(&self, x: &[T]) -> Result<Vec<T>, EvalError> {
        self.f.evaluate(x)
    }

    pub fn measure_at(&self, x: &[T]) -> Result<Vec<T>, EvalError> {
        self.h.evaluate(x)
    }

    /// Draws `count` points from the domain box with the given seed.
    pub fn sample_domain(&self, count: usize, seed: u64, stream: u64) -> Vec<Vec<T>> {
        sample_box(&self.domain_box, count, &mut seeded_rng(seed, stream))
    }

    fn check_guards(&self, t: T, x: &[T]) -> Result<(), FlowError> {
        for g in &self.guards {
            if x[g.coord] < g.min {
                return Err(FlowError::GuardTripped {
                    time: t.to_f64().unwrap_or(f64::NAN),
                    coord: g.coord + 1,
                    value: x[g.coord].to_f64().unwrap_or(f64::NAN),
                    min: g.min.to_f64().unwrap_or(f64::NAN),
                    state: to_f64_vec(x),
                });
            }
        }
        Ok(())
    }
}

fn to_f64_vec<T: Scalar>(x: &[T]) -> Vec<f64> {
    x.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
}

/// A sampled state/measurement history on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub measurements: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[T] {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// Keeps every `stride`-th sample (and always the last one).
    pub fn thinned(&self, stride: usize) -> Trajectory<T> {
        let stride = stride.max(1);
        let last = self.len().saturating_sub(1);
        let keep = |i: &usize| *i % stride == 0 || *i == last;
        Trajectory {
            times: self
                .times
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(i))
                .map(|(_, v)| *v)
                .collect(),
            states: self
                .states
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(i))
                .map(|(_, v)| v.clone())
                .collect(),
            measurements: self
                .measurements
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(i))
                .map(|(_, v)| v.clone())
                .collect(),
        }
    }
}

/// Integrates the flow map with classical fixed-step 4th-order Runge-Kutta,
/// storing state and measurement at every step.
///
/// The number of steps is `round(t_final / dt)`; stored times are `i * dt`
/// recomputed per step, so identical inputs give bit-identical trajectories.
pub fn flow<T: Scalar>(
    sys: &NonlinearSystem<T>,
    x0: &[T],
    t_final: T,
    dt: T,
) -> Result<Trajectory<T>, FlowError> {
    if dt <= T::zero() {
        return Err(FlowError::BadStep(dt.to_f64().unwrap_or(f64::NAN)));
    }
    if x0.len() != sys.state_dim() {
        return Err(FlowError::BadInitialState { got: x0.len(), expected: sys.state_dim() });
    }
    for (i, (&xi, &(lo, hi))) in x0.iter().zip(sys.domain_box()).enumerate() {
        if xi < lo || xi > hi {
            return Err(FlowError::OutsideDomain {
                index: i + 1,
                value: xi.to_f64().unwrap_or(f64::NAN),
                lo: lo.to_f64().unwrap_or(f64::NAN),
                hi: hi.to_f64().unwrap_or(f64::NAN),
            });
        }
    }

    let steps = (t_final / dt)
        .round()
        .to_usize()
        .ok_or_else(|| FlowError::BadStep(dt.to_f64().unwrap_or(f64::NAN)))?;

    let eval_field = |t: T, x: &[T]| -> Result<Vec<T>, FlowError> {
        sys.field_at(x).map_err(|source| FlowError::EvaluationFault {
            time: t.to_f64().unwrap_or(f64::NAN),
            state: to_f64_vec(x),
            source,
        })
    };
    let eval_measurement = |t: T, x: &[T]| -> Result<Vec<T>, FlowError> {
        sys.measure_at(x).map_err(|source| FlowError::EvaluationFault {
            time: t.to_f64().unwrap_or(f64::NAN),
            state: to_f64_vec(x),
            source,
        })
    };

    let half = T::from_f64(0.5).expect("0.5");
    let sixth = T::from_f64(6.0).expect("6");
    let two = T::from_f64(2.0).expect("2");

    let mut x = x0.to_vec();
    sys.check_guards(T::zero(), &x)?;

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        measurements: Vec::with_capacity(steps + 1),
    };
    traj.times.push(T::zero());
    traj.states.push(x.clone());
    traj.measurements.push(eval_measurement(T::zero(), &x)?);

    let n = sys.state_dim();
    let mut stage = vec![T::zero(); n];
    for step in 1..=steps {
        let t = T::from_usize(step - 1).expect("step index") * dt;
        let k1 = eval_field(t, &x)?;
        for i in 0..n {
            stage[i] = x[i] + half * dt * k1[i];
        }
        let k2 = eval_field(t, &stage)?;
        for i in 0..n {
            stage[i] = x[i] + half * dt * k2[i];
        }
        let k3 = eval_field(t, &stage)?;
        for i in 0..n {
            stage[i] = x[i] + dt * k3[i];
        }
        let k4 = eval_field(t, &stage)?;
        for i in 0..n {
            x[i] = x[i] + dt / sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
        }
        let t_next = T::from_usize(step).expect("step index") * dt;
        sys.check_guards(t_next, &x)?;
        traj.times.push(t_next);
        traj.states.push(x.clone());
        traj.measurements.push(eval_measurement(t_next, &x)?);
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trajectories are sampled on different time grids")]
pub struct GridMismatch;

/// Max over time of the infinity norm of the measurement difference.
///
/// The trajectories must share the exact time grid (same `t_final`, `dt`).
pub fn measurement_distance<T: Scalar>(
    a: &Trajectory<T>,
    b: &Trajectory<T>,
) -> Result<T, GridMismatch> {
    if a.times.len() != b.times.len() || a.times != b.times {
        return Err(GridMismatch);
    }
    let mut worst = T::zero();
    for (ya, yb) in a.measurements.iter().zip(&b.measurements) {
        if ya.len() != yb.len() {
            return Err(GridMismatch);
        }
        for (va, vb) in ya.iter().zip(yb) {
            let d = (*va - *vb).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprlang::parse;

    fn example2(measure_alt: bool) -> NonlinearSystem<f64> {
        let f = ExprVector::new(
            vec![
                parse("x1", 3).unwrap(),
                parse("x2", 3).unwrap(),
                parse("-2*x1^2 - 2*x2^2 + 4*x3", 3).unwrap(),
            ],
            3,
        )
        .unwrap();
        let h = if measure_alt {
            ExprVector::new(
                vec![
                    parse("2*x1 - x2^2 + x3", 3).unwrap(),
                    parse("-x1^2 + x2 + x3", 3).unwrap(),
                ],
                3,
            )
            .unwrap()
        } else {
            ExprVector::new(vec![parse("x1^2 + x2^2 + x3", 3).unwrap()], 3).unwrap()
        };
        NonlinearSystem::new("example2", f, h, vec![(-2.0, 2.0); 3]).unwrap()
    }

    #[test]
    fn first_coordinate_grows_exponentially() {
        let sys = example2(false);
        let traj = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 1e-3).unwrap();
        let x1 = traj.final_state()[0];
        assert!((x1 - 1.0f64.exp()).abs() < 1e-6, "x1(1) = {x1}");
    }

    #[test]
    fn zero_horizon_gives_a_single_sample() {
        let sys = example2(false);
        let traj = flow(&sys, &[1.0, 2.0, 1.0], 0.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(traj.states[0], vec![1.0, 2.0, 1.0]);
        assert_eq!(traj.measurements[0], vec![6.0]);
    }

    #[test]
    fn flow_semigroup_property() {
        let sys = example2(false);
        let whole = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 1e-3).unwrap();
        let first = flow(&sys, &[1.0, 2.0, 1.0], 0.5, 1e-3).unwrap();
        // Restarting may leave the sampling box; widen it for the second leg.
        let f = sys.field().clone();
        let h = sys.measurement().clone();
        let wide = NonlinearSystem::new("example2-wide", f, h, vec![(-300.0, 300.0); 3]).unwrap();
        let second = flow(&wide, first.final_state(), 0.5, 1e-3).unwrap();
        for (a, b) in whole.final_state().iter().zip(second.final_state()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn rk4_halving_dt_cuts_the_error_by_an_order() {
        let sys = example2(false);
        let reference = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 0.02 / 16.0).unwrap();
        let coarse = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 0.02).unwrap();
        let fine = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 0.01).unwrap();
        let err = |t: &Trajectory<f64>| -> f64 {
            t.final_state()
                .iter()
                .zip(reference.final_state())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let factor = err(&coarse) / err(&fine);
        assert!(factor >= 12.0, "convergence factor {factor}");
    }

    #[test]
    fn measurement_distance_of_identical_runs_is_zero() {
        let sys = example2(false);
        let a = flow(&sys, &[1.0, 2.0, 1.0], 0.2, 1e-3).unwrap();
        assert_eq!(measurement_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let sys = example2(false);
        let a = flow(&sys, &[1.0, 2.0, 1.0], 0.2, 1e-3).unwrap();
        let b = flow(&sys, &[1.0, 2.0, 1.0], 0.2, 2e-3).unwrap();
        assert_eq!(measurement_distance(&a, &b), Err(GridMismatch));
    }

    #[test]
    fn swapped_initial_conditions_are_indistinguishable_in_the_symmetric_output() {
        let sys = example2(false);
        let a = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 1e-3).unwrap();
        let b = flow(&sys, &[2.0, 1.0, 1.0], 1.0, 1e-3).unwrap();
        assert!(measurement_distance(&a, &b).unwrap() <= 1e-8);
    }

    #[test]
    fn swapped_initial_conditions_separate_in_the_asymmetric_output() {
        let sys = example2(true);
        let a = flow(&sys, &[1.0, 2.0, 1.0], 1.0, 1e-3).unwrap();
        let b = flow(&sys, &[2.0, 1.0, 1.0], 1.0, 1e-3).unwrap();
        let d = measurement_distance(&a, &b).unwrap();
        assert!(d > 0.1, "distance {d}");
        // Closed form of the gap at t = 1: 2e + 3e^2.
        let expected = 2.0 * 1.0f64.exp() + 3.0 * 2.0f64.exp();
        assert!((d - expected).abs() <= 0.01 * expected, "distance {d}");
    }

    #[test]
    fn guard_aborts_with_time_and_state() {
        // x' = -1 crosses the floor at t = 0.5.
        let f = ExprVector::new(vec![parse("0*x1 - 1", 1).unwrap()], 1).unwrap();
        let h = ExprVector::new(vec![parse("x1", 1).unwrap()], 1).unwrap();
        let sys = NonlinearSystem::with_guards(
            "draining",
            f,
            h,
            vec![(0.0, 2.0)],
            vec![StateGuard { coord: 0, min: 0.5 }],
        )
        .unwrap();
        match flow(&sys, &[1.0], 1.0, 1e-2) {
            Err(FlowError::GuardTripped { time, coord, .. }) => {
                assert_eq!(coord, 1);
                assert!((time - 0.51).abs() < 0.02, "tripped at {time}");
            }
            other => panic!("expected guard trip, got {other:?}"),
        }
    }

    #[test]
    fn x0_outside_the_domain_box_is_rejected() {
        let sys = example2(false);
        assert!(matches!(
            flow(&sys, &[3.0, 0.0, 0.0], 1.0, 1e-3),
            Err(FlowError::OutsideDomain { index: 1, .. })
        ));
    }
}
