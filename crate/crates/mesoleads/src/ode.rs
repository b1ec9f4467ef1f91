//! Embedded Dormand-Prince 5(4) integrator on flat real state vectors.
//!
//! The dynamical objects in this crate (covariance matrices, density
//! matrices, scalar survival logs, current accumulators) are packed into a
//! `DVector<f64>` and integrated with one shared adaptive stepper. The
//! trajectory sampler additionally needs single trial steps from a fixed
//! left state to locate survival-probability crossings, so the raw stage
//! computation is exposed as [`Dopri5Step`].

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Dormand-Prince coefficients (the classic DOPRI5 tableau).
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// 5th-order solution weights (identical to the last row of `A`; FSAL).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
/// Embedded 4th-order weights.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Tolerance settings for the adaptive stepper.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
        }
    }
}

/// Scratch space plus tableau logic for one DOPRI5 trial step.
pub struct Dopri5Step {
    k: [DVector<f64>; 7],
    y_stage: DVector<f64>,
    pub y5: DVector<f64>,
    y4: DVector<f64>,
}

impl Dopri5Step {
    pub fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| DVector::zeros(dim)),
            y_stage: DVector::zeros(dim),
            y5: DVector::zeros(dim),
            y4: DVector::zeros(dim),
        }
    }

    /// Evaluate the first stage derivative at the step's left endpoint.
    pub fn set_k1<F>(&mut self, f: &mut F, t: f64, y: &DVector<f64>)
    where
        F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    {
        f(t, y, &mut self.k[0]);
    }

    /// Compute a trial step of size `h` from `(t, y)` into `self.y5`,
    /// assuming `k1` is already set. Returns the scaled error estimate
    /// (<= 1 means acceptable).
    pub fn trial<F>(&mut self, f: &mut F, t: f64, y: &DVector<f64>, h: f64, tol: Tolerances) -> f64
    where
        F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    {
        let dim = y.len();
        for stage in 1..7 {
            self.y_stage.copy_from(y);
            for (kj, &a) in self.k.iter().zip(A[stage].iter()).take(stage) {
                if a != 0.0 {
                    self.y_stage.axpy(h * a, kj, 1.0);
                }
            }
            let (head, tail) = self.k.split_at_mut(stage);
            let _ = head;
            f(t + C[stage] * h, &self.y_stage, &mut tail[0]);
        }
        self.y5.copy_from(y);
        self.y4.copy_from(y);
        for (j, kj) in self.k.iter().enumerate() {
            if B5[j] != 0.0 {
                self.y5.axpy(h * B5[j], kj, 1.0);
            }
            if B4[j] != 0.0 {
                self.y4.axpy(h * B4[j], kj, 1.0);
            }
        }
        // RMS of the componentwise error against mixed tolerance.
        let mut acc = 0.0;
        for i in 0..dim {
            let scale = tol.atol + tol.rtol * y[i].abs().max(self.y5[i].abs());
            let e = (self.y5[i] - self.y4[i]) / scale;
            acc += e * e;
        }
        (acc / dim as f64).sqrt()
    }
}

/// Outcome of [`AdaptiveStepper::step`].
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub t_prev: f64,
    pub t: f64,
    pub h_used: f64,
}

/// Adaptive stepper owning the current `(t, y)` state.
///
/// Callers that need event detection advance step by step and inspect the
/// state after each accepted step; [`integrate`] wraps the loop for plain
/// initial-value problems.
pub struct AdaptiveStepper {
    pub t: f64,
    pub y: DVector<f64>,
    h: f64,
    tol: Tolerances,
    h_max: f64,
    max_steps: usize,
    steps_taken: usize,
    work: Dopri5Step,
    k1_fresh: bool,
}

impl AdaptiveStepper {
    pub fn new(t0: f64, y0: DVector<f64>, tol: Tolerances) -> Self {
        let dim = y0.len();
        Self {
            t: t0,
            y: y0,
            h: 0.0,
            tol,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
            steps_taken: 0,
            work: Dopri5Step::new(dim),
            k1_fresh: false,
        }
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Invalidate cached derivatives after an external modification of `y`
    /// (e.g. a jump update).
    pub fn state_changed(&mut self) {
        self.k1_fresh = false;
    }

    fn refresh_k1<F>(&mut self, f: &mut F)
    where
        F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    {
        if !self.k1_fresh {
            self.work.set_k1(f, self.t, &self.y);
            self.k1_fresh = true;
        }
    }

    fn initial_h<F>(&mut self, f: &mut F, t_end: f64) -> f64
    where
        F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    {
        // Crude but robust: base the first trial on the derivative scale.
        self.refresh_k1(f);
        let y_scale = self.y.amax().max(1e-8);
        let d_scale = self.work.k[0].amax();
        let span = (t_end - self.t).abs();
        let h = if d_scale > 0.0 {
            (0.01 * y_scale / d_scale).min(span)
        } else {
            span
        };
        h.max(1e-12).min(self.h_max)
    }

    /// Advance by one accepted step, not stepping past `t_end`.
    pub fn step<F>(&mut self, f: &mut F, t_end: f64) -> Result<StepReport>
    where
        F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
    {
        if self.h <= 0.0 {
            self.h = self.initial_h(f, t_end);
        }
        self.refresh_k1(f);
        loop {
            self.steps_taken += 1;
            if self.steps_taken > self.max_steps {
                return Err(Error::StepBudgetExhausted {
                    t: self.t,
                    max_steps: self.max_steps,
                });
            }
            let h = self.h.min(t_end - self.t).min(self.h_max);
            if h <= f64::EPSILON * self.t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            let err = self.work.trial(f, self.t, &self.y, h, self.tol);
            if err <= 1.0 {
                let report = StepReport {
                    t_prev: self.t,
                    t: self.t + h,
                    h_used: h,
                };
                self.t += h;
                std::mem::swap(&mut self.y, &mut self.work.y5);
                // FSAL: k7 of the accepted step is k1 of the next one.
                self.work.k.swap(0, 6);
                self.k1_fresh = true;
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.h = (h * factor).min(self.h_max);
                return Ok(report);
            }
            let factor = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            self.h = h * factor;
        }
    }

    /// Rearm the stepper at an externally produced state (e.g. after a jump
    /// update). The step size is kept as a warm start.
    pub fn reset_to(&mut self, t_new: f64, y_new: &DVector<f64>) {
        self.t = t_new;
        self.y.copy_from(y_new);
        self.k1_fresh = false;
    }
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1`, returning the final state.
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    tol: Tolerances,
) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    if t1 == t0 {
        return Ok(y0);
    }
    assert!(t1 > t0, "integrate only runs forward in time");
    let mut stepper = AdaptiveStepper::new(t0, y0, tol);
    while stepper.t < t1 {
        stepper.step(&mut f, t1)?;
    }
    Ok(stepper.y)
}

/// Integrate with `n` fixed-size DOPRI5 steps (5th-order solution, no
/// adaptivity). Exists for step-halving convergence checks.
pub fn integrate_fixed<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: DVector<f64>,
    n_steps: usize,
) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    let mut work = Dopri5Step::new(y0.len());
    let mut y = y0;
    let mut t = t0;
    let h = (t1 - t0) / n_steps as f64;
    let tol = Tolerances::default();
    for _ in 0..n_steps {
        work.set_k1(&mut f, t, &y);
        work.trial(&mut f, t, &y, h, tol);
        y.copy_from(&work.y5);
        t += h;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let y = integrate(
            |_t, y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = -2.0 * y[0],
            0.0,
            3.0,
            DVector::from_vec(vec![1.0]),
            Tolerances::default(),
        )
        .unwrap();
        assert!((y[0] - (-6.0_f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn oscillator_preserves_amplitude() {
        let y = integrate(
            |_t, y: &DVector<f64>, dy: &mut DVector<f64>| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            0.0,
            20.0 * std::f64::consts::PI,
            DVector::from_vec(vec![1.0, 0.0]),
            Tolerances {
                rtol: 1e-11,
                atol: 1e-13,
            },
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8);
        assert!(y[1].abs() < 1e-8);
    }

    #[test]
    fn step_halving_shows_at_least_fourth_order() {
        // Nonlinear scalar problem with known solution y = tan(t), y(0)=0.
        let f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            dy[0] = 1.0 + y[0] * y[0];
        };
        let exact = 1.0_f64.tan();
        let err = |n: usize| {
            let y = integrate_fixed(f, 0.0, 1.0, DVector::from_vec(vec![0.0]), n);
            (y[0] - exact).abs()
        };
        let e1 = err(20);
        let e2 = err(40);
        let order = (e1 / e2).log2();
        assert!(
            order > 4.0,
            "observed order {order:.2} from errors {e1:.3e}, {e2:.3e}"
        );
    }

    #[test]
    fn stepper_never_overshoots_t_end() {
        let mut stepper =
            AdaptiveStepper::new(0.0, DVector::from_vec(vec![1.0]), Tolerances::default());
        let mut f = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| dy[0] = -y[0];
        while stepper.t < 1.0 {
            stepper.step(&mut f, 1.0).unwrap();
            assert!(stepper.t <= 1.0 + 1e-15);
        }
        assert!((stepper.t - 1.0).abs() < 1e-12);
    }
}
