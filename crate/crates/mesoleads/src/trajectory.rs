//! Conditional quantum-jump dynamics of the covariance matrix.
//!
//! Between detector clicks the conditioned covariance obeys the Riccati
//! equation (plus deterministic back-action from unmonitored channels with
//! efficiencies `Lambda < 1`):
//!
//! ```text
//! dC/dt = -(V C + C V^dag) + C B C
//!         + Cbar F (1-Lambda+) Cbar - C (Gamma-F)(1-Lambda-) C,
//! B = Gamma - 2F,  V = iH + B/2,  Cbar = 1 - C,
//! ```
//!
//! while the survival probability decays as `dlog p/dt = -K` with
//! `K = tr[Lambda+ F Cbar] + tr[Lambda- (Gamma-F) C]`. A recorded jump in
//! channel `(k, sigma)` updates the state instantaneously:
//!
//! ```text
//! sigma = +:  C -> C + Cbar e_k Cbar / Cbar_kk      (C_kk -> 1)
//! sigma = -:  C -> C - C e_k C / C_kk               (C_kk -> 0)
//! ```
//!
//! Trajectories are sampled with the standard waiting-time algorithm: draw
//! `R1`, integrate `(C, log p)` jointly until `p = R1` (the crossing is
//! localized inside the bracketing step to relative tolerance
//! [`TrajectoryOptions::crossing_rel_tol`]), draw `R2` to pick the channel
//! by ordered cumulative weights, apply the update, repeat. The driver is
//! generic over a [`MonitoredEngine`] so the dense Fock-space reference in
//! [`crate::oracle`] consumes random numbers in exactly the same order and
//! can be compared event by event under a locked seed.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::lead_model::ExtendedSystem;
use crate::linalg::{self, pack_cmatrix, packed_len, unpack_cmatrix};
use crate::ode::{AdaptiveStepper, Dopri5Step, Tolerances};
use crate::rng::open_unit;
use crate::{C64, CMatrix, CVector};

/// Direction of a quantum jump: `Plus` moves a particle from the residual
/// reservoir onto the lead mode, `Minus` the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Direction::Plus => '+',
            Direction::Minus => '-',
        }
    }
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mode: usize,
    pub direction: Direction,
}

/// A monitored jump channel.
#[derive(Debug, Clone, Copy)]
pub struct Channel {
    pub mode: usize,
    pub direction: Direction,
    pub lead: usize,
}

/// Enumerate the jump channels of a system in the fixed global order:
/// ascending mode index, `+` before `-`. Channel selection and record
/// comparison rely on this order being identical across engines.
pub fn channel_table(sys: &ExtendedSystem) -> Vec<Channel> {
    let mut out = Vec::new();
    for k in 0..sys.n() {
        if let Some(lead) = sys.lead_of_mode(k) {
            out.push(Channel {
                mode: k,
                direction: Direction::Plus,
                lead,
            });
            out.push(Channel {
                mode: k,
                direction: Direction::Minus,
                lead,
            });
        }
    }
    out
}

/// Anything the waiting-time driver can evolve: a physical state packed
/// into reals, its no-click generator, the click-rate bookkeeping, and the
/// jump updates.
pub trait MonitoredEngine {
    /// Length of the packed physical state (the driver appends one slot for
    /// the log survival probability).
    fn state_len(&self) -> usize;

    /// Packed initial state.
    fn initial_state(&self) -> DVector<f64>;

    /// No-click derivative; returns the total detected-click rate `K >= 0`
    /// at `(t, y)` as a by-product.
    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> f64;

    /// Monitored channels in the fixed global order.
    fn channels(&self) -> &[Channel];

    /// Unnormalized selection weights of all channels at `(t, y)`.
    fn channel_weights(&mut self, t: f64, y: &[f64], out: &mut [f64]);

    /// Apply the instantaneous update for `channels()[idx]` at time `t`.
    fn apply_jump(&mut self, t: f64, y: &mut [f64], idx: usize) -> Result<()>;

    /// Optional validation hook, called after every accepted step.
    fn after_step(&mut self, _t: f64, _y: &[f64]) -> Result<()> {
        Ok(())
    }
}

/// Pick the first channel whose ordered cumulative weight reaches
/// `r2 * total`. This is the `sum P >= R2` rule with the fixed channel
/// order; at a tie the earlier channel wins.
pub fn select_channel(weights: &[f64], r2: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || total.is_nan() {
        return None;
    }
    let threshold = r2 * total;
    let mut cum = 0.0;
    for (i, w) in weights.iter().enumerate() {
        cum += w;
        if cum >= threshold {
            return Some(i);
        }
    }
    Some(weights.len() - 1)
}

/// Outcome of a monitored run.
#[derive(Debug, Clone)]
pub struct MonitoredRun {
    pub record: Vec<JumpEvent>,
    /// Packed physical state at the end of the span.
    pub final_state: DVector<f64>,
    /// Log survival probability accumulated since the last jump.
    pub final_log_survival: f64,
}

/// Sampler options.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryOptions {
    pub tol: Tolerances,
    /// Relative tolerance on the located jump time within its bracketing
    /// step.
    pub crossing_rel_tol: f64,
    /// If set, covariance spectra are checked against `[-slack, 1+slack]`
    /// after every accepted step (test use; costs an eigendecomposition per
    /// step).
    pub validate_spectrum: Option<f64>,
    /// Stop the run right after this many recorded events (waiting-time
    /// studies); `None` runs the full span.
    pub max_events: Option<usize>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            tol: Tolerances {
                rtol: 1e-9,
                atol: 1e-12,
            },
            crossing_rel_tol: 1e-10,
            validate_spectrum: None,
            max_events: None,
        }
    }
}

fn rhs_extended<E: MonitoredEngine>(
    engine: &mut E,
    d: usize,
    t: f64,
    y: &DVector<f64>,
    dy: &mut DVector<f64>,
) {
    let k = engine.rhs(t, &y.as_slice()[..d], &mut dy.as_mut_slice()[..d]);
    dy[d] = -k;
}

/// Locate `y[d] = target` inside the bracketing step `[t_prev, t_prev +
/// h_used]` by safeguarded false position (Illinois) on trial steps from
/// the left endpoint. On return `probe.y5` holds the state at the crossing.
///
/// Requires `g0 = y_prev[d] - target > 0 >= g1` at the endpoints.
#[allow(clippy::too_many_arguments)]
fn locate_crossing<F>(
    f: &mut F,
    probe: &mut Dopri5Step,
    t_prev: f64,
    y_prev: &DVector<f64>,
    h_used: f64,
    g0: f64,
    g1: f64,
    d: usize,
    target: f64,
    tol: Tolerances,
    crossing_rel_tol: f64,
) -> f64
where
    F: FnMut(f64, &DVector<f64>, &mut DVector<f64>),
{
    probe.set_k1(f, t_prev, y_prev);
    let (mut a, mut ga) = (0.0_f64, g0);
    let (mut b, mut gb) = (h_used, g1);
    let t_scale = t_prev.abs().max(t_prev + h_used).max(1.0);
    let tol_h = crossing_rel_tol * t_scale;
    let mut last_side = 0i8;
    for _ in 0..220 {
        if b - a <= tol_h {
            break;
        }
        let mut h_mid = (a * gb - b * ga) / (gb - ga);
        if !(h_mid > a && h_mid < b) {
            h_mid = 0.5 * (a + b);
        }
        probe.trial(f, t_prev, y_prev, h_mid, tol);
        let g_mid = probe.y5[d] - target;
        if g_mid > 0.0 {
            a = h_mid;
            ga = g_mid;
            if last_side == 1 {
                gb *= 0.5; // Illinois damping against one-sided stalls
            }
            last_side = 1;
        } else {
            b = h_mid;
            gb = g_mid;
            if last_side == -1 {
                ga *= 0.5;
            }
            last_side = -1;
        }
    }
    // final evaluation at the interpolated root
    let mut h_root = (a * gb - b * ga) / (gb - ga);
    if !(h_root >= a && h_root <= b) || !h_root.is_finite() {
        h_root = 0.5 * (a + b);
    }
    probe.trial(f, t_prev, y_prev, h_root, tol);
    t_prev + h_root
}

/// Run the waiting-time algorithm over `[t0, t1]`.
///
/// Random-number consumption order: one uniform `R1` at the start and
/// after every jump (survival target), one uniform `R2` per jump (channel
/// selection). Both numbers come from `rng` in that exact order, which is
/// what makes seed-locked cross-engine comparisons meaningful.
pub fn run_monitored<E: MonitoredEngine, R: Rng>(
    engine: &mut E,
    t0: f64,
    t1: f64,
    rng: &mut R,
    opts: &TrajectoryOptions,
) -> Result<MonitoredRun> {
    let d = engine.state_len();
    let mut y = DVector::zeros(d + 1);
    y.rows_mut(0, d).copy_from(&engine.initial_state());

    let mut record = Vec::new();
    let mut stepper = AdaptiveStepper::new(t0, y, opts.tol);
    let mut probe = Dopri5Step::new(d + 1);
    let mut y_prev = DVector::zeros(d + 1);
    let mut weights = vec![0.0; engine.channels().len()];

    let mut target = open_unit(rng).ln();

    while stepper.t < t1 {
        y_prev.copy_from(&stepper.y);
        let t_prev = stepper.t;
        let report = stepper.step(&mut |t, yv: &DVector<f64>, dyv: &mut DVector<f64>| {
            rhs_extended(engine, d, t, yv, dyv)
        }, t1)?;

        if stepper.y[d] > target {
            // no crossing in this step
            engine.after_step(stepper.t, &stepper.y.as_slice()[..d])?;
            continue;
        }

        // The survival log crossed the target inside [t_prev, t]; locate
        // p(t_J) = R1 within the bracketing step.
        let g0 = y_prev[d] - target;
        let g1 = stepper.y[d] - target;
        let t_jump;
        if g1 == 0.0 {
            t_jump = stepper.t;
            y_prev.copy_from(&stepper.y);
        } else {
            let mut f = |t: f64, yv: &DVector<f64>, dyv: &mut DVector<f64>| {
                rhs_extended(engine, d, t, yv, dyv)
            };
            t_jump = locate_crossing(
                &mut f,
                &mut probe,
                t_prev,
                &y_prev,
                report.h_used,
                g0,
                g1,
                d,
                target,
                opts.tol,
                opts.crossing_rel_tol,
            );
            y_prev.copy_from(&probe.y5);
        }

        // channel selection at the jump time
        engine.channel_weights(t_jump, &y_prev.as_slice()[..d], &mut weights);
        let r2 = open_unit(rng);
        let idx = select_channel(&weights, r2)
            .ok_or(Error::ZeroChannelWeights { t: t_jump })?;
        engine.apply_jump(t_jump, &mut y_prev.as_mut_slice()[..d], idx)?;
        let ch = engine.channels()[idx];
        record.push(JumpEvent {
            time: t_jump,
            mode: ch.mode,
            direction: ch.direction,
        });
        engine.after_step(t_jump, &y_prev.as_slice()[..d])?;

        // reset survival and rearm the stepper from the post-jump state
        y_prev[d] = 0.0;
        target = open_unit(rng).ln();
        stepper.reset_to(t_jump, &y_prev);
        if opts.max_events.is_some_and(|cap| record.len() >= cap) {
            break;
        }
    }

    let final_log_survival = stepper.y[d];
    let final_state = DVector::from(stepper.y.rows(0, d));
    Ok(MonitoredRun {
        record,
        final_state,
        final_log_survival,
    })
}

// ---------------------------------------------------------------------------
// Covariance-matrix engine
// ---------------------------------------------------------------------------

/// Survival decay rate `K = tr[Lambda+ F Cbar] + tr[Lambda- (Gamma-F) C]`.
pub fn survival_decay_rate(c: &CMatrix, sys: &ExtendedSystem) -> f64 {
    let mut k_rate = 0.0;
    for k in 0..sys.n() {
        let occ = c[(k, k)].re;
        k_rate += sys.lambda_plus()[k] * sys.rate_in(k) * (1.0 - occ)
            + sys.lambda_minus()[k] * sys.rate_out(k) * occ;
    }
    k_rate.max(0.0)
}

/// Jump update of the covariance matrix. `Plus` pins `C_kk` to 1, `Minus`
/// to 0; the rest of the matrix is updated by the rank-one Bayesian rule.
pub fn jump_update(c: &mut CMatrix, mode: usize, direction: Direction) -> Result<()> {
    let n = c.nrows();
    let eta = crate::gaussian::EIG_CLAMP;
    match direction {
        Direction::Plus => {
            let w = 1.0 - c[(mode, mode)].re;
            if w <= eta {
                return Err(Error::BlockedChannel {
                    mode,
                    sigma: 1,
                    weight: w,
                });
            }
            // column k of Cbar = 1 - C
            let mut col = CVector::zeros(n);
            for i in 0..n {
                col[i] = -c[(i, mode)];
            }
            col[mode] += C64::new(1.0, 0.0);
            let scale = C64::new(1.0 / w, 0.0);
            for j in 0..n {
                let cj = col[j].conj() * scale;
                for i in 0..n {
                    c[(i, j)] += col[i] * cj;
                }
            }
        }
        Direction::Minus => {
            let w = c[(mode, mode)].re;
            if w <= eta {
                return Err(Error::BlockedChannel {
                    mode,
                    sigma: -1,
                    weight: w,
                });
            }
            let col = CVector::from(c.column(mode));
            let scale = C64::new(1.0 / w, 0.0);
            for j in 0..n {
                let cj = col[j].conj() * scale;
                for i in 0..n {
                    c[(i, j)] -= col[i] * cj;
                }
            }
        }
    }
    linalg::hermitize(c);
    Ok(())
}

/// Change of the integrated stochastic particle number on lead `alpha` due
/// to a jump: `tr[Cbar e_k Cbar]/Cbar_kk` for `+`, `-tr[C e_k C]/C_kk` for
/// `-` (a Bayesian increment, not necessarily +-1).
pub fn jump_particle_increment(c: &CMatrix, mode: usize, direction: Direction) -> f64 {
    let n = c.nrows();
    match direction {
        Direction::Plus => {
            let w = 1.0 - c[(mode, mode)].re;
            let mut norm2 = 0.0;
            for i in 0..n {
                let v = if i == mode {
                    C64::new(1.0, 0.0) - c[(i, mode)]
                } else {
                    -c[(i, mode)]
                };
                norm2 += v.norm_sqr();
            }
            norm2 / w
        }
        Direction::Minus => {
            let w = c[(mode, mode)].re;
            let norm2: f64 = (0..n).map(|i| c[(i, mode)].norm_sqr()).sum();
            -norm2 / w
        }
    }
}

/// Jump part of the stochastic energy increment:
/// `tr[H Cbar e_k Cbar]/Cbar_kk` for `+`, `-tr[H C e_k C]/C_kk` for `-`.
pub fn jump_energy_increment(c: &CMatrix, h: &CMatrix, mode: usize, direction: Direction) -> f64 {
    let n = c.nrows();
    let mut col = CVector::zeros(n);
    let w = match direction {
        Direction::Plus => {
            for i in 0..n {
                col[i] = -c[(i, mode)];
            }
            col[mode] += C64::new(1.0, 0.0);
            1.0 - c[(mode, mode)].re
        }
        Direction::Minus => {
            for i in 0..n {
                col[i] = c[(i, mode)];
            }
            c[(mode, mode)].re
        }
    };
    let mut quad = C64::new(0.0, 0.0);
    for i in 0..n {
        let mut acc = C64::new(0.0, 0.0);
        for j in 0..n {
            acc += h[(i, j)] * col[j];
        }
        quad += col[i].conj() * acc;
    }
    direction.sign() * quad.re / w
}

/// Jump part of the stochastic measurement-energy increment. The
/// interaction term mirrors [`jump_energy_increment`] with `H_int`; the
/// bare-Hamiltonian correction `Re tr[e_k (Cbar H_0 C + C H_0 Cbar)]/w`
/// enters with sign `-sigma` so that every jump satisfies
/// `dE - dE_M = sigma * eps_k` (with diagonal lead energies).
pub fn jump_measurement_energy_increment(
    c: &CMatrix,
    h0: &CMatrix,
    hint: &CMatrix,
    mode: usize,
    direction: Direction,
) -> f64 {
    let n = c.nrows();
    // columns of Cbar and C
    let mut col_bar = CVector::zeros(n);
    let mut col_c = CVector::zeros(n);
    for i in 0..n {
        col_c[i] = c[(i, mode)];
        col_bar[i] = -c[(i, mode)];
    }
    col_bar[mode] += C64::new(1.0, 0.0);
    let quad = |a: &CVector, m: &CMatrix, b: &CVector| -> C64 {
        let mut total = C64::new(0.0, 0.0);
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..n {
                acc += m[(i, j)] * b[j];
            }
            total += a[i].conj() * acc;
        }
        total
    };
    match direction {
        Direction::Plus => {
            let w = 1.0 - c[(mode, mode)].re;
            let hint_term = quad(&col_bar, hint, &col_bar).re;
            let h0_cross = quad(&col_bar, h0, &col_c).re; // Re tr[e_k Cbar H0 C .. ]
            (hint_term - h0_cross) / w
        }
        Direction::Minus => {
            let w = c[(mode, mode)].re;
            let hint_term = quad(&col_c, hint, &col_c).re;
            let h0_cross = quad(&col_bar, h0, &col_c).re;
            (-hint_term + h0_cross) / w
        }
    }
}

/// Entropy carried into the reservoir by one click:
/// `-sigma (eps_k - mu_alpha) / T_alpha`. An emission (`-`) above the
/// chemical potential produces positive entropy flux.
pub fn entropy_flux_increment(sys: &ExtendedSystem, mode: usize, direction: Direction) -> Result<f64> {
    let alpha = sys
        .lead_of_mode(mode)
        .ok_or(Error::NoReservoirForMode(mode))?;
    let th = sys.reservoir(alpha);
    let eps = sys.lead_mode_energy(mode);
    Ok(-direction.sign() * (eps - th.chemical_potential) / th.temperature)
}

/// Quantum-jump engine on the covariance representation.
///
/// The ODE state is `[C packed | per-lead drift accumulators dN, dE, dE_M]`;
/// jump contributions to the accumulators and the entropy flux are added in
/// [`MonitoredEngine::apply_jump`].
pub struct CovarianceEngine<'a> {
    sys: &'a ExtendedSystem,
    n: usize,
    n_leads: usize,
    channels: Vec<Channel>,
    perfect: bool,
    validate_spectrum: Option<f64>,
    initial: DVector<f64>,
    /// Jump-accumulated parts, per lead.
    pub jump_dn: Vec<f64>,
    pub jump_de: Vec<f64>,
    pub jump_dem: Vec<f64>,
    /// Entropy flux per lead (jumps only).
    pub sigma: Vec<f64>,
    // scratch
    c: CMatrix,
    cbar: CMatrix,
    h: CMatrix,
    hc: CMatrix,
    bc: CMatrix,
    cbc: CMatrix,
    hint: CMatrix,
    hint_c: CMatrix,
    h0_c: CMatrix,
    dplus_cbar: CMatrix,
    dminus_c: CMatrix,
    rhs_mat: CMatrix,
}

impl<'a> CovarianceEngine<'a> {
    pub fn new(sys: &'a ExtendedSystem, c0: &CMatrix, opts: &TrajectoryOptions) -> Self {
        let n = sys.n();
        let n_leads = sys.n_leads();
        let mut initial = DVector::zeros(packed_len(n) + 3 * n_leads);
        pack_cmatrix(c0, &mut initial.as_mut_slice()[..packed_len(n)]);
        Self {
            sys,
            n,
            n_leads,
            channels: channel_table(sys),
            perfect: sys.all_efficiencies_perfect(),
            validate_spectrum: opts.validate_spectrum,
            initial,
            jump_dn: vec![0.0; n_leads],
            jump_de: vec![0.0; n_leads],
            jump_dem: vec![0.0; n_leads],
            sigma: vec![0.0; n_leads],
            c: CMatrix::zeros(n, n),
            cbar: CMatrix::zeros(n, n),
            h: CMatrix::zeros(n, n),
            hc: CMatrix::zeros(n, n),
            bc: CMatrix::zeros(n, n),
            cbc: CMatrix::zeros(n, n),
            hint: CMatrix::zeros(n, n),
            hint_c: CMatrix::zeros(n, n),
            h0_c: CMatrix::zeros(n, n),
            dplus_cbar: CMatrix::zeros(n, n),
            dminus_c: CMatrix::zeros(n, n),
            rhs_mat: CMatrix::zeros(n, n),
        }
    }

    fn unpack_c(&mut self, y: &[f64]) {
        let base = packed_len(self.n);
        unpack_cmatrix(&y[..base], &mut self.c);
    }

    /// Covariance matrix from a packed state.
    pub fn covariance_of(&self, y: &[f64]) -> CMatrix {
        let mut c = CMatrix::zeros(self.n, self.n);
        unpack_cmatrix(&y[..packed_len(self.n)], &mut c);
        c
    }

    /// Drift accumulator `(dn, de, de_m)` slices of a packed state.
    pub fn drift_accumulators(&self, y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let base = packed_len(self.n);
        let pull = |slot: usize| -> Vec<f64> {
            (0..self.n_leads).map(|a| y[base + 3 * a + slot]).collect()
        };
        (pull(0), pull(1), pull(2))
    }
}

impl MonitoredEngine for CovarianceEngine<'_> {
    fn state_len(&self) -> usize {
        packed_len(self.n) + 3 * self.n_leads
    }

    fn initial_state(&self) -> DVector<f64> {
        self.initial.clone()
    }

    fn rhs(&mut self, t: f64, y: &[f64], dy: &mut [f64]) -> f64 {
        let n = self.n;
        let base = packed_len(n);
        self.unpack_c(y);
        self.sys.hamiltonian_into(t, &mut self.h);

        let gamma = self.sys.gamma();
        let f_occ = self.sys.f_occ();
        let lp = self.sys.lambda_plus();
        let lm = self.sys.lambda_minus();

        // hc = H C ; bc = B C with B = Gamma - 2F (diagonal)
        self.hc
            .gemm(C64::new(1.0, 0.0), &self.h, &self.c, C64::new(0.0, 0.0));
        for j in 0..n {
            for i in 0..n {
                let b_i = gamma[i] * (1.0 - 2.0 * f_occ[i]);
                self.bc[(i, j)] = C64::new(b_i, 0.0) * self.c[(i, j)];
            }
        }
        // cbc = C (B C)
        self.cbc
            .gemm(C64::new(1.0, 0.0), &self.c, &self.bc, C64::new(0.0, 0.0));

        // rhs = -(VC + (VC)^dag) + CBC with VC = i HC + (1/2) BC.
        // Stage M = VC first, then combine Hermitian pairs; CBC is
        // symmetrized in the same pass.
        for j in 0..n {
            for i in 0..n {
                self.rhs_mat[(i, j)] =
                    C64::new(0.0, 1.0) * self.hc[(i, j)] + 0.5 * self.bc[(i, j)];
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let m_sym = self.rhs_mat[(i, j)] + self.rhs_mat[(j, i)].conj();
                let cbc_sym = 0.5 * (self.cbc[(i, j)] + self.cbc[(j, i)].conj());
                let val = -m_sym + cbc_sym;
                self.rhs_mat[(i, j)] = val;
                self.rhs_mat[(j, i)] = val.conj();
            }
        }
        // imperfect-detection back-action terms
        if !self.perfect {
            for j in 0..n {
                for i in 0..n {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    self.cbar[(i, j)] = C64::new(delta, 0.0) - self.c[(i, j)];
                }
            }
            for j in 0..n {
                for i in 0..n {
                    let d_p = (1.0 - lp[i]) * gamma[i] * f_occ[i];
                    let d_m = (1.0 - lm[i]) * gamma[i] * (1.0 - f_occ[i]);
                    self.dplus_cbar[(i, j)] = C64::new(d_p, 0.0) * self.cbar[(i, j)];
                    self.dminus_c[(i, j)] = C64::new(d_m, 0.0) * self.c[(i, j)];
                }
            }
            self.rhs_mat
                .gemm(C64::new(1.0, 0.0), &self.cbar, &self.dplus_cbar, C64::new(1.0, 0.0));
            self.rhs_mat
                .gemm(C64::new(-1.0, 0.0), &self.c, &self.dminus_c, C64::new(1.0, 0.0));
        }
        // hermitize the generator: (rhs + rhs^dag)/2, exact for the analytic
        // form, removes integrator round-off drift
        for i in 0..n {
            for j in 0..=i {
                let avg = 0.5 * (self.rhs_mat[(i, j)] + self.rhs_mat[(j, i)].conj());
                self.rhs_mat[(i, j)] = avg;
                self.rhs_mat[(j, i)] = avg.conj();
            }
        }
        pack_cmatrix(&self.rhs_mat, &mut dy[..base]);

        // accumulator drifts and decay rate
        let need_em = !self.perfect;
        if need_em {
            self.sys.interaction_part_into(&self.h, &mut self.hint);
            self.hint_c
                .gemm(C64::new(1.0, 0.0), &self.hint, &self.c, C64::new(0.0, 0.0));
            // H0 C = HC - Hint C
            for j in 0..n {
                for i in 0..n {
                    self.h0_c[(i, j)] = self.hc[(i, j)] - self.hint_c[(i, j)];
                }
            }
        }
        let mut k_total = 0.0;
        for alpha in 0..self.n_leads {
            let mut dn = 0.0;
            let mut de = 0.0;
            let mut dem = 0.0;
            for k in self.sys.lead_modes(alpha) {
                let occ = self.c[(k, k)].re;
                let b_k = gamma[k] * (1.0 - 2.0 * f_occ[k]);
                // (C^2)_kk = column norm, (C H C)_kk via the HC column
                let mut c2_kk = 0.0;
                let mut chc_kk = C64::new(0.0, 0.0);
                for m in 0..n {
                    c2_kk += self.c[(m, k)].norm_sqr();
                    chc_kk += self.c[(m, k)].conj() * self.hc[(m, k)];
                }
                dn += b_k * (c2_kk - occ);
                let e_drift = b_k * (chc_kk.re - self.hc[(k, k)].re);
                de += e_drift;
                dem += e_drift;
                k_total += lp[k] * gamma[k] * f_occ[k] * (1.0 - occ)
                    + lm[k] * gamma[k] * (1.0 - f_occ[k]) * occ;

                if need_em {
                    let d_p = (1.0 - lp[k]) * gamma[k] * f_occ[k];
                    let d_m = (1.0 - lm[k]) * gamma[k] * (1.0 - f_occ[k]);
                    if d_p == 0.0 && d_m == 0.0 {
                        continue;
                    }
                    // column quantities against Cbar
                    let mut cbar2_kk = 0.0;
                    let mut cbar_h_cbar = C64::new(0.0, 0.0);
                    let mut cbar_hint_cbar = C64::new(0.0, 0.0);
                    let mut c_hint_c = C64::new(0.0, 0.0);
                    let mut cbar_h0_c = C64::new(0.0, 0.0);
                    for m in 0..n {
                        let cbar_mk = if m == k {
                            C64::new(1.0, 0.0) - self.c[(m, k)]
                        } else {
                            -self.c[(m, k)]
                        };
                        cbar2_kk += cbar_mk.norm_sqr();
                        // (H Cbar)_mk = H_mk ... use HC: (H Cbar) = H - HC
                        let h_cbar_mk = self.h[(m, k)] - self.hc[(m, k)];
                        cbar_h_cbar += cbar_mk.conj() * h_cbar_mk;
                        let hint_cbar_mk = self.hint[(m, k)] - self.hint_c[(m, k)];
                        cbar_hint_cbar += cbar_mk.conj() * hint_cbar_mk;
                        c_hint_c += self.c[(m, k)].conj() * self.hint_c[(m, k)];
                        cbar_h0_c += cbar_mk.conj() * self.h0_c[(m, k)];
                    }
                    dn += d_p * cbar2_kk - d_m * c2_kk;
                    de += d_p * cbar_h_cbar.re - d_m * chc_kk.re;
                    dem += d_p * (cbar_hint_cbar.re - cbar_h0_c.re)
                        + d_m * (-c_hint_c.re + cbar_h0_c.re);
                }
            }
            dy[base + 3 * alpha] = dn;
            dy[base + 3 * alpha + 1] = de;
            dy[base + 3 * alpha + 2] = dem;
        }
        k_total.max(0.0)
    }

    fn channels(&self) -> &[Channel] {
        &self.channels
    }

    fn channel_weights(&mut self, _t: f64, y: &[f64], out: &mut [f64]) {
        self.unpack_c(y);
        for (i, ch) in self.channels.iter().enumerate() {
            let occ = self.c[(ch.mode, ch.mode)].re;
            out[i] = match ch.direction {
                Direction::Plus => {
                    self.sys.lambda_plus()[ch.mode] * self.sys.rate_in(ch.mode) * (1.0 - occ)
                }
                Direction::Minus => {
                    self.sys.lambda_minus()[ch.mode] * self.sys.rate_out(ch.mode) * occ
                }
            }
            .max(0.0);
        }
    }

    fn apply_jump(&mut self, t: f64, y: &mut [f64], idx: usize) -> Result<()> {
        let ch = self.channels[idx];
        self.unpack_c(y);
        self.sys.hamiltonian_into(t, &mut self.h);
        self.sys.interaction_part_into(&self.h, &mut self.hint);
        // H0 = H - Hint (reuse hc as scratch for H0)
        for j in 0..self.n {
            for i in 0..self.n {
                self.hc[(i, j)] = self.h[(i, j)] - self.hint[(i, j)];
            }
        }
        let alpha = ch.lead;
        self.jump_dn[alpha] += jump_particle_increment(&self.c, ch.mode, ch.direction);
        self.jump_de[alpha] += jump_energy_increment(&self.c, &self.h, ch.mode, ch.direction);
        self.jump_dem[alpha] += jump_measurement_energy_increment(
            &self.c,
            &self.hc,
            &self.hint,
            ch.mode,
            ch.direction,
        );
        self.sigma[alpha] += entropy_flux_increment(self.sys, ch.mode, ch.direction)?;
        jump_update(&mut self.c, ch.mode, ch.direction)?;
        pack_cmatrix(&self.c, &mut y[..packed_len(self.n)]);
        Ok(())
    }

    fn after_step(&mut self, _t: f64, y: &[f64]) -> Result<()> {
        if let Some(slack) = self.validate_spectrum {
            self.unpack_c(y);
            let (lo, hi) = crate::gaussian::spectrum_bounds(&self.c);
            if lo < -slack || hi > 1.0 + slack {
                return Err(Error::HermiticityDrift {
                    drift: (-lo).max(hi - 1.0),
                    tol: slack,
                });
            }
        }
        Ok(())
    }
}

/// No-click generator of the conditional covariance (public surface of the
/// engine's drift part; allocates, intended for tests and diagnostics).
pub fn no_jump_rhs(c: &CMatrix, t: f64, sys: &ExtendedSystem) -> CMatrix {
    let opts = TrajectoryOptions::default();
    let mut engine = CovarianceEngine::new(sys, c, &opts);
    let y = engine.initial_state();
    let mut dy = DVector::zeros(y.len());
    engine.rhs(t, y.as_slice(), dy.as_mut_slice());
    let mut out = CMatrix::zeros(sys.n(), sys.n());
    unpack_cmatrix(&dy.as_slice()[..packed_len(sys.n())], &mut out);
    out
}

/// Sample a waiting time: evolve the no-click dynamics from `c` at `t0`
/// until the survival probability reaches `r1` or `t_max` is hit. The
/// covariance is left at the stopping point. Returns the jump time, if any.
pub fn sample_waiting_time(
    sys: &ExtendedSystem,
    c: &mut CMatrix,
    t0: f64,
    t_max: f64,
    r1: f64,
    opts: &TrajectoryOptions,
) -> Result<Option<f64>> {
    assert!(r1 > 0.0 && r1 <= 1.0, "R1 must lie in (0, 1]");
    let mut engine = CovarianceEngine::new(sys, c, opts);
    let d = engine.state_len();
    let mut y = DVector::zeros(d + 1);
    y.rows_mut(0, d).copy_from(&engine.initial_state());
    let target = r1.ln();
    let mut stepper = AdaptiveStepper::new(t0, y, opts.tol);
    let mut probe = Dopri5Step::new(d + 1);
    let mut y_prev = DVector::zeros(d + 1);
    let mut t_jump = None;
    while stepper.t < t_max {
        y_prev.copy_from(&stepper.y);
        let t_prev = stepper.t;
        let report = stepper.step(
            &mut |t, yv: &DVector<f64>, dyv: &mut DVector<f64>| {
                rhs_extended(&mut engine, d, t, yv, dyv)
            },
            t_max,
        )?;
        if stepper.y[d] > target {
            continue;
        }
        let g0 = y_prev[d] - target;
        let g1 = stepper.y[d] - target;
        if g1 == 0.0 {
            t_jump = Some(stepper.t);
            y_prev.copy_from(&stepper.y);
        } else {
            let mut f = |t: f64, yv: &DVector<f64>, dyv: &mut DVector<f64>| {
                rhs_extended(&mut engine, d, t, yv, dyv)
            };
            let t_j = locate_crossing(
                &mut f,
                &mut probe,
                t_prev,
                &y_prev,
                report.h_used,
                g0,
                g1,
                d,
                target,
                opts.tol,
                opts.crossing_rel_tol,
            );
            t_jump = Some(t_j);
            y_prev.copy_from(&probe.y5);
        }
        break;
    }
    let y_final = if t_jump.is_some() { &y_prev } else { &stepper.y };
    *c = engine.covariance_of(&y_final.as_slice()[..d]);
    Ok(t_jump)
}

/// Integrated outputs of one quantum-jump trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    /// Conditioned covariance at the end of the span.
    pub c_final: CMatrix,
    /// Per-lead integrated stochastic particle current.
    pub dn: Vec<f64>,
    /// Per-lead integrated stochastic energy current.
    pub de: Vec<f64>,
    /// Per-lead integrated measurement-energy current.
    pub de_m: Vec<f64>,
    /// Per-lead entropy flux (dimensionless).
    pub sigma: Vec<f64>,
    /// Detector record.
    pub record: Vec<JumpEvent>,
}

impl TrajectoryResult {
    /// Heat absorbed from reservoir `alpha`: `dQ = dE - mu dN`.
    pub fn heat(&self, sys: &ExtendedSystem, alpha: usize) -> f64 {
        self.de[alpha] - sys.reservoir(alpha).chemical_potential * self.dn[alpha]
    }

    pub fn total_dn(&self) -> f64 {
        self.dn.iter().sum()
    }

    pub fn total_de(&self) -> f64 {
        self.de.iter().sum()
    }

    pub fn total_de_m(&self) -> f64 {
        self.de_m.iter().sum()
    }

    pub fn total_sigma(&self) -> f64 {
        self.sigma.iter().sum()
    }

    pub fn total_heat(&self, sys: &ExtendedSystem) -> f64 {
        (0..self.dn.len()).map(|a| self.heat(sys, a)).sum()
    }
}

/// Sample one quantum-jump trajectory of the covariance matrix over
/// `[t0, t1]`, starting from `c0`. Deterministic for a fixed `rng` state.
pub fn run_trajectory<R: Rng>(
    sys: &ExtendedSystem,
    c0: &CMatrix,
    t0: f64,
    t1: f64,
    rng: &mut R,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryResult> {
    let mut engine = CovarianceEngine::new(sys, c0, opts);
    let run = run_monitored(&mut engine, t0, t1, rng, opts)?;
    let c_final = engine.covariance_of(run.final_state.as_slice());
    let (drift_dn, drift_de, drift_dem) = engine.drift_accumulators(run.final_state.as_slice());
    let n_leads = sys.n_leads();
    let combine = |drift: &[f64], jump: &[f64]| -> Vec<f64> {
        (0..n_leads).map(|a| drift[a] + jump[a]).collect()
    };
    Ok(TrajectoryResult {
        c_final,
        dn: combine(&drift_dn, &engine.jump_dn),
        de: combine(&drift_de, &engine.jump_de),
        de_m: combine(&drift_dem, &engine.jump_dem),
        sigma: engine.sigma.clone(),
        record: run.record,
    })
}
