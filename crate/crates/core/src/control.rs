//! Finite-time optimal stabilization of affine-in-control systems
//! `ẋ = f(x) + G(x)u` with a square, invertible `G`.
//!
//! The Lyapunov function `V = p(xᵀx)^q` has `p` and `q` chosen from the initial
//! condition and the requested settling time `T_max`. The resulting feedback
//! makes the closed loop `ẋ = −½V′ᵀ`, whose norm obeys
//! `‖x(t)‖² = ‖x₀‖²(1 − t/T_max)^{1+T_max}` and reaches zero exactly at `T_max`.
//!
//! The gain depends on `x₀`, which is captured when the controller is built. If
//! the plant is disturbed mid-run the stored `x₀` is stale and the settling-time
//! guarantee no longer applies; nothing here detects that.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative settling threshold: settled once `‖x‖ < SETTLE_FRACTION·max(1, ‖x₀‖)`.
pub const SETTLE_FRACTION: f64 = 1e-4;

/// A control-affine system `ẋ = f(x) + G(x)u` with `u` of the state dimension.
pub trait AffineSystem {
    fn dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn input_matrix(&self, x: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovPQ {
    pub p: f64,
    pub q: f64,
}

fn check_t_max(t_max: f64) -> Result<()> {
    if !(t_max > 1.0) || !t_max.is_finite() {
        return Err(Error::HorizonTooShort { t_max });
    }
    Ok(())
}

/// `q = T/(1+T)` and `p = ½(x₀ᵀx₀)^{1/(1+T)}((1+T)/T)²`.
pub fn pq_from(x0: &DVector<f64>, t_max: f64) -> Result<LyapunovPQ> {
    check_t_max(t_max)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite initial condition".into()));
    }
    let n0 = x0.dot(x0);
    if n0 == 0.0 {
        return Err(Error::DegenerateOrigin);
    }
    let r = (1.0 + t_max) / t_max;
    Ok(LyapunovPQ {
        p: 0.5 * n0.powf(1.0 / (1.0 + t_max)) * r * r,
        q: t_max / (1.0 + t_max),
    })
}

pub fn lyapunov_v(x: &DVector<f64>, pq: &LyapunovPQ) -> f64 {
    let r = x.dot(x);
    if r == 0.0 {
        0.0
    } else {
        pq.p * r.powf(pq.q)
    }
}

/// `V′(x)ᵀ = 2pq(xᵀx)^{q−1}x`, defined as zero at the origin.
pub fn lyapunov_grad(x: &DVector<f64>, pq: &LyapunovPQ) -> DVector<f64> {
    let r = x.dot(x);
    if r == 0.0 {
        return DVector::zeros(x.len());
    }
    x * (2.0 * pq.p * pq.q * r.powf(pq.q - 1.0))
}

/// Model-independent closed loop `−½V′ᵀ`.
pub fn closed_loop_field(x: &DVector<f64>, pq: &LyapunovPQ) -> DVector<f64> {
    lyapunov_grad(x, pq) * -0.5
}

/// Exact norm of the closed-loop solution: `‖x₀‖²(1 − t/T)^{1+T}`, zero after `T`.
pub fn norm_law(x0_sq: f64, t: f64, t_max: f64) -> f64 {
    if t >= t_max {
        0.0
    } else {
        x0_sq * (1.0 - t / t_max).powf(1.0 + t_max)
    }
}

/// `β = 1 − 1/T` and `c = V(x₀)^{1−β}`.
pub fn settling_constants(x0: &DVector<f64>, pq: &LyapunovPQ, t_max: f64) -> Result<(f64, f64)> {
    check_t_max(t_max)?;
    let beta = 1.0 - 1.0 / t_max;
    Ok((lyapunov_v(x0, pq).powf(1.0 - beta), beta))
}

/// Upper bound `V(x₀)^{1−β} / (c(1−β))` on the settling time.
pub fn settling_bound(x0: &DVector<f64>, pq: &LyapunovPQ, c: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain { what: "beta", value: beta });
    }
    if !(c > 0.0) {
        return Err(Error::Domain { what: "c", value: c });
    }
    Ok(lyapunov_v(x0, pq).powf(1.0 - beta) / (c * (1.0 - beta)))
}

/// Default running-cost cross term: the row `2fᵀG`, returned as a column.
pub fn default_l2(f: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64> {
    g.transpose() * f * 2.0
}

/// Default input weight inverse `G⁻¹G⁻ᵀ`.
pub fn default_r2_inv(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g_inv = invert(g)?;
    Ok(&g_inv * g_inv.transpose())
}

fn invert(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    g.clone().try_inverse().ok_or(Error::NearSingularG {
        index: 0,
        value: g.determinant(),
        threshold: 0.0,
    })
}

/// General optimal feedback `u = −½R₂⁻¹(L₂ + V′G)ᵀ`.
pub fn baseline_control(
    g: &DMatrix<f64>,
    l2: &DVector<f64>,
    r2_inv: &DMatrix<f64>,
    v_grad: &DVector<f64>,
) -> Result<DVector<f64>> {
    let sym = (r2_inv - r2_inv.transpose()).amax();
    if sym > 1e-9 * r2_inv.amax().max(1.0) || r2_inv.clone().cholesky().is_none() {
        return Err(Error::Configuration(
            "R2 inverse must be symmetric positive definite".into(),
        ));
    }
    let bracket = l2 + g.transpose() * v_grad;
    Ok(r2_inv * bracket * -0.5)
}

/// Initial-condition-dependent feedback `u = −½G⁻¹(2f + V′ᵀ)`.
pub fn icd_control(f: &DVector<f64>, g: &DMatrix<f64>, v_grad: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = (f * 2.0 + v_grad) * -0.5;
    g.clone().lu().solve(&rhs).ok_or(Error::NearSingularG {
        index: 0,
        value: g.determinant(),
        threshold: 0.0,
    })
}

/// State penalty `L₁ = φᵀGᵀGφ − V′f` for the feedback `φ`.
pub fn state_cost_l1(
    f: &DVector<f64>,
    g: &DMatrix<f64>,
    phi: &DVector<f64>,
    v_grad: &DVector<f64>,
) -> f64 {
    let g_phi = g * phi;
    g_phi.dot(&g_phi) - v_grad.dot(f)
}

/// Performance integrand `L₁ + 2fᵀGu + uᵀGᵀGu`.
pub fn cost_integrand(
    f: &DVector<f64>,
    g: &DMatrix<f64>,
    u: &DVector<f64>,
    phi: &DVector<f64>,
    v_grad: &DVector<f64>,
) -> f64 {
    let g_u = g * u;
    state_cost_l1(f, g, phi, v_grad) + 2.0 * f.dot(&g_u) + g_u.dot(&g_u)
}

/// Cost increment over `dt` at state `x` under input `u`.
pub fn cost_step<S: AffineSystem>(
    sys: &S,
    x: &DVector<f64>,
    u: &DVector<f64>,
    pq: &LyapunovPQ,
    dt: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if x.dot(x) == 0.0 && u.dot(u) == 0.0 {
        return Ok(0.0);
    }
    let f = sys.drift(x)?;
    let g = sys.input_matrix(x)?;
    let vg = lyapunov_grad(x, pq);
    let phi = icd_control(&f, &g, &vg)?;
    Ok(cost_integrand(&f, &g, u, &phi, &vg) * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostAccumulator {
    pub j: f64,
    pub t: f64,
}

impl CostAccumulator {
    pub fn add(&mut self, increment: f64, dt: f64) {
        self.j += increment;
        self.t += dt;
    }
}

/// Output of one controller evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlAction {
    /// Translated input `ũ`.
    pub u: DVector<f64>,
    pub settled: bool,
}

/// Feedback controller holding `x₀`, `T_max` and the derived `p`, `q`.
#[derive(Debug, Clone)]
pub struct FiniteTimeController {
    t_max: f64,
    x0: DVector<f64>,
    pq: Option<LyapunovPQ>,
    settle_radius: f64,
    settled: bool,
}

impl FiniteTimeController {
    pub fn new(x0: DVector<f64>, t_max: f64) -> Result<Self> {
        let pq = match pq_from(&x0, t_max) {
            Ok(pq) => Some(pq),
            Err(Error::DegenerateOrigin) => None,
            Err(e) => return Err(e),
        };
        let settle_radius = SETTLE_FRACTION * x0.norm().max(1.0);
        Ok(Self {
            t_max,
            x0,
            pq,
            settle_radius,
            settled: false,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    /// `None` when `x₀ = 0`; the controller then never acts.
    pub fn pq(&self) -> Option<LyapunovPQ> {
        self.pq
    }

    pub fn settle_radius(&self) -> f64 {
        self.settle_radius
    }

    pub fn is_settled(&self) -> bool {
        self.settled
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.pq.map_or(0.0, |pq| lyapunov_v(x, &pq))
    }

    /// Latches the settled flag once `x` enters the settle radius; returns it.
    pub fn observe(&mut self, x: &DVector<f64>) -> bool {
        if !self.settled && (self.pq.is_none() || x.norm() < self.settle_radius) {
            self.settled = true;
        }
        self.settled
    }

    /// Feedback at `x`. Once `x` enters the settle radius the controller latches
    /// and returns `ũ = 0` from then on.
    pub fn action<S: AffineSystem>(&mut self, sys: &S, x: &DVector<f64>) -> Result<ControlAction> {
        if self.observe(x) {
            return Ok(ControlAction {
                u: DVector::zeros(sys.dim()),
                settled: true,
            });
        }
        let pq = self.pq.expect("unsettled controller has p, q");
        let f = sys.drift(x)?;
        let g = sys.input_matrix(x)?;
        let u = icd_control(&f, &g, &lyapunov_grad(x, &pq))?;
        Ok(ControlAction { u, settled: false })
    }
}
