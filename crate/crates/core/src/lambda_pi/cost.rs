use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_rows, is_symmetric_positive_definite, spectral_norm};
use crate::qmodel::QWeights;
use crate::system::UncertaintySpec;

/// Quadratic tracking cost `scale · ((Ex − r)ᵀ S (Ex − r) + aᵀ R a)` where
/// `E` picks the `tracked` state components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub s: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    pub tracked: Vec<usize>,
    /// Cost unit. Multiplies the stage cost and the ρ²Δ² penalty.
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl CostSpec {
    /// Glucose harness: only x₁ tracked, S = 1, R = 300, γ = 0.95.
    pub fn harness() -> Self {
        Self { s: vec![vec![1.0]], r: vec![vec![300.0]], gamma: 0.95, tracked: vec![0], scale: 1.0 }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let s = from_rows(&self.s)?;
        let r = from_rows(&self.r)?;
        if !is_symmetric_positive_definite(&s) || !is_symmetric_positive_definite(&r) {
            return Err(Error::config("S and R must be symmetric positive definite"));
        }
        if s.nrows() != self.tracked.len() {
            return Err(Error::config("S must be sized by the tracked state components"));
        }
        if r.nrows() != m {
            return Err(Error::Dimension { what: "R", expected: m, got: r.nrows() });
        }
        if self.tracked.iter().any(|&k| k >= n) {
            return Err(Error::config("tracked index out of range"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("discount {} outside (0, 1]", self.gamma)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config("cost scale must be positive"));
        }
        Ok(())
    }

    pub fn s_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.s).expect("validated")
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.r).expect("validated")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    #[default]
    Full,
    /// Γ ≡ 0, turning the problem into plain discounted tracking.
    Disabled,
}

/// Everything that defines the learning target apart from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub cost: CostSpec,
    pub uncertainty: UncertaintySpec,
    #[serde(default)]
    pub gamma_mode: GammaMode,
}

pub fn stage_cost(spec: &CostSpec, x: &[f64], r: &[f64], a: &[f64]) -> f64 {
    let quad = |m: &[Vec<f64>], v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (i, row) in m.iter().enumerate() {
            for (j, mij) in row.iter().enumerate() {
                acc += v[i] * mij * v[j];
            }
        }
        acc
    };
    let e: Vec<f64> = spec.tracked.iter().zip(r).map(|(&k, rk)| x[k] - rk).collect();
    spec.scale * (quad(&spec.s, &e) + quad(&spec.r, a))
}

/// Γ̂ = scale·ρ²Δ²(x) + (γ/4)‖∇ₓQ̂(x', r', a')‖² with a' the greedy action of
/// the same weights at the successor.
pub fn gamma_term(
    w: &QWeights,
    rho: u32,
    obj: &Objective,
    x: &[f64],
    x_next: &[f64],
    r_next: &[f64],
    a_next: &[f64],
) -> Result<f64> {
    if obj.gamma_mode == GammaMode::Disabled {
        return Ok(0.0);
    }
    let rho = rho as f64;
    let penalty = obj.cost.scale * rho * rho * obj.uncertainty.bound_sq(x)?;
    let g = w.grad_x(x_next, r_next, a_next);
    let gsq: f64 = g.iter().map(|v| v * v).sum();
    Ok(penalty + 0.25 * obj.cost.gamma * gsq)
}

/// scale·ρ²Δ² ≥ γΔ² + (γ/2)‖H‖₂Δ².
pub fn robust_inequality_holds(rho: u32, gamma: f64, scale: f64, delta_sq: f64, hess_norm: f64) -> bool {
    let rho = rho as f64;
    scale * rho * rho * delta_sq >= gamma * delta_sq + 0.5 * gamma * hess_norm * delta_sq
}

/// Evaluate the robustness inequality at a check point, with the Hessian of
/// Q̂* taken at the successor under the greedy action.
pub fn robust_inequality_check(
    w_star: &QWeights,
    rho: u32,
    obj: &Objective,
    x_s: &[f64],
    x_next: &[f64],
    r_next: &[f64],
    a_next: &[f64],
) -> Result<(bool, f64)> {
    let delta_sq = obj.uncertainty.bound_sq(x_s)?;
    let h = w_star.hess_x(x_next, r_next, a_next);
    let hn = spectral_norm(&h, 1e-10);
    let margin = (obj.cost.scale * (rho as f64).powi(2) - obj.cost.gamma - 0.5 * obj.cost.gamma * hn) * delta_sq;
    Ok((robust_inequality_holds(rho, obj.cost.gamma, obj.cost.scale, delta_sq, hn), margin))
}
