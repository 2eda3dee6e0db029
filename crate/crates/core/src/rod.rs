//! A viscoelastic rod `[0, L]` clamped at `y = 0` and in frictionless
//! contact with a rigid-elastic foundation at `y = L`, discretized with P1
//! displacements and P0 stresses.
//!
//! State `x = (σⁱʳ₀, …, σⁱʳ_{N−1}, ξ)` holds the per-element irreversible
//! stress and the accumulated penetration; the control `u` holds the nodal
//! displacements at nodes `1..=N`. The contact coordinate is the last one.
//!
//! * `A(x, u) = ∫(E ε(u) + σⁱʳ) ε(·) + k u_L⁺ e_L`
//! * `j(x, η, v) = h(ξ, η_L⁺) v_L⁺` with `h(ξ, r) = max(0, h₀ + c₁ξ + c₂r)`
//! * `F(t, x, u) = (β(E ε(u) + σⁱʳ − Fnl(ε(u))), u_L⁺)`
//! * `K = {v : v_L ≤ G}`, `f(t) = θ(t)·a` as a uniform body load.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dvi::{DviData, DviProblem, Theta};
use crate::error::{check_len, Error, Result};
use crate::operators::{MonotoneOperator, NonsmoothTerm, OperatorConstants, StateMap, YieldConstants};
use crate::space::{ConvexSet, LinearMap, Matrix, Space, Vector};
use crate::vi::QviConfig;

/// A per-element (or per-node) quantity given either as one value for all
/// or as an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Uniform(f64),
    List(Vec<f64>),
}

impl Default for Field {
    fn default() -> Self {
        Field::Uniform(0.0)
    }
}

impl Field {
    fn per_element(&self, n: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            Field::Uniform(v) => Ok(vec![*v; n]),
            Field::List(v) if v.len() == n => Ok(v.clone()),
            Field::List(v) => Err(Error::input(format!(
                "{name} has {} entries, expected {n}",
                v.len()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodConfig {
    /// L (m)
    pub length: f64,
    pub elements: usize,
    /// E per element (Pa)
    pub modulus: Field,
    /// β per element (1/s)
    pub visco: Field,
    /// Slope of `Fnl(ε) = s·ε` before clipping.
    pub fnl_slope: f64,
    /// Clip `|s| ≤ fnl_cap`; this is L_F.
    pub fnl_cap: f64,
    /// k (Pa/m)
    pub stiffness_k: f64,
    /// G (m)
    pub gap: f64,
    pub h0: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub theta: Theta,
    /// Uniform body load amplitude a (N/m).
    pub f0_amplitude: f64,
    /// Initial displacement: a number is the tip value of the linear field
    /// `u₀(y) = u₀·y/L`; a list gives nodes `1..=N`.
    #[serde(default)]
    pub u0: Field,
    /// Initial stress per element (Pa).
    #[serde(default)]
    pub sigma0: Field,
}

impl RodConfig {
    /// A small rod that opens at the kink, penetrates, and finally reaches
    /// the gap within `[0, 1]`.
    pub fn smoke() -> Self {
        RodConfig {
            length: 1.0,
            elements: 50,
            modulus: Field::Uniform(1.0),
            visco: Field::Uniform(0.5),
            fnl_slope: 0.5,
            fnl_cap: 1.0,
            stiffness_k: 0.5,
            gap: 0.25,
            h0: 0.2,
            c1: 0.5,
            c2: 0.2,
            theta: Theta::Ramp,
            f0_amplitude: 2.0,
            u0: Field::Uniform(0.0),
            sigma0: Field::Uniform(0.0),
        }
    }

    /// Effective slope of the clipped constitutive map.
    pub fn fnl_effective_slope(&self) -> f64 {
        self.fnl_slope.clamp(-self.fnl_cap, self.fnl_cap)
    }

    pub fn fnl(&self, strain: f64) -> f64 {
        self.fnl_effective_slope() * strain
    }

    /// `h(ξ, r) = max(0, h₀ + c₁ξ + c₂r)`.
    pub fn hardening(&self, xi: f64, r: f64) -> f64 {
        (self.h0 + self.c1 * xi + self.c2 * r).max(0.0)
    }
}

/// Physical view of a state vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RodState {
    pub sigma_ir: Vec<f64>,
    pub xi: f64,
}

impl RodState {
    pub fn from_vector(x: &Vector) -> Self {
        let n = x.len() - 1;
        RodState {
            sigma_ir: x.as_slice()[..n].to_vec(),
            xi: x[n],
        }
    }

    pub fn to_vector(&self) -> Vector {
        let mut v: Vec<f64> = self.sigma_ir.clone();
        v.push(self.xi);
        Vector::from_vec(v)
    }
}

#[inline]
fn strain(u: &Vector, h: f64, e: usize) -> f64 {
    let left = if e == 0 { 0.0 } else { u[e - 1] };
    (u[e] - left) / h
}

#[derive(Debug)]
struct RodOperator {
    h: f64,
    modulus: Vec<f64>,
    k: f64,
    constants: OperatorConstants,
}

impl MonotoneOperator for RodOperator {
    fn apply(&self, state: &Vector, u: &Vector) -> Vector {
        let n = self.modulus.len();
        let stress: Vec<f64> = (0..n)
            .map(|e| self.modulus[e] * strain(u, self.h, e) + state[e])
            .collect();
        let mut r = Vector::from_fn(n, |i, _| stress[i] - stress.get(i + 1).copied().unwrap_or(0.0));
        r[n - 1] += self.k * u[n - 1].max(0.0);
        r
    }

    fn constants(&self) -> OperatorConstants {
        self.constants
    }
}

#[derive(Debug)]
struct RodYield {
    support: [usize; 1],
    xi_index: usize,
    h0: f64,
    c1: f64,
    c2: f64,
    constants: YieldConstants,
}

impl NonsmoothTerm for RodYield {
    fn support(&self) -> &[usize] {
        &self.support
    }

    fn weights(&self, state: &Vector, eta: &Vector) -> Vec<f64> {
        let xi = state[self.xi_index];
        let r = eta[self.support[0]].max(0.0);
        vec![(self.h0 + self.c1 * xi + self.c2 * r).max(0.0)]
    }

    fn constants(&self) -> YieldConstants {
        self.constants
    }
}

#[derive(Debug)]
struct RodDynamics {
    h: f64,
    modulus: Vec<f64>,
    visco: Vec<f64>,
    slope: f64,
    lipschitz: f64,
}

impl StateMap for RodDynamics {
    fn eval(&self, _t: f64, state: &Vector, u: &Vector) -> Vector {
        let n = self.modulus.len();
        Vector::from_fn(n + 1, |i, _| {
            if i < n {
                let eps = strain(u, self.h, i);
                self.visco[i] * (self.modulus[i] * eps + state[i] - self.slope * eps)
            } else {
                u[n - 1].max(0.0)
            }
        })
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Contact quantities at the tip for a certified solution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContactDiagnostics {
    /// u_L
    pub tip: f64,
    /// Discrete reaction `λ = f̄_L − A_L(x, u)`.
    pub multiplier: f64,
    /// Yield value selected by the tip position.
    pub eta: f64,
    /// `σ_ν + k u_L⁺ + η = η − λ`; nonpositive when contact laws hold.
    pub total_reaction: f64,
    pub penetration_violation: f64,
    /// `max(σ_ν + k u_L⁺ + η, 0)`
    pub sign_residual: f64,
    /// `|(u_L − G)(σ_ν + k u_L⁺ + η)|`
    pub complementarity_residual: f64,
    /// Distance of λ to `[0, h]` when the tip sits at the kink.
    pub eta_bounds_residual: f64,
    /// `|λ − η|` when the constraint is inactive.
    pub stationarity_residual: f64,
    pub load_scale: f64,
}

impl ContactDiagnostics {
    pub fn max_residual(&self) -> f64 {
        self.penetration_violation
            .max(self.sign_residual)
            .max(self.complementarity_residual)
            .max(self.eta_bounds_residual)
            .max(self.stationarity_residual)
    }
}

/// The assembled rod problem together with the discretization data.
#[derive(Clone, Debug)]
pub struct RodProblem {
    config: RodConfig,
    problem: DviProblem,
    h: f64,
    modulus: Vec<f64>,
    visco: Vec<f64>,
    trace: f64,
}

impl RodProblem {
    pub fn assemble(config: &RodConfig) -> Result<Self> {
        let cfg = config;
        if cfg.elements < 1 {
            return Err(Error::input("rod needs at least one element"));
        }
        let n = cfg.elements;
        if !(cfg.length > 0.0) || !cfg.length.is_finite() {
            return Err(Error::input("rod length must be positive"));
        }
        let modulus = cfg.modulus.per_element(n, "modulus")?;
        let visco = cfg.visco.per_element(n, "visco")?;
        let sigma0 = cfg.sigma0.per_element(n, "sigma0")?;
        if modulus.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
            return Err(Error::input("modulus must be positive everywhere"));
        }
        if visco.iter().chain(&sigma0).any(|v| !v.is_finite()) {
            return Err(Error::input("visco and sigma0 must be finite"));
        }
        if !(cfg.fnl_cap >= 0.0) || !cfg.fnl_slope.is_finite() || !cfg.fnl_cap.is_finite() {
            return Err(Error::input("fnl_slope must be finite and fnl_cap nonnegative"));
        }
        if !(cfg.stiffness_k >= 0.0) || !cfg.stiffness_k.is_finite() {
            return Err(Error::input("stiffness_k must be nonnegative"));
        }
        if !(cfg.gap > 0.0) || !cfg.gap.is_finite() {
            return Err(Error::input("gap must be positive"));
        }
        if ![cfg.h0, cfg.c1, cfg.c2, cfg.f0_amplitude].iter().all(|v| v.is_finite()) {
            return Err(Error::input("h0, c1, c2 and f0_amplitude must be finite"));
        }
        let h = cfg.length / n as f64;

        let mut gram = Matrix::zeros(n, n);
        for i in 0..n {
            gram[(i, i)] = if i + 1 < n { 2.0 / h } else { 1.0 / h };
            if i + 1 < n {
                gram[(i, i + 1)] = -1.0 / h;
                gram[(i + 1, i)] = -1.0 / h;
            }
        }
        let v = Arc::new(Space::new(gram)?);
        let mut xw = vec![h; n];
        xw.push(1.0);
        let x = Arc::new(Space::diagonal(&xw)?);
        let mut mass = Matrix::zeros(n + 1, n + 1);
        for e in 0..n {
            mass[(e, e)] += h / 3.0;
            mass[(e + 1, e + 1)] += h / 3.0;
            mass[(e, e + 1)] += h / 6.0;
            mass[(e + 1, e)] += h / 6.0;
        }
        let z = Arc::new(Space::new(mass)?);
        let mut pi = Matrix::zeros(n + 1, n);
        for i in 0..n {
            pi[(i + 1, i)] = 1.0;
        }
        let pi = LinearMap::new(pi, v.clone(), z)?;

        let dof = n - 1;
        let trace = v.coordinate_weight(dof).sqrt();
        let e_min = modulus.iter().copied().fold(f64::INFINITY, f64::min);
        let e_max = modulus.iter().copied().fold(0.0, f64::max);
        let slope = cfg.fnl_effective_slope();
        let operator = RodOperator {
            h,
            modulus: modulus.clone(),
            k: cfg.stiffness_k,
            constants: OperatorConstants {
                monotonicity: e_min,
                state_lipschitz: 1.0,
                lipschitz: e_max + cfg.stiffness_k * trace * trace,
            },
        };
        let beta = cfg.c2.abs() * trace * trace;
        let l_h = cfg.c1.abs().max(cfg.c2.abs());
        if !(e_min > beta) {
            return Err(Error::config(format!(
                "contraction condition violated: m_E = {e_min:.6e} ≤ β = |c2|·c_tr² = {beta:.6e} (L_h = {l_h:.6e}, c_tr = {trace:.6e})"
            )));
        }
        let term = RodYield {
            support: [dof],
            xi_index: n,
            h0: cfg.h0,
            c1: cfg.c1,
            c2: cfg.c2,
            constants: YieldConstants {
                alpha: cfg.c1.abs() * trace,
                beta,
                tau: cfg.h0.max(0.0) * trace,
                delta: (cfg.c1.abs() * trace).max(beta),
            },
        };
        let visco_max = visco.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let spread = modulus.iter().fold(0.0_f64, |a, e| a.max((e - slope).abs()));
        let dynamics = RodDynamics {
            h,
            modulus: modulus.clone(),
            visco: visco.clone(),
            slope,
            lipschitz: visco_max.max(visco_max * spread + trace),
        };

        let u0 = match &cfg.u0 {
            Field::Uniform(tip) => Vector::from_fn(n, |i, _| tip * (i + 1) as f64 / n as f64),
            Field::List(_) => Vector::from_vec(cfg.u0.per_element(n, "u0")?),
        };
        let mut x0 = Vector::zeros(n + 1);
        for e in 0..n {
            x0[e] = sigma0[e] - modulus[e] * strain(&u0, h, e);
        }

        let problem = DviProblem::new(DviData {
            state_space: x,
            dynamics: Arc::new(dynamics),
            operator: Arc::new(operator),
            term: Arc::new(term),
            set: ConvexSet::node_upper_bound(v, dof, cfg.gap)?,
            pi,
            theta: cfg.theta,
            load: Vector::from_element(n + 1, cfg.f0_amplitude),
            x0,
        })?;
        Ok(RodProblem {
            config: cfg.clone(),
            problem,
            h,
            modulus,
            visco,
            trace,
        })
    }

    pub fn config(&self) -> &RodConfig {
        &self.config
    }

    pub fn problem(&self) -> &DviProblem {
        &self.problem
    }

    pub fn into_problem(self) -> DviProblem {
        self.problem
    }

    pub fn elements(&self) -> usize {
        self.modulus.len()
    }

    /// Index of the tip displacement in the control vector.
    pub fn contact_dof(&self) -> usize {
        self.elements() - 1
    }

    /// Norm of `v ↦ v_L` in the control metric.
    pub fn trace_constant(&self) -> f64 {
        self.trace
    }

    pub fn strain(&self, u: &Vector, element: usize) -> f64 {
        strain(u, self.h, element)
    }

    pub fn state_derivative(&self, state: &RodState, u: &Vector, t: f64) -> Result<RodState> {
        let n = self.elements();
        check_len("irreversible stress", n, state.sigma_ir.len())?;
        check_len("displacement", n, u.len())?;
        let x = state.to_vector();
        Ok(RodState::from_vector(&self.problem.dynamics(t, &x, u)))
    }

    /// Contact quantities at `(t, x, u)`. The point must pass the residual
    /// certificate of the QVI; other inputs are refused.
    pub fn contact_diagnostics(&self, x: &Vector, u: &Vector, t: f64, cfg: &QviConfig) -> Result<ContactDiagnostics> {
        let n = self.elements();
        check_len("state", n + 1, x.len())?;
        check_len("displacement", n, u.len())?;
        let cert = self.problem.certify_at(t, x, u, cfg, cfg.seed ^ 0xC0A7)?;
        if !cert.passed {
            return Err(Error::Certificate(format!(
                "contact diagnostics need a certified solution (sampled gap {:.3e})",
                cert.min_gap
            )));
        }
        let dof = self.contact_dof();
        let load = self.problem.load_at(t);
        let a = self.problem.data().operator.apply(x, u);
        let lambda = load[dof] - a[dof];
        let tip = u[dof];
        let g = self.config.gap;
        let omega = self.config.hardening(x[n], tip.max(0.0));
        let at_kink = tip.abs() <= 1e-12 * (1.0 + g);
        let eta = if at_kink {
            lambda.clamp(0.0, omega)
        } else if tip > 0.0 {
            omega
        } else {
            0.0
        };
        let total = eta - lambda;
        let active = tip >= g - 1e-12 * (1.0 + g);
        let eta_bounds = if at_kink {
            (-lambda).max(lambda - omega).max(0.0)
        } else {
            0.0
        };
        let sigma_max = x.as_slice()[..n].iter().fold(0.0_f64, |m, s| m.max(s.abs()));
        Ok(ContactDiagnostics {
            tip,
            multiplier: lambda,
            eta,
            total_reaction: total,
            penetration_violation: (tip - g).max(0.0),
            sign_residual: total.max(0.0),
            complementarity_residual: ((tip - g) * total).abs(),
            eta_bounds_residual: eta_bounds,
            stationarity_residual: if active { 0.0 } else { (lambda - eta).abs() },
            load_scale: load.iter().map(|f| f.abs()).sum::<f64>()
                + omega
                + sigma_max
                + self.config.stiffness_k * tip.abs(),
        })
    }

    /// Per-element viscosity rates.
    pub fn visco(&self) -> &[f64] {
        &self.visco
    }

    pub fn modulus(&self) -> &[f64] {
        &self.modulus
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_element(modulus: f64) -> RodConfig {
        RodConfig {
            length: 1.0,
            elements: 1,
            modulus: Field::Uniform(modulus),
            visco: Field::Uniform(1.0),
            fnl_slope: 2.0,
            fnl_cap: 1.0,
            stiffness_k: 0.0,
            gap: 1.0,
            h0: 0.0,
            c1: 0.0,
            c2: 0.0,
            theta: Theta::Const,
            f0_amplitude: 0.0,
            u0: Field::Uniform(0.0),
            sigma0: Field::Uniform(0.0),
        }
    }

    #[test]
    fn single_element_stiffness() {
        let rod = RodProblem::assemble(&one_element(1.0)).unwrap();
        let p = rod.problem();
        let x = Vector::zeros(2);
        let a = p.data().operator.apply(&x, &Vector::from_element(1, 1.0));
        assert_eq!(a[0], 1.0);
        assert_eq!(rod.contact_dof(), 0);
        assert_eq!(p.constants().beta, 0.0);
    }

    #[test]
    fn clipped_constitutive_map() {
        let rod = RodProblem::assemble(&one_element(2.0)).unwrap();
        assert_eq!(rod.config().fnl(0.3), 0.3);
        let d = rod
            .state_derivative(
                &RodState {
                    sigma_ir: vec![0.0],
                    xi: 0.0,
                },
                &Vector::from_element(1, 0.3),
                0.0,
            )
            .unwrap();
        assert!((d.sigma_ir[0] - 0.3).abs() < 1e-15);
        assert!((d.xi - 0.3).abs() < 1e-15);
    }

    #[test]
    fn linear_viscoelastic_rate_ignores_strain() {
        let mut cfg = one_element(1.5);
        cfg.fnl_slope = 1.5;
        cfg.fnl_cap = 2.0;
        cfg.visco = Field::Uniform(0.5);
        let rod = RodProblem::assemble(&cfg).unwrap();
        let d = rod
            .state_derivative(
                &RodState {
                    sigma_ir: vec![2.0],
                    xi: 0.0,
                },
                &Vector::from_element(1, -0.3),
                0.0,
            )
            .unwrap();
        assert_eq!(d.sigma_ir[0], 1.0);
        assert_eq!(d.xi, 0.0);
    }

    #[test]
    fn rest_state_is_stationary() {
        let rod = RodProblem::assemble(&RodConfig::smoke()).unwrap();
        let n = rod.elements();
        let d = rod
            .state_derivative(
                &RodState {
                    sigma_ir: vec![0.0; n],
                    xi: 0.0,
                },
                &Vector::zeros(n),
                0.0,
            )
            .unwrap();
        assert!(d.sigma_ir.iter().all(|&s| s == 0.0) && d.xi == 0.0);
    }

    #[test]
    fn stiffness_trace_constant_is_root_length() {
        let rod = RodProblem::assemble(&RodConfig::smoke()).unwrap();
        assert!((rod.trace_constant() - 1.0).abs() < 1e-12);
        let mut cfg = RodConfig::smoke();
        cfg.length = 4.0;
        let rod = RodProblem::assemble(&cfg).unwrap();
        assert!((rod.trace_constant() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_coupling_is_refused() {
        let mut cfg = RodConfig::smoke();
        cfg.c2 = 1.5;
        let err = RodProblem::assemble(&cfg).unwrap_err();
        assert!(err.to_string().contains("L_h"));
        assert!(err.to_string().contains("m_E"));
        cfg.c2 = 0.2;
        cfg.elements = 0;
        assert!(matches!(RodProblem::assemble(&cfg).unwrap_err(), Error::Input(_)));
    }

    #[test]
    fn list_fields_must_match_the_mesh() {
        let mut cfg = RodConfig::smoke();
        cfg.modulus = Field::List(vec![1.0; 3]);
        assert!(RodProblem::assemble(&cfg).unwrap_err().is_configuration());
    }

    #[test]
    fn initial_state_removes_elastic_part() {
        let mut cfg = RodConfig::smoke();
        cfg.elements = 4;
        cfg.u0 = Field::Uniform(0.2);
        cfg.sigma0 = Field::Uniform(1.0);
        let rod = RodProblem::assemble(&cfg).unwrap();
        let x0 = rod.problem().x0();
        for e in 0..4 {
            assert!((x0[e] - (1.0 - 0.2)).abs() < 1e-14);
        }
        assert_eq!(x0[4], 0.0);
    }

    #[test]
    fn parses_scalar_and_list_fields() {
        let src = r#"
            length = 1.0
            elements = 2
            modulus = [1.0, 2.0]
            visco = 0.5
            fnl_slope = 0.5
            fnl_cap = 1.0
            stiffness_k = 0.0
            gap = 0.1
            h0 = 0.0
            c1 = 0.0
            c2 = 0.0
            theta = "sine"
            f0_amplitude = 1.0
        "#;
        let cfg: RodConfig = toml::from_str(src).unwrap();
        assert_eq!(cfg.modulus, Field::List(vec![1.0, 2.0]));
        assert_eq!(cfg.theta, Theta::Sine);
        let bad = format!("{src}\nmodulous = 1.0\n");
        assert!(toml::from_str::<RodConfig>(&bad).is_err());
    }
}
