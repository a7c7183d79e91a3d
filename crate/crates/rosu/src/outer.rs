//! Outer updates: the exact chain-rule gradient of the surrogate retain
//! objective, the relaxed transported gradient used in practice, dense
//! Jacobian deviation reports, amplification schedules, and the full,
//! zero-order, and representation-level step rules.

use crate::error::{Error, Result};
use crate::inner::{rosu_perturbation, Branch, InnerSolution, PerturbationConfig};
use crate::linalg::{dot, Rank1Projector, Vector};
use crate::matrix::{operator_norm, Matrix};
use crate::objectives::{Objective, ObjectivePair, QuadraticObjective, RepresentationObjective};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepBranch {
    Full,
    ZeroOrder,
    Fallback,
    Exact,
}

/// One outer update. On the fallback branch only `new_params` is populated.
#[derive(Debug, Clone)]
pub struct OuterStep {
    pub branch: StepBranch,
    pub inner_branch: Branch,
    pub q_norm: f64,
    pub surrogate_grad: Option<Vector>,
    pub transported: Option<Vector>,
    pub amplification: Option<Vector>,
    pub delta: Option<Vector>,
    pub beta: f64,
    pub new_params: Vector,
}

/// Amplification schedule for β_t.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind")]
pub enum BetaSchedule {
    Fixed { value: f64 },
    TiedToLr,
    TwoPhase { warmup_steps: usize, beta_high: f64, beta_low: f64 },
}

pub const TWO_PHASE_WARMUP_START: f64 = 0.001;

pub fn beta_at(schedule: &BetaSchedule, step_index: usize, eta_t: f64, rho: f64) -> f64 {
    match schedule {
        BetaSchedule::Fixed { value } => *value,
        BetaSchedule::TiedToLr => eta_t / rho,
        BetaSchedule::TwoPhase { warmup_steps, beta_high, beta_low } => {
            if step_index < *warmup_steps {
                if *warmup_steps <= 1 {
                    *beta_high
                } else {
                    let t = step_index as f64 / (*warmup_steps as f64 - 1.0);
                    TWO_PHASE_WARMUP_START + (beta_high - TWO_PHASE_WARMUP_START) * t
                }
            } else {
                *beta_low
            }
        }
    }
}

/// v = g̃_r + α_τ (g̃_r − (g_r·g̃_r)/(‖g_r‖²+τ) g_r − (u_τ·g̃_r) u_τ).
pub fn relaxed_transported_gradient(
    g_r: &Vector,
    sol: &InnerSolution,
    g_tilde: &Vector,
    tau: f64,
) -> Result<Vector> {
    if sol.branch != Branch::Rosu && sol.branch != Branch::Subspace {
        return Err(Error::InvalidBranch("transported gradient needs Rosu branch"));
    }
    if g_r.norm() == 0.0 {
        return Err(Error::DegenerateGradient("zero retain gradient"));
    }
    let alpha = sol.alpha.ok_or(Error::InvalidBranch("missing alpha"))?;
    let u = sol
        .unit_dir
        .as_ref()
        .ok_or(Error::InvalidBranch("missing unit direction"))?;
    let denom = g_r.norm_sq() + tau;
    let mut correction = g_tilde.axpy(-dot(g_r, g_tilde)? / denom, g_r);
    correction = correction.axpy(-dot(u, g_tilde)?, u);
    Ok(g_tilde.axpy(alpha, &correction))
}

/// DP_r[ξ] applied to g_f, with h = ∇²L_r ξ:
/// (h g_rᵀ + g_r hᵀ)/‖g_r‖² g_f − 2(g_r·h)/‖g_r‖⁴ (g_r·g_f) g_r.
fn projector_differential_apply(g_r: &Vector, h: &Vector, g_f: &Vector) -> Vector {
    let ns = g_r.norm_sq();
    let grgf = dot(g_r, g_f).expect("dims");
    let hgf = dot(h, g_f).expect("dims");
    let grh = dot(g_r, h).expect("dims");
    h.scale(grgf / ns)
        .axpy(hgf / ns, g_r)
        .axpy(-2.0 * grh * grgf / (ns * ns), g_r)
}

struct ExactGeometry {
    g_f: Vector,
    g_r: Vector,
    q_norm: f64,
    u_perp: Vector,
    delta: Vector,
}

fn exact_geometry(pair: &ObjectivePair, w: &Vector, cfg: &PerturbationConfig) -> Result<ExactGeometry> {
    let g_f = pair.forget.grad(w)?;
    let g_r = pair.retain.grad(w)?;
    if g_r.norm() == 0.0 {
        return Err(Error::DegenerateGeometry("zero retain gradient"));
    }
    // the exact path is stated for the unregularized projector
    let q = Rank1Projector::new(g_r.clone(), 0.0)?.project_out(&g_f)?;
    let q_norm = q.norm();
    if q_norm <= cfg.eps_q {
        return Err(Error::DegenerateGeometry("projected component below eps_q"));
    }
    let u_perp = q.scale(1.0 / q_norm);
    let delta = u_perp.scale(cfg.rho);
    Ok(ExactGeometry { g_f, g_r, q_norm, u_perp, delta })
}

/// Exact chain-rule gradient of w ↦ L_r(w + δ_rosu(w)), matrix-free: one
/// forget HVP and one retain HVP besides the two gradients.
pub fn exact_outer_gradient(
    pair: &ObjectivePair,
    w: &Vector,
    cfg: &PerturbationConfig,
) -> Result<Vector> {
    let geo = exact_geometry(pair, w, cfg)?;
    let g_tilde = pair.retain.grad(&w.add(&geo.delta))?;

    // y = (ρ/‖q‖)(I − P_⊥) g̃
    let y = g_tilde
        .axpy(-dot(&geo.u_perp, &g_tilde)?, &geo.u_perp)
        .scale(cfg.rho / geo.q_norm);

    // Jᵀ g̃ = H_f (I−P_r) y − H_r b with the adjoint of the projector
    // differential folded into b.
    let ns = geo.g_r.norm_sq();
    let proj_y = y.axpy(-dot(&y, &geo.g_r)? / ns, &geo.g_r);
    let hf_term = pair.forget.hvp(w, &proj_y)?;

    let grgf = dot(&geo.g_r, &geo.g_f)?;
    let gry = dot(&geo.g_r, &y)?;
    let b = y
        .scale(grgf / ns)
        .axpy(gry / ns, &geo.g_f)
        .axpy(-2.0 * grgf * gry / (ns * ns), &geo.g_r);
    let hr_term = pair.retain.hvp(w, &b)?;

    Ok(g_tilde.add(&hf_term).sub(&hr_term))
}

/// Densely materialized exact Jacobian of w ↦ δ_rosu(w), column by column.
pub fn exact_jacobian_dense(
    pair: &ObjectivePair,
    w: &Vector,
    cfg: &PerturbationConfig,
) -> Result<Matrix> {
    let dim = w.dim();
    if dim > 64 {
        return Err(Error::UnsupportedDimension(dim, 64));
    }
    let geo = exact_geometry(pair, w, cfg)?;
    let scale = cfg.rho / geo.q_norm;
    let mut cols = Vec::with_capacity(dim);
    for i in 0..dim {
        let e = Vector::basis(dim, i);
        let hf = pair.forget.hvp(w, &e)?;
        let hr = pair.retain.hvp(w, &e)?;
        let ns = geo.g_r.norm_sq();
        let jq = hf
            .axpy(-dot(&hf, &geo.g_r)? / ns, &geo.g_r)
            .sub(&projector_differential_apply(&geo.g_r, &hr, &geo.g_f));
        let col = jq
            .axpy(-dot(&geo.u_perp, &jq)?, &geo.u_perp)
            .scale(scale);
        cols.push(col);
    }
    Ok(Matrix::from_columns(&cols))
}

/// Relaxed Jacobian Ĵ = (ρ/‖q‖)(I − P_r − P_⊥), dense.
pub fn relaxed_jacobian_dense(
    pair: &ObjectivePair,
    w: &Vector,
    cfg: &PerturbationConfig,
) -> Result<Matrix> {
    let geo = exact_geometry(pair, w, cfg)?;
    let dim = w.dim();
    let p_r = Matrix::outer(&geo.g_r, &geo.g_r).scale(1.0 / geo.g_r.norm_sq());
    let p_perp = Matrix::outer(&geo.u_perp, &geo.u_perp);
    Ok(Matrix::identity(dim)
        .sub(&p_r)
        .sub(&p_perp)
        .scale(cfg.rho / geo.q_norm))
}

#[derive(Debug, Clone)]
pub struct JacobianReport {
    pub exact: Matrix,
    pub relaxed: Matrix,
    pub deviation_opnorm: f64,
    pub bound: f64,
    pub eps_h: f64,
    pub eps_p: f64,
    /// Gradient-level deviation ‖∇F − ∇̂F‖ and its bound.
    pub grad_deviation: f64,
    pub grad_bound: f64,
}

/// Dense audit of the relaxed-Jacobian deviation bound on a quadratic pair.
pub fn relaxed_gradient_deviation_report(
    forget: &QuadraticObjective,
    retain: &QuadraticObjective,
    w: &Vector,
    cfg: &PerturbationConfig,
    seed: u64,
) -> Result<JacobianReport> {
    let dim = w.dim();
    if dim > 64 {
        return Err(Error::UnsupportedDimension(dim, 64));
    }
    let pair = ObjectivePair { forget, retain };
    let geo = exact_geometry(&pair, w, cfg)?;

    let exact = exact_jacobian_dense(&pair, w, cfg)?;
    let relaxed = relaxed_jacobian_dense(&pair, w, cfg)?;
    let deviation_opnorm = operator_norm(&exact.sub(&relaxed), seed ^ 0xa5);

    // ε_H is exact for quadratics
    let eps_h = operator_norm(&forget.hessian().sub(&Matrix::identity(dim)), seed ^ 0x1d);

    // ε_P: max of the analytic upper bound 2‖∇²L_r‖/‖g_r‖ and a sampled sup
    // over 64 random unit directions, so the bound is never under-reported.
    let m_r = operator_norm(retain.hessian(), seed ^ 0x2e);
    let analytic = 2.0 * m_r / geo.g_r.norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut sampled: f64 = 0.0;
    for _ in 0..64 {
        let xi = {
            let v = Vector::from_raw((0..dim).map(|_| normal.sample(&mut rng)).collect());
            v.scale(1.0 / v.norm())
        };
        let h = retain.hessian().matvec(&xi)?;
        let ns = geo.g_r.norm_sq();
        let dp = Matrix::outer(&h, &geo.g_r)
            .add(&Matrix::outer(&geo.g_r, &h))
            .scale(1.0 / ns)
            .sub(
                &Matrix::outer(&geo.g_r, &geo.g_r)
                    .scale(2.0 * dot(&geo.g_r, &h)? / (ns * ns)),
            );
        sampled = sampled.max(operator_norm(&dp, seed ^ 0x3f));
    }
    let eps_p = analytic.max(sampled);

    let bound = cfg.rho / geo.q_norm * (eps_h + eps_p * geo.g_f.norm());

    let g_tilde = retain.grad(&w.add(&geo.delta))?;
    let exact_grad = g_tilde.add(&exact.matvec_transpose(&g_tilde)?);
    let relaxed_grad = g_tilde.add(&relaxed.matvec_transpose(&g_tilde)?);
    let grad_deviation = exact_grad.sub(&relaxed_grad).norm();
    let grad_bound = cfg.rho * g_tilde.norm() / geo.q_norm * (eps_h + eps_p * geo.g_f.norm());

    Ok(JacobianReport {
        exact,
        relaxed,
        deviation_opnorm,
        bound,
        eps_h,
        eps_p,
        grad_deviation,
        grad_bound,
    })
}

fn assemble_step(
    w: &Vector,
    g_r: &Vector,
    sol: InnerSolution,
    v: Vector,
    g_tilde: Vector,
    beta: f64,
    eta: f64,
    branch: StepBranch,
) -> OuterStep {
    let delta = sol.delta.clone().expect("non-fallback");
    let amplification = delta.scale(beta);
    let new_params = w.add(&amplification).axpy(-eta, &v);
    let _ = g_r;
    OuterStep {
        branch,
        inner_branch: sol.branch,
        q_norm: sol.q_norm,
        surrogate_grad: Some(g_tilde),
        transported: Some(v),
        amplification: Some(amplification),
        delta: Some(delta),
        beta,
        new_params,
    }
}

fn fallback_step(w: &Vector, g_r: &Vector, eta: f64, q_norm: f64) -> OuterStep {
    OuterStep {
        branch: StepBranch::Fallback,
        inner_branch: Branch::DegenerateFallback,
        q_norm,
        surrogate_grad: None,
        transported: None,
        amplification: None,
        delta: None,
        beta: 0.0,
        new_params: w.axpy(-eta, g_r),
    }
}

/// One full update: w ← w + βδ − ηv, with the degenerate retain-descent
/// fallback when ‖q_τ‖ ≤ ε_q.
pub fn rosu_step(
    pair: &ObjectivePair,
    w: &Vector,
    cfg: &PerturbationConfig,
    schedule: &BetaSchedule,
    step_index: usize,
) -> Result<OuterStep> {
    let g_f = pair.forget.grad(w)?;
    let g_r = pair.retain.grad(w)?;
    let sol = rosu_perturbation(&g_f, &g_r, cfg)?;
    if sol.branch == Branch::DegenerateFallback {
        return Ok(fallback_step(w, &g_r, cfg.eta, sol.q_norm));
    }
    let g_tilde = pair.retain.grad(&w.add(sol.delta()?))?;
    let v = relaxed_transported_gradient(&g_r, &sol, &g_tilde, cfg.tau)?;
    let beta = beta_at(schedule, step_index, cfg.eta, cfg.rho);
    Ok(assemble_step(w, &g_r, sol, v, g_tilde, beta, cfg.eta, StepBranch::Full))
}

/// Zero-order variant: identical geometry, v = g̃_r with no correction.
pub fn zero_order_step(
    pair: &ObjectivePair,
    w: &Vector,
    cfg: &PerturbationConfig,
    schedule: &BetaSchedule,
    step_index: usize,
) -> Result<OuterStep> {
    let g_f = pair.forget.grad(w)?;
    let g_r = pair.retain.grad(w)?;
    let sol = rosu_perturbation(&g_f, &g_r, cfg)?;
    if sol.branch == Branch::DegenerateFallback {
        return Ok(fallback_step(w, &g_r, cfg.eta, sol.q_norm));
    }
    let g_tilde = pair.retain.grad(&w.add(sol.delta()?))?;
    let v = g_tilde.clone();
    let beta = beta_at(schedule, step_index, cfg.eta, cfg.rho);
    Ok(assemble_step(w, &g_r, sol, v, g_tilde, beta, cfg.eta, StepBranch::ZeroOrder))
}

/// Representation-level step in the restricted trainable subspace. The noise
/// shift for the forget loss is resampled from `noise_seed`; coordinates
/// outside the trainable set are untouched bitwise.
pub fn representation_rosu_step(
    forget: &mut RepresentationObjective,
    retain: &RepresentationObjective,
    theta: &Vector,
    cfg: &PerturbationConfig,
    schedule: &BetaSchedule,
    step_index: usize,
    noise_seed: u64,
) -> Result<OuterStep> {
    let w = forget.embed(theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    forget.resample_noise(&mut rng);

    let g_f = forget.grad(&w)?;
    let g_r = retain.grad(&w)?;
    if g_r.norm() == 0.0 {
        return Err(Error::DegenerateGradient(
            "retain representation loss is already stationary",
        ));
    }
    let sol = rosu_perturbation(&g_f, &g_r, cfg)?;
    if sol.branch == Branch::DegenerateFallback {
        return Ok(fallback_step(&w, &g_r, cfg.eta, sol.q_norm));
    }
    let g_tilde = retain.grad(&w.add(sol.delta()?))?;
    let v = relaxed_transported_gradient(&g_r, &sol, &g_tilde, cfg.tau)?;
    let beta = beta_at(schedule, step_index, cfg.eta, cfg.rho);
    Ok(assemble_step(&w, &g_r, sol, v, g_tilde, beta, cfg.eta, StepBranch::Full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{fd_gradient, make_coupled_pair, CoupledPairSpec, MlpNetwork};
    use rand::Rng;

    fn cfg(rho: f64, eta: f64) -> PerturbationConfig {
        let mut c = PerturbationConfig::new(rho, eta).unwrap();
        c.tau = 0.0;
        c
    }

    #[test]
    fn beta_schedules() {
        assert_eq!(beta_at(&BetaSchedule::Fixed { value: 0.3 }, 5, 0.1, 0.5), 0.3);
        assert_eq!(beta_at(&BetaSchedule::TiedToLr, 5, 0.1, 0.5), 0.2);
        let two = BetaSchedule::TwoPhase { warmup_steps: 10, beta_high: 0.06, beta_low: 0.012 };
        assert_eq!(beta_at(&two, 0, 0.1, 0.5), 0.001);
        assert!((beta_at(&two, 9, 0.1, 0.5) - 0.06).abs() < 1e-15);
        assert_eq!(beta_at(&two, 10, 0.1, 0.5), 0.012);
        assert_eq!(beta_at(&two, 1000, 0.1, 0.5), 0.012);
    }

    #[test]
    fn transported_gradient_special_cases() {
        // dim 3, g_r = e1, g_f chosen so u = e2
        let g_r = Vector::basis(3, 0);
        let g_f = Vector::new(vec![1.0, 1.0, 0.0]).unwrap();
        let c = cfg(2.0, 0.1);
        let sol = rosu_perturbation(&g_f, &g_r, &c).unwrap();
        let alpha = sol.alpha.unwrap();

        // g̃ orthogonal to both g_r and u: v = (1+α) g̃
        let g_tilde = Vector::basis(3, 2);
        let v = relaxed_transported_gradient(&g_r, &sol, &g_tilde, 0.0).unwrap();
        assert!(v.sub(&g_tilde.scale(1.0 + alpha)).norm() < 1e-12);

        // g̃ = g_r: correction vanishes, v = g̃
        let v = relaxed_transported_gradient(&g_r, &sol, &g_r, 0.0).unwrap();
        assert!(v.sub(&g_r).norm() < 1e-12);

        // g̃ = u: v = u
        let u = sol.unit_dir.clone().unwrap();
        let v = relaxed_transported_gradient(&g_r, &sol, &u, 0.0).unwrap();
        assert!(v.sub(&u).norm() < 1e-12);
    }

    #[test]
    fn exact_gradient_matches_finite_differences_on_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for trial in 0..10 {
            let dim = rng.gen_range(4..16);
            let spec = CoupledPairSpec::new(dim, 0.4, 1000 + trial).unwrap();
            let (forget, retain) = make_coupled_pair(&spec).unwrap();
            let pair = ObjectivePair { forget: &forget, retain: &retain };
            let c = cfg(0.3, 0.1);
            let w = spec.anchor.clone();

            let analytic = exact_outer_gradient(&pair, &w, &c).unwrap();
            let fd = fd_gradient(
                |x| {
                    let geo_gf = forget.grad(x)?;
                    let geo_gr = retain.grad(x)?;
                    let q = Rank1Projector::new(geo_gr, 0.0)?.project_out(&geo_gf)?;
                    let delta = q.scale(c.rho / q.norm());
                    retain.loss(&x.add(&delta))
                },
                &w,
            )
            .unwrap();
            let err = analytic.sub(&fd).norm();
            assert!(
                err <= 1e-5 * analytic.norm().max(1.0),
                "fd mismatch {err} vs norm {}",
                analytic.norm()
            );
        }
    }

    #[test]
    fn exact_gradient_dense_route_agrees_with_matrix_free() {
        let spec = CoupledPairSpec::new(8, 0.6, 4242).unwrap();
        let (forget, retain) = make_coupled_pair(&spec).unwrap();
        let pair = ObjectivePair { forget: &forget, retain: &retain };
        let c = cfg(0.4, 0.1);
        let w = spec.anchor.clone();

        let mf = exact_outer_gradient(&pair, &w, &c).unwrap();
        let jac = exact_jacobian_dense(&pair, &w, &c).unwrap();
        let geo_gf = forget.grad(&w).unwrap();
        let geo_gr = retain.grad(&w).unwrap();
        let q = Rank1Projector::new(geo_gr, 0.0)
            .unwrap()
            .project_out(&geo_gf)
            .unwrap();
        let delta = q.scale(c.rho / q.norm());
        let g_tilde = retain.grad(&w.add(&delta)).unwrap();
        let dense = g_tilde.add(&jac.matvec_transpose(&g_tilde).unwrap());
        assert!(mf.sub(&dense).norm() <= 1e-10 * mf.norm().max(1.0));
    }

    #[test]
    fn exact_gradient_approaches_base_gradient_as_rho_shrinks() {
        let spec = CoupledPairSpec::new(10, 0.5, 77).unwrap();
        let (forget, retain) = make_coupled_pair(&spec).unwrap();
        let pair = ObjectivePair { forget: &forget, retain: &retain };
        let w = spec.anchor.clone();
        let g_r = retain.grad(&w).unwrap();

        let mut prev_gap = f64::INFINITY;
        for &rho in &[1e-2, 1e-3, 1e-4] {
            let c = cfg(rho, 0.1);
            let g = exact_outer_gradient(&pair, &w, &c).unwrap();
            let gap = g.sub(&g_r).norm();
            // linear decay in rho
            assert!(gap < prev_gap);
            assert!(gap <= 10.0 * rho * (1.0 + g_r.norm()));
            prev_gap = gap;
        }
    }

    #[test]
    fn deviation_report_identity_hessian_linear_retain() {
        // A_f = I and an (almost) linear retain loss: exact equals relaxed.
        let dim = 6;
        let a_f = Matrix::identity(dim);
        // non-uniform forget center so g_f is not parallel to g_r
        let c_f = Vector::new((0..dim).map(|i| 1.0 + i as f64).collect()).unwrap();
        let forget = QuadraticObjective::new(a_f, c_f, 0.0).unwrap();
        // near-flat retain curvature with a center far enough away that the
        // retain gradient at w = 0 stays O(1)
        let a_r = Matrix::identity(dim).scale(1e-6);
        let retain = QuadraticObjective::new(
            a_r,
            Vector::new(vec![-2.0e6; dim]).unwrap(),
            0.0,
        )
        .unwrap();
        let w = Vector::zeros(dim);
        let c = cfg(0.2, 0.1);
        let report =
            relaxed_gradient_deviation_report(&forget, &retain, &w, &c, 9).unwrap();
        assert!(report.eps_h <= 1e-12);
        assert!(report.deviation_opnorm <= report.bound + 1e-9);
        // deviation itself is tiny: both sources of error nearly vanish
        assert!(report.deviation_opnorm <= 1e-5, "{}", report.deviation_opnorm);
    }

    #[test]
    fn deviation_bound_holds_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let dim = rng.gen_range(4..16);
            let spec = CoupledPairSpec::new(dim, rng.gen_range(-0.8..0.8), 500 + trial).unwrap();
            let (forget, retain) = make_coupled_pair(&spec).unwrap();
            let c = cfg(0.3, 0.1);
            let report =
                relaxed_gradient_deviation_report(&forget, &retain, &spec.anchor, &c, trial)
                    .unwrap();
            assert!(
                report.deviation_opnorm <= report.bound + 1e-9,
                "deviation {} > bound {}",
                report.deviation_opnorm,
                report.bound
            );
            assert!(report.grad_deviation <= report.grad_bound + 1e-9);
        }
    }

    #[test]
    fn rosu_step_decomposition_and_fallback() {
        let spec = CoupledPairSpec::new(8, 0.9, 31).unwrap();
        let (forget, retain) = make_coupled_pair(&spec).unwrap();
        let pair = ObjectivePair { forget: &forget, retain: &retain };
        let c = cfg(0.3, 0.05);
        let schedule = BetaSchedule::Fixed { value: 0.2 };
        let step = rosu_step(&pair, &spec.anchor, &c, &schedule, 0).unwrap();
        assert_eq!(step.branch, StepBranch::Full);
        // bitwise decomposition: new = (w + βδ) − ηv
        let recomposed = spec
            .anchor
            .add(step.amplification.as_ref().unwrap())
            .axpy(-c.eta, step.transported.as_ref().unwrap());
        assert_eq!(step.new_params, recomposed);

        // parallel-gradient quadratic falls back to retain descent
        let a = Matrix::identity(4);
        let q1 = QuadraticObjective::new(a.clone(), Vector::zeros(4), 0.0).unwrap();
        let q2 = QuadraticObjective::new(a, Vector::zeros(4), 0.0).unwrap();
        let pair = ObjectivePair { forget: &q1, retain: &q2 };
        let w = Vector::new(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let step = rosu_step(&pair, &w, &c, &schedule, 0).unwrap();
        assert_eq!(step.branch, StepBranch::Fallback);
        let g_r = q2.grad(&w).unwrap();
        assert_eq!(step.new_params, w.axpy(-c.eta, &g_r));
    }

    #[test]
    fn zero_order_shares_amplification_and_drops_correction() {
        let spec = CoupledPairSpec::new(8, 0.5, 3).unwrap();
        let (forget, retain) = make_coupled_pair(&spec).unwrap();
        let pair = ObjectivePair { forget: &forget, retain: &retain };
        let c = cfg(0.3, 0.05);
        let schedule = BetaSchedule::Fixed { value: 0.1 };
        let full = rosu_step(&pair, &spec.anchor, &c, &schedule, 0).unwrap();
        let zero = zero_order_step(&pair, &spec.anchor, &c, &schedule, 0).unwrap();
        assert_eq!(full.amplification, zero.amplification);
        assert_eq!(
            zero.transported.as_ref().unwrap(),
            zero.surrogate_grad.as_ref().unwrap()
        );
        // descent directions differ by the alpha-scaled correction
        assert!(full
            .transported
            .as_ref()
            .unwrap()
            .sub(zero.transported.as_ref().unwrap())
            .norm()
            > 0.0);
    }

    #[test]
    fn zero_order_and_full_converge_as_rho_shrinks() {
        let spec = CoupledPairSpec::new(8, 0.5, 13).unwrap();
        let (forget, retain) = make_coupled_pair(&spec).unwrap();
        let pair = ObjectivePair { forget: &forget, retain: &retain };
        let schedule = BetaSchedule::Fixed { value: 0.0 };
        let g_r = retain.grad(&spec.anchor).unwrap();
        let mut prev = f64::INFINITY;
        for &rho in &[1e-1, 1e-2, 1e-3] {
            let c = cfg(rho, 0.05);
            let full = rosu_step(&pair, &spec.anchor, &c, &schedule, 0).unwrap();
            let zero = zero_order_step(&pair, &spec.anchor, &c, &schedule, 0).unwrap();
            let gap = full
                .transported
                .as_ref()
                .unwrap()
                .sub(zero.transported.as_ref().unwrap())
                .norm();
            assert!(gap < prev);
            prev = gap;
            // both approach the base retain gradient
            assert!(
                zero.transported
                    .as_ref()
                    .unwrap()
                    .sub(&g_r)
                    .norm()
                    <= 10.0 * rho * (1.0 + g_r.norm())
            );
        }
    }

    #[test]
    fn representation_step_keeps_frozen_coordinates() {
        let net = MlpNetwork::new(vec![2, 4, 3]).unwrap();
        let w0 = net.init_params(5);
        let probes_f = vec![Vector::new(vec![0.2, 0.4]).unwrap()];
        let probes_r = vec![Vector::new(vec![-0.3, 0.1]).unwrap()];
        let trainable: Vec<usize> = (0..8).collect();
        let mut forget = RepresentationObjective::new(
            net.clone(),
            w0.clone(),
            trainable.clone(),
            1,
            0.01,
            probes_f,
        )
        .unwrap();
        let retain =
            RepresentationObjective::new(net, w0.clone(), trainable.clone(), 1, 0.0, probes_r)
                .unwrap();

        // start from a perturbed trainable vector so g_r != 0
        let mut theta = retain.extract(&w0).unwrap();
        for i in 0..theta.dim() {
            theta[i] += 0.2 * (i as f64 + 1.0);
        }
        let c = cfg(0.1, 0.05);
        let schedule = BetaSchedule::Fixed { value: 0.1 };
        let step =
            representation_rosu_step(&mut forget, &retain, &theta, &c, &schedule, 0, 99)
                .unwrap();
        // frozen coordinates unchanged bitwise
        for i in 8..w0.dim() {
            assert_eq!(step.new_params[i], w0[i]);
        }
        // trainable coordinates moved
        let moved = (0..8).any(|i| step.new_params[i] != forget.embed(&theta).unwrap()[i]);
        assert!(moved);
    }

    #[test]
    fn representation_step_at_reference_is_degenerate() {
        let net = MlpNetwork::new(vec![2, 4, 3]).unwrap();
        let w0 = net.init_params(5);
        let probes = vec![Vector::new(vec![0.2, 0.4]).unwrap()];
        let trainable: Vec<usize> = (0..8).collect();
        let mut forget = RepresentationObjective::new(
            net.clone(),
            w0.clone(),
            trainable.clone(),
            1,
            0.0,
            probes.clone(),
        )
        .unwrap();
        let retain =
            RepresentationObjective::new(net, w0.clone(), trainable, 1, 0.0, probes).unwrap();
        let theta = retain.extract(&w0).unwrap();
        let c = cfg(0.1, 0.05);
        let schedule = BetaSchedule::Fixed { value: 0.0 };
        let res = representation_rosu_step(&mut forget, &retain, &theta, &c, &schedule, 0, 1);
        assert!(matches!(res, Err(Error::DegenerateGradient(_))));
    }
}
