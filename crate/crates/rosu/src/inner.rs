//! Inner perturbations: the standard forget-ascent direction, the closed-form
//! retain-orthogonal solution, its rank-k subspace generalization, amplified
//! displacements, and a sphere-sampling oracle certifying optimality.

use crate::error::{Error, Result};
use crate::linalg::{OrthonormalBasis, Rank1Projector, Vector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const DEFAULT_TAU: f64 = 1e-8;
pub const DEFAULT_EPS_Q: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationConfig {
    /// Perturbation radius ρ.
    pub rho: f64,
    /// Denominator stabilizer τ.
    pub tau: f64,
    /// Degeneracy threshold ε_q on the projected component norm.
    pub eps_q: f64,
    /// Amplification coefficient β (when not scheduled).
    pub beta: f64,
    /// Outer learning rate η.
    pub eta: f64,
}

impl PerturbationConfig {
    pub fn new(rho: f64, eta: f64) -> Result<Self> {
        let cfg = PerturbationConfig {
            rho,
            tau: DEFAULT_TAU,
            eps_q: DEFAULT_EPS_Q,
            beta: 0.0,
            eta,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rho <= 0.0
            || self.eps_q <= 0.0
            || self.tau < 0.0
            || self.beta < 0.0
            || self.eta <= 0.0
        {
            return Err(Error::Config(
                "require rho > 0, eps_q > 0, tau >= 0, beta >= 0, eta > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Rosu,
    DegenerateFallback,
    Standard,
    Subspace,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Branch::Rosu => "Rosu",
            Branch::DegenerateFallback => "DegenerateFallback",
            Branch::Standard => "Standard",
            Branch::Subspace => "Subspace",
        };
        f.write_str(s)
    }
}

/// Result of an inner maximization. On the fallback branch `delta` is absent
/// and the outer layer decides the descent step.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub branch: Branch,
    pub delta: Option<Vector>,
    /// ‖q_τ‖ (or ‖q_U‖ on the subspace branch; ‖g_f‖ on the standard branch).
    pub q_norm: f64,
    /// α_τ = ρ/‖q_τ‖ on the Rosu/Subspace branches.
    pub alpha: Option<f64>,
    /// Unit direction u_τ (or u_⊥).
    pub unit_dir: Option<Vector>,
}

impl InnerSolution {
    pub fn delta(&self) -> Result<&Vector> {
        self.delta
            .as_ref()
            .ok_or(Error::InvalidBranch("DegenerateFallback"))
    }
}

/// δ_std = ρ g_f / ‖g_f‖.
pub fn standard_perturbation(g_f: &Vector, cfg: &PerturbationConfig) -> Result<InnerSolution> {
    cfg.validate()?;
    let n = g_f.norm();
    if n == 0.0 {
        return Err(Error::DegenerateGradient("zero forget gradient"));
    }
    let unit = g_f.scale(1.0 / n);
    Ok(InnerSolution {
        branch: Branch::Standard,
        delta: Some(unit.scale(cfg.rho)),
        q_norm: n,
        alpha: None,
        unit_dir: Some(unit),
    })
}

/// Closed-form retain-orthogonal perturbation with the regularized projector
/// and the degenerate fallback branch.
pub fn rosu_perturbation(
    g_f: &Vector,
    g_r: &Vector,
    cfg: &PerturbationConfig,
) -> Result<InnerSolution> {
    cfg.validate()?;
    if g_r.norm() == 0.0 {
        return Err(Error::DegenerateGradient(
            "zero retain gradient: retain-neutrality undefined",
        ));
    }
    let projector = Rank1Projector::new(g_r.clone(), cfg.tau)?;
    let q_tau = projector.project_out(g_f)?;
    let q_norm = q_tau.norm();
    if q_norm <= cfg.eps_q {
        return Ok(InnerSolution {
            branch: Branch::DegenerateFallback,
            delta: None,
            q_norm,
            alpha: None,
            unit_dir: None,
        });
    }
    let unit = q_tau.scale(1.0 / q_norm);
    Ok(InnerSolution {
        branch: Branch::Rosu,
        delta: Some(unit.scale(cfg.rho)),
        q_norm,
        alpha: Some(cfg.rho / q_norm),
        unit_dir: Some(unit),
    })
}

/// Rank-k protected-subspace perturbation δ_U = ρ q_U / ‖q_U‖.
pub fn subspace_perturbation(
    g_f: &Vector,
    basis: &OrthonormalBasis,
    cfg: &PerturbationConfig,
) -> Result<InnerSolution> {
    cfg.validate()?;
    let q_u = basis.project_out(g_f)?;
    let q_norm = q_u.norm();
    if q_norm <= cfg.eps_q {
        return Ok(InnerSolution {
            branch: Branch::DegenerateFallback,
            delta: None,
            q_norm,
            alpha: None,
            unit_dir: None,
        });
    }
    let unit = q_u.scale(1.0 / q_norm);
    Ok(InnerSolution {
        branch: Branch::Subspace,
        delta: Some(unit.scale(cfg.rho)),
        q_norm,
        alpha: Some(cfg.rho / q_norm),
        unit_dir: Some(unit),
    })
}

/// β·δ along the same retain-neutral direction.
pub fn amplified_displacement(sol: &InnerSolution, cfg: &PerturbationConfig) -> Result<Vector> {
    match sol.branch {
        Branch::Rosu | Branch::Subspace => Ok(sol.delta()?.scale(cfg.beta)),
        Branch::Standard => Err(Error::InvalidBranch("Standard")),
        Branch::DegenerateFallback => Err(Error::InvalidBranch("DegenerateFallback")),
    }
}

/// Samples directions uniformly on the unit sphere, projects each onto the
/// exact retain-neutral hyperplane, rescales to radius ρ, and scores the
/// first-order forget gain. Also scores the closed-form candidate; returns
/// the overall best together with the best sampled value.
pub struct OracleOutcome {
    pub best_value: f64,
    pub best_delta: Vector,
    /// Best value among the sampled candidates only.
    pub best_sampled: f64,
}

pub fn brute_force_inner_oracle(
    g_f: &Vector,
    g_r: &Vector,
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> Result<OracleOutcome> {
    if g_r.norm() == 0.0 {
        return Err(Error::DegenerateGradient("zero retain gradient"));
    }
    if n_samples < 1000 {
        return Err(Error::Config("oracle needs at least 1000 samples".into()));
    }
    let dim = g_f.dim();
    let projector = Rank1Projector::new(g_r.clone(), 0.0)?;
    let q = projector.project_out(g_f)?;
    let q_norm = q.norm();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let mut best_sampled = f64::NEG_INFINITY;
    let mut best_sampled_delta: Option<Vector> = None;
    let ghat = g_r.normalized();
    let ghat = ghat.as_slice();
    let gf = g_f.as_slice();
    let mut buf = vec![0.0f64; dim];
    for _ in 0..n_samples {
        for v in buf.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        let xn: f64 = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Project twice: a single pass leaves a rounding-level component
        // along g_r (about eps * ||x|| / ||p||) which, for samples nearly
        // parallel to g_r, is enough to spuriously beat the closed form.
        for _ in 0..2 {
            let a: f64 = buf.iter().zip(ghat).map(|(v, g)| v * g).sum();
            for (v, g) in buf.iter_mut().zip(ghat) {
                *v -= a * g;
            }
        }
        let pn: f64 = buf.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pn < 1e-9 * xn {
            continue;
        }
        let value = rho * buf.iter().zip(gf).map(|(v, g)| v * g).sum::<f64>() / pn;
        if value > best_sampled {
            best_sampled = value;
            best_sampled_delta =
                Some(Vector::from_raw(buf.iter().map(|v| v * rho / pn).collect()));
        }
    }

    // closed-form candidate
    let (best_value, best_delta) = if q_norm > 0.0 {
        let closed_value = rho * q_norm;
        let closed_delta = q.scale(rho / q_norm);
        if closed_value >= best_sampled {
            (closed_value, closed_delta)
        } else {
            (best_sampled, best_sampled_delta.unwrap())
        }
    } else {
        (best_sampled, best_sampled_delta.unwrap_or(Vector::zeros(dim)))
    };

    Ok(OracleOutcome {
        best_value,
        best_delta,
        best_sampled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::Rng;

    fn cfg(rho: f64) -> PerturbationConfig {
        PerturbationConfig::new(rho, 0.1).unwrap()
    }

    fn randv(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
        Vector::from_raw((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn standard_perturbation_examples() {
        let g = Vector::new(vec![3.0, 4.0]).unwrap();
        let sol = standard_perturbation(&g, &cfg(1.0)).unwrap();
        let d = sol.delta().unwrap();
        assert!((d[0] - 0.6).abs() < 1e-15 && (d[1] - 0.8).abs() < 1e-15);
        // first-order forget gain is exactly rho * ||g_f||
        assert!((dot(&g, d).unwrap() - 5.0).abs() < 1e-12);

        let u = Vector::new(vec![0.0, 1.0]).unwrap();
        let sol = standard_perturbation(&u, &cfg(2.0)).unwrap();
        assert_eq!(sol.delta().unwrap().as_slice(), &[0.0, 2.0]);

        assert!(standard_perturbation(&Vector::zeros(2), &cfg(1.0)).is_err());
    }

    #[test]
    fn rosu_perturbation_coordinate_case() {
        let g_f = Vector::new(vec![1.0, 1.0]).unwrap();
        let g_r = Vector::new(vec![1.0, 0.0]).unwrap();
        let mut c = cfg(1.0);
        c.tau = 0.0;
        let sol = rosu_perturbation(&g_f, &g_r, &c).unwrap();
        assert_eq!(sol.branch, Branch::Rosu);
        let d = sol.delta().unwrap();
        assert!((d[0]).abs() < 1e-15 && (d[1] - 1.0).abs() < 1e-15);
        assert!((sol.q_norm - 1.0).abs() < 1e-15);
        assert!((sol.alpha.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rosu_parallel_gradients_fall_back() {
        let g_f = Vector::new(vec![2.0, 0.0]).unwrap();
        let g_r = Vector::new(vec![1.0, 0.0]).unwrap();
        let mut c = cfg(1.0);
        c.tau = 0.0;
        let sol = rosu_perturbation(&g_f, &g_r, &c).unwrap();
        assert_eq!(sol.branch, Branch::DegenerateFallback);
        assert!(sol.delta.is_none());
    }

    #[test]
    fn rosu_zero_retain_gradient_errors() {
        let g_f = Vector::new(vec![1.0, 0.0]).unwrap();
        assert!(rosu_perturbation(&g_f, &Vector::zeros(2), &cfg(1.0)).is_err());
    }

    #[test]
    fn rosu_forget_gain_identity_and_neutrality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let dim = rng.gen_range(2..64);
            let g_f = randv(&mut rng, dim);
            let g_r = randv(&mut rng, dim);
            if g_r.norm() < 1e-3 {
                continue;
            }
            let mut c = cfg(0.7);
            c.tau = 0.0;
            let sol = rosu_perturbation(&g_f, &g_r, &c).unwrap();
            if sol.branch != Branch::Rosu {
                continue;
            }
            let d = sol.delta().unwrap();
            // norm budget exhausted
            assert!((d.norm() - 0.7).abs() <= 1e-10 * 0.7);
            // g_f·δ = ρ‖q‖
            let gain = dot(&g_f, d).unwrap();
            assert!((gain - 0.7 * sol.q_norm).abs() <= 1e-9 * gain.abs().max(1e-12));
            // retain-neutral at τ = 0
            assert!(dot(&g_r, d).unwrap().abs() <= 1e-10 * g_r.norm() * 0.7);
        }
    }

    #[test]
    fn subspace_reduces_to_rank1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let dim = rng.gen_range(3..32);
            let g_f = randv(&mut rng, dim);
            let g_r = randv(&mut rng, dim);
            if g_r.norm() < 1e-3 {
                continue;
            }
            let mut c = cfg(1.0);
            c.tau = 0.0;
            let basis =
                crate::linalg::orthonormalize(std::slice::from_ref(&g_r), crate::linalg::DEFAULT_DROP_TOL)
                    .unwrap();
            let a = rosu_perturbation(&g_f, &g_r, &c).unwrap();
            let b = subspace_perturbation(&g_f, &basis, &c).unwrap();
            if a.branch == Branch::DegenerateFallback {
                assert_eq!(b.branch, Branch::DegenerateFallback);
                continue;
            }
            let gap = a.delta().unwrap().sub(b.delta().unwrap()).norm();
            assert!(gap <= 1e-12, "gap {gap}");
        }
    }

    #[test]
    fn subspace_spanning_gf_falls_back() {
        let g_f = Vector::new(vec![1.0, 2.0, 0.0]).unwrap();
        let basis = crate::linalg::orthonormalize(
            &[Vector::basis(3, 0), Vector::basis(3, 1)],
            crate::linalg::DEFAULT_DROP_TOL,
        )
        .unwrap();
        let sol = subspace_perturbation(&g_f, &basis, &cfg(1.0)).unwrap();
        assert_eq!(sol.branch, Branch::DegenerateFallback);
    }

    #[test]
    fn amplified_displacement_examples() {
        let g_f = Vector::new(vec![1.0, 1.0]).unwrap();
        let g_r = Vector::new(vec![1.0, 0.0]).unwrap();
        let mut c = cfg(1.0);
        c.tau = 0.0;
        let sol = rosu_perturbation(&g_f, &g_r, &c).unwrap();

        c.beta = 0.0;
        assert_eq!(amplified_displacement(&sol, &c).unwrap().norm(), 0.0);
        c.beta = 2.0;
        let amp = amplified_displacement(&sol, &c).unwrap();
        assert!((amp[1] - 2.0).abs() < 1e-12);
        // forget gain scales with beta: g_f·(βδ) = β ρ ‖q‖
        let gain = dot(&g_f, &amp).unwrap();
        assert!((gain - 2.0 * 1.0 * sol.q_norm).abs() <= 1e-9 * gain.abs());

        let std_sol = standard_perturbation(&g_f, &c).unwrap();
        assert!(amplified_displacement(&std_sol, &c).is_err());
    }

    #[test]
    fn oracle_two_dimensional_exact() {
        let g_f = Vector::new(vec![1.0, 1.0]).unwrap();
        let g_r = Vector::new(vec![1.0, 0.0]).unwrap();
        let out = brute_force_inner_oracle(&g_f, &g_r, 1.0, 1000, 7).unwrap();
        // the 2-D feasible set is two points; sampled best equals closed form
        assert!((out.best_sampled - 1.0).abs() <= 1e-12);
        assert!((out.best_value - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn oracle_orthogonal_gradients_unconstrained_optimum() {
        let g_f = Vector::new(vec![0.0, 3.0, 0.0]).unwrap();
        let g_r = Vector::new(vec![1.0, 0.0, 0.0]).unwrap();
        let out = brute_force_inner_oracle(&g_f, &g_r, 2.0, 2000, 3).unwrap();
        assert!((out.best_value - 2.0 * 3.0).abs() <= 1e-12);
    }

    #[test]
    fn oracle_never_beats_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..50 {
            let dim = rng.gen_range(3..16);
            let g_f = randv(&mut rng, dim);
            let g_r = randv(&mut rng, dim);
            if g_r.norm() < 1e-3 {
                continue;
            }
            let out = brute_force_inner_oracle(&g_f, &g_r, 1.0, 5000, trial).unwrap();
            let q = Rank1Projector::new(g_r, 0.0)
                .unwrap()
                .project_out(&g_f)
                .unwrap();
            let closed = q.norm();
            assert!(out.best_sampled <= closed + 1e-9 * closed.max(1.0));
        }
    }

    #[test]
    fn uniqueness_probe_tangent_moves_decrease_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut checked = 0;
        while checked < 50 {
            let dim = rng.gen_range(3..32);
            let g_f = randv(&mut rng, dim);
            let g_r = randv(&mut rng, dim);
            if g_r.norm() < 1e-2 {
                continue;
            }
            let mut c = cfg(1.0);
            c.tau = 0.0;
            let sol = rosu_perturbation(&g_f, &g_r, &c).unwrap();
            if sol.branch != Branch::Rosu || sol.q_norm < 1e-2 {
                continue;
            }
            let delta = sol.delta().unwrap().clone();
            let gain = dot(&g_f, &delta).unwrap();
            let proj = Rank1Projector::new(g_r.clone(), 0.0).unwrap();
            // feasible tangent: orthogonal to both g_r and delta
            let mut t = proj.project_out(&randv(&mut rng, dim)).unwrap();
            let dhat = delta.scale(1.0 / delta.norm());
            t = t.axpy(-dot(&t, &dhat).unwrap(), &dhat);
            if t.norm() < 1e-6 {
                continue;
            }
            let t = t.scale(1e-3 / t.norm());
            let perturbed = delta.add(&t);
            let renormalized = perturbed.scale(1.0 / perturbed.norm());
            let new_gain = dot(&g_f, &renormalized).unwrap();
            assert!(new_gain < gain, "tangent move did not decrease gain");
            checked += 1;
        }
    }
}
