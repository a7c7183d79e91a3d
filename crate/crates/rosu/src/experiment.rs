//! Seeded toy unlearning experiments: coupled quadratics, 4-class Gaussian
//! blobs with class-wise or random forgetting, a representation-level
//! variant, method comparison, component ablations, and CSV/JSONL output.

use crate::error::{Error, Result};
use crate::inner::{
    rosu_perturbation, standard_perturbation, subspace_perturbation, Branch, PerturbationConfig,
    DEFAULT_EPS_Q, DEFAULT_TAU,
};
use crate::linalg::{cosine_coupling, orthonormalize, Rank1Projector, Vector, DEFAULT_DROP_TOL};
use crate::objectives::{
    blobs_dataset, fd_hvp, make_coupled_pair, CoupledPairSpec, MlpNetwork, MlpObjective,
    Objective, RepresentationObjective,
};
use crate::outer::{beta_at, relaxed_transported_gradient, BetaSchedule};
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    CoupledQuadratic,
    BlobsClasswise,
    BlobsRandom,
    Representation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Rosu,
    RosuZeroOrder,
    RosuSubspaceK,
    StandardMinMax,
    FineTune,
    NegGrad,
    OuterProjection,
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}
fn default_eps_q() -> f64 {
    DEFAULT_EPS_Q
}
fn default_dim() -> usize {
    16
}
fn default_target_cos() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub method: Method,
    pub rho: f64,
    pub eta: f64,
    pub beta_schedule: BetaSchedule,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_eps_q")]
    pub eps_q: f64,
    pub steps: usize,
    pub forget_batch: usize,
    pub retain_batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub subspace_k: usize,
    /// Quadratic-task instance size (ignored elsewhere).
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Quadratic-task gradient coupling at the anchor (ignored elsewhere).
    #[serde(default = "default_target_cos")]
    pub target_cos: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.forget_batch < 1 || self.retain_batch < 1 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.rho <= 0.0 || self.eta <= 0.0 || self.tau < 0.0 || self.eps_q <= 0.0 {
            return Err(Error::Config(
                "require rho > 0, eta > 0, tau >= 0, eps_q > 0".into(),
            ));
        }
        if self.method == Method::RosuSubspaceK && self.subspace_k < 1 {
            return Err(Error::Config(
                "RosuSubspaceK needs subspace_k >= 1".into(),
            ));
        }
        if self.task == Task::CoupledQuadratic {
            if self.dim < 2 {
                return Err(Error::Config("quadratic task needs dim >= 2".into()));
            }
            if self.target_cos.abs() >= 1.0 {
                return Err(Error::Config("target_cos must lie in (-1, 1)".into()));
            }
        }
        if self.task == Task::Representation && self.method != Method::Rosu {
            return Err(Error::Config(
                "the representation task supports method Rosu only".into(),
            ));
        }
        Ok(())
    }

    fn perturbation(&self) -> Result<PerturbationConfig> {
        let mut cfg = PerturbationConfig::new(self.rho, self.eta)?;
        cfg.tau = self.tau;
        cfg.eps_q = self.eps_q;
        Ok(cfg)
    }
}

/// One logged step. Accuracy fields are NaN outside the blobs tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub retain_loss: f64,
    pub forget_loss: f64,
    pub surrogate_retain_loss: f64,
    pub cos_coupling: f64,
    pub q_norm: f64,
    pub branch: String,
    pub retain_acc: f64,
    pub forget_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub final_summary: BTreeMap<String, f64>,
}

/// Fixed mini-batch view of a classification objective.
struct BatchView<'a> {
    obj: &'a MlpObjective,
    idx: Vec<usize>,
}

impl Objective for BatchView<'_> {
    fn dim(&self) -> usize {
        self.obj.dim()
    }
    fn loss(&self, w: &Vector) -> Result<f64> {
        self.obj.loss_batch(&self.idx, w)
    }
    fn grad(&self, w: &Vector) -> Result<Vector> {
        self.obj.grad_batch(&self.idx, w)
    }
    fn hvp(&self, w: &Vector, xi: &Vector) -> Result<Vector> {
        fd_hvp(self, w, xi)
    }
}

/// Which terms of the full update w + βδ − ηv are applied. `Full` and
/// `ZeroOrder` differ in the transported gradient; the two partial variants
/// drop one term each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UpdateVariant {
    Full,
    ZeroOrder,
    BetaDeltaOnly,
    EtaVOnly,
}

struct StepOutcome {
    new_w: Vector,
    delta: Option<Vector>,
    q_norm: f64,
    branch: String,
}

/// State threaded through a run (currently only the retain-gradient history
/// backing the protected subspace method).
#[derive(Default)]
struct MethodState {
    retain_history: VecDeque<Vector>,
}

#[allow(clippy::too_many_arguments)]
fn method_step(
    method: Method,
    variant: UpdateVariant,
    forget: &dyn Objective,
    retain: &dyn Objective,
    w: &Vector,
    cfg: &PerturbationConfig,
    schedule: &BetaSchedule,
    step_index: usize,
    state: &mut MethodState,
    subspace_k: usize,
) -> Result<StepOutcome> {
    let g_f = forget.grad(w)?;
    let g_r = retain.grad(w)?;
    let beta = beta_at(schedule, step_index, cfg.eta, cfg.rho);

    let rosu_like = |sol: crate::inner::InnerSolution| -> Result<StepOutcome> {
        if sol.branch == Branch::DegenerateFallback {
            return Ok(StepOutcome {
                new_w: w.axpy(-cfg.eta, &g_r),
                delta: None,
                q_norm: sol.q_norm,
                branch: sol.branch.to_string(),
            });
        }
        let delta = sol.delta()?.clone();
        let g_tilde = retain.grad(&w.add(&delta))?;
        let v = match (variant, sol.branch) {
            (UpdateVariant::Full | UpdateVariant::EtaVOnly, Branch::Rosu) => {
                relaxed_transported_gradient(&g_r, &sol, &g_tilde, cfg.tau)?
            }
            _ => g_tilde,
        };
        let new_w = match variant {
            UpdateVariant::BetaDeltaOnly => w.axpy(beta, &delta),
            UpdateVariant::EtaVOnly => w.axpy(-cfg.eta, &v),
            _ => w.axpy(beta, &delta).axpy(-cfg.eta, &v),
        };
        Ok(StepOutcome {
            new_w,
            delta: Some(delta),
            q_norm: sol.q_norm,
            branch: sol.branch.to_string(),
        })
    };

    match method {
        Method::Rosu | Method::RosuZeroOrder => {
            rosu_like(rosu_perturbation(&g_f, &g_r, cfg)?)
        }
        Method::RosuSubspaceK => {
            state.retain_history.push_back(g_r.clone());
            while state.retain_history.len() > subspace_k {
                state.retain_history.pop_front();
            }
            let raw: Vec<Vector> = state.retain_history.iter().cloned().collect();
            let basis = orthonormalize(&raw, DEFAULT_DROP_TOL)?;
            rosu_like(subspace_perturbation(&g_f, &basis, cfg)?)
        }
        Method::StandardMinMax => {
            let sol = standard_perturbation(&g_f, cfg)?;
            let delta = sol.delta()?.clone();
            let g_tilde = retain.grad(&w.add(&delta))?;
            Ok(StepOutcome {
                new_w: w.axpy(-cfg.eta, &g_tilde),
                delta: Some(delta),
                q_norm: sol.q_norm,
                branch: sol.branch.to_string(),
            })
        }
        Method::FineTune => Ok(StepOutcome {
            new_w: w.axpy(-cfg.eta, &g_r),
            delta: None,
            q_norm: 0.0,
            branch: "FineTune".into(),
        }),
        Method::NegGrad => Ok(StepOutcome {
            new_w: w.axpy(cfg.eta, &g_f),
            delta: None,
            q_norm: 0.0,
            branch: "NegGrad".into(),
        }),
        Method::OuterProjection => {
            // retain descent plus a forget-ascent direction orthogonalized
            // against the retain gradient at the outer level
            let ascent = if g_r.norm() > 0.0 {
                Rank1Projector::new(g_r.clone(), 0.0)?.project_out(&g_f)?
            } else {
                g_f.clone()
            };
            Ok(StepOutcome {
                new_w: w.axpy(-cfg.eta, &g_r).axpy(cfg.eta, &ascent),
                delta: None,
                q_norm: ascent.norm(),
                branch: "OuterProjection".into(),
            })
        }
    }
}

fn metrics_row(
    step: usize,
    forget_full: &dyn Objective,
    retain_full: &dyn Objective,
    w: &Vector,
    g_f: &Vector,
    g_r: &Vector,
    outcome: &StepOutcome,
    accs: Option<(f64, f64, f64)>,
) -> Result<MetricsRow> {
    let surrogate = match &outcome.delta {
        Some(delta) => retain_full.loss(&w.add(delta))?,
        None => retain_full.loss(w)?,
    };
    let cos = if g_f.norm() > 0.0 && g_r.norm() > 0.0 {
        cosine_coupling(g_f, g_r)?
    } else {
        0.0
    };
    let (retain_acc, forget_acc, test_acc) = accs.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    Ok(MetricsRow {
        step,
        retain_loss: retain_full.loss(w)?,
        forget_loss: forget_full.loss(w)?,
        surrogate_retain_loss: surrogate,
        cos_coupling: cos,
        q_norm: outcome.q_norm,
        branch: outcome.branch.clone(),
        retain_acc,
        forget_acc,
        test_acc,
    })
}

fn run_quadratic(config: &ExperimentConfig, variant: UpdateVariant) -> Result<RunRecord> {
    let spec = CoupledPairSpec::new(config.dim, config.target_cos, config.seed)?;
    let (forget, retain) = make_coupled_pair(&spec)?;
    let cfg = config.perturbation()?;
    let mut w = spec.anchor.clone();
    let mut state = MethodState::default();
    let mut rows = Vec::with_capacity(config.steps + 1);

    for t in 0..=config.steps {
        let g_f = forget.grad(&w)?;
        let g_r = retain.grad(&w)?;
        let outcome = method_step(
            config.method,
            variant,
            &forget,
            &retain,
            &w,
            &cfg,
            &config.beta_schedule,
            t,
            &mut state,
            config.subspace_k,
        )?;
        rows.push(metrics_row(t, &forget, &retain, &w, &g_f, &g_r, &outcome, None)?);
        if t < config.steps {
            w = outcome.new_w;
        }
    }

    let mut summary = BTreeMap::new();
    let last = rows.last().expect("nonempty");
    summary.insert("final_retain_loss".into(), last.retain_loss);
    summary.insert("final_forget_loss".into(), last.forget_loss);
    summary.insert(
        "mean_surrogate_retain_loss".into(),
        rows.iter().map(|r| r.surrogate_retain_loss).sum::<f64>() / rows.len() as f64,
    );
    Ok(RunRecord { config: config.clone(), rows, final_summary: summary })
}

struct BlobsEnv {
    forget: MlpObjective,
    retain: MlpObjective,
    test: MlpObjective,
    w0: Vector,
    /// (retain, forget, test) accuracies of the retrained-from-scratch
    /// reference, which sees only the retain split.
    reference: (f64, f64, f64),
}

const PRETRAIN_STEPS: usize = 400;
const PRETRAIN_LR: f64 = 0.5;

fn train_full_batch(obj: &MlpObjective, mut w: Vector, steps: usize, lr: f64) -> Result<Vector> {
    let all: Vec<usize> = (0..obj.len()).collect();
    for _ in 0..steps {
        let g = obj.grad_batch(&all, &w)?;
        w = w.axpy(-lr, &g);
    }
    Ok(w)
}

fn blobs_env(config: &ExperimentConfig) -> Result<BlobsEnv> {
    let seed = config.seed;
    let data = blobs_dataset(seed, 4, 128, 0.8);
    let test_data = blobs_dataset(seed ^ 0x9999, 4, 64, 0.8);
    let net = MlpNetwork::new(vec![2, 16, 4])?;

    let forget_idx: Vec<usize> = match config.task {
        Task::BlobsClasswise | Task::Representation => {
            (0..data.len()).filter(|&i| data[i].1 == 0).collect()
        }
        Task::BlobsRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let mut idx = index_sample(&mut rng, data.len(), data.len() / 10).into_vec();
            idx.sort_unstable();
            idx
        }
        Task::CoupledQuadratic => return Err(Error::Config("not a blobs task".into())),
    };
    let forget_set: std::collections::BTreeSet<usize> = forget_idx.iter().copied().collect();
    let forget_data: Vec<_> = forget_idx.iter().map(|&i| data[i].clone()).collect();
    let retain_data: Vec<_> = (0..data.len())
        .filter(|i| !forget_set.contains(i))
        .map(|i| data[i].clone())
        .collect();

    let full = MlpObjective::new(net.clone(), data)?;
    let w0 = train_full_batch(&full, net.init_params(seed), PRETRAIN_STEPS, PRETRAIN_LR)?;

    let forget = MlpObjective::new(net.clone(), forget_data)?;
    let retain = MlpObjective::new(net.clone(), retain_data)?;
    let test = MlpObjective::new(net.clone(), test_data)?;

    // retrain reference: same architecture, seed, and budget, retain only
    let w_ref = train_full_batch(&retain, net.init_params(seed), PRETRAIN_STEPS, PRETRAIN_LR)?;
    let reference = (retain.accuracy(&w_ref), forget.accuracy(&w_ref), test.accuracy(&w_ref));

    Ok(BlobsEnv { forget, retain, test, w0, reference })
}

fn sample_batch(rng: &mut ChaCha8Rng, len: usize, batch: usize) -> Vec<usize> {
    index_sample(rng, len, batch.min(len)).into_vec()
}

fn run_blobs(config: &ExperimentConfig, variant: UpdateVariant) -> Result<RunRecord> {
    let env = blobs_env(config)?;
    let cfg = config.perturbation()?;
    let mut w = env.w0.clone();
    let mut state = MethodState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xbac0de);
    let mut rows = Vec::with_capacity(config.steps + 1);

    for t in 0..=config.steps {
        let f_view = BatchView {
            obj: &env.forget,
            idx: sample_batch(&mut rng, env.forget.len(), config.forget_batch),
        };
        let r_view = BatchView {
            obj: &env.retain,
            idx: sample_batch(&mut rng, env.retain.len(), config.retain_batch),
        };
        let g_f = f_view.grad(&w)?;
        let g_r = r_view.grad(&w)?;
        let outcome = method_step(
            config.method,
            variant,
            &f_view,
            &r_view,
            &w,
            &cfg,
            &config.beta_schedule,
            t,
            &mut state,
            config.subspace_k,
        )?;
        let accs = (
            env.retain.accuracy(&w),
            env.forget.accuracy(&w),
            env.test.accuracy(&w),
        );
        rows.push(metrics_row(
            t,
            &env.forget,
            &env.retain,
            &w,
            &g_f,
            &g_r,
            &outcome,
            Some(accs),
        )?);
        if t < config.steps {
            w = outcome.new_w;
        }
    }

    let last = rows.last().expect("nonempty");
    let (ra_ref, fa_ref, ta_ref) = env.reference;
    let delta_acc = (ra_ref - last.retain_acc).abs()
        + (fa_ref - last.forget_acc).abs()
        + (ta_ref - last.test_acc).abs();
    let mut summary = BTreeMap::new();
    summary.insert("final_retain_loss".into(), last.retain_loss);
    summary.insert("final_forget_loss".into(), last.forget_loss);
    summary.insert("retain_acc".into(), last.retain_acc);
    summary.insert("forget_acc".into(), last.forget_acc);
    summary.insert("test_acc".into(), last.test_acc);
    summary.insert("retain_acc_ref".into(), ra_ref);
    summary.insert("forget_acc_ref".into(), fa_ref);
    summary.insert("test_acc_ref".into(), ta_ref);
    summary.insert("delta_acc_toy".into(), delta_acc);
    summary.insert("pre_forget_acc".into(), rows[0].forget_acc);
    summary.insert("pre_retain_acc".into(), rows[0].retain_acc);
    Ok(RunRecord { config: config.clone(), rows, final_summary: summary })
}

fn run_representation(config: &ExperimentConfig) -> Result<RunRecord> {
    let env = blobs_env(config)?;
    let net = env.forget.network().clone();
    // restrict updates to the first weight layer; probe on its activations
    let first_layer_params = (net.layer_sizes()[0] + 1) * net.layer_sizes()[1];
    let trainable: Vec<usize> = (0..first_layer_params).collect();
    let probe = |obj: &MlpObjective, cap: usize| -> Vec<Vector> {
        obj.dataset().iter().take(cap).map(|(x, _)| x.clone()).collect()
    };
    let mut forget_rep = RepresentationObjective::new(
        net.clone(),
        env.w0.clone(),
        trainable.clone(),
        1,
        0.01,
        probe(&env.forget, 32),
    )?;
    let retain_rep = RepresentationObjective::new(
        net,
        env.w0.clone(),
        trainable,
        1,
        0.0,
        probe(&env.retain, 32),
    )?;

    let cfg = config.perturbation()?;
    // start slightly off the frozen reference: exactly at it the retain
    // representation loss is stationary and the geometry is undefined
    let mut theta = retain_rep.extract(&env.w0)?;
    {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7177);
        let normal = rand_distr::Normal::new(0.0, 0.02).expect("std");
        use rand_distr::Distribution;
        for i in 0..theta.dim() {
            theta[i] += normal.sample(&mut rng);
        }
    }
    let mut rows = Vec::with_capacity(config.steps + 1);
    for t in 0..=config.steps {
        let w = retain_rep.embed(&theta)?;
        let step = crate::outer::representation_rosu_step(
            &mut forget_rep,
            &retain_rep,
            &theta,
            &cfg,
            &config.beta_schedule,
            t,
            config.seed.wrapping_add(t as u64),
        )?;
        let surrogate = match &step.delta {
            Some(delta) => retain_rep.loss(&w.add(delta))?,
            None => retain_rep.loss(&w)?,
        };
        let g_f = forget_rep.grad(&w)?;
        let g_r = retain_rep.grad(&w)?;
        rows.push(MetricsRow {
            step: t,
            retain_loss: retain_rep.loss(&w)?,
            forget_loss: forget_rep.loss(&w)?,
            surrogate_retain_loss: surrogate,
            cos_coupling: if g_f.norm() > 0.0 && g_r.norm() > 0.0 {
                cosine_coupling(&g_f, &g_r)?
            } else {
                0.0
            },
            q_norm: step.q_norm,
            branch: format!("{:?}", step.branch),
            retain_acc: f64::NAN,
            forget_acc: f64::NAN,
            test_acc: f64::NAN,
        });
        if t < config.steps {
            theta = retain_rep.extract(&step.new_params)?;
        }
    }

    let last = rows.last().expect("nonempty");
    let mut summary = BTreeMap::new();
    summary.insert("final_retain_loss".into(), last.retain_loss);
    summary.insert("final_forget_loss".into(), last.forget_loss);
    Ok(RunRecord { config: config.clone(), rows, final_summary: summary })
}

fn run_variant(config: &ExperimentConfig, variant: UpdateVariant) -> Result<RunRecord> {
    config.validate()?;
    match config.task {
        Task::CoupledQuadratic => run_quadratic(config, variant),
        Task::BlobsClasswise | Task::BlobsRandom => run_blobs(config, variant),
        Task::Representation => run_representation(config),
    }
}

/// Runs one experiment: pretrain (blobs) or anchor-start (quadratics), then
/// `steps` method updates with a row logged per step plus the initial state.
pub fn run(config: &ExperimentConfig) -> Result<RunRecord> {
    let variant = if config.method == Method::RosuZeroOrder {
        UpdateVariant::ZeroOrder
    } else {
        UpdateVariant::Full
    };
    run_variant(config, variant)
}

/// Four-way component ablation sharing seed and data: full update,
/// zero-order transport, βδ-only (no descent term), ηv-only (β = 0).
/// `ablation_variant` in each summary gives the position in that order.
pub fn run_ablation_suite(base: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    base.validate()?;
    let variants = [
        (Method::Rosu, UpdateVariant::Full),
        (Method::RosuZeroOrder, UpdateVariant::ZeroOrder),
        (Method::Rosu, UpdateVariant::BetaDeltaOnly),
        (Method::Rosu, UpdateVariant::EtaVOnly),
    ];
    let mut records = Vec::with_capacity(4);
    for (i, (method, variant)) in variants.iter().enumerate() {
        let mut config = base.clone();
        config.method = *method;
        let mut rec = run_variant(&config, *variant)?;
        rec.final_summary.insert("ablation_variant".into(), i as f64);
        records.push(rec);
    }
    Ok(records)
}

/// Per-step gradient coupling cos θ(w) for a blobs forgetting protocol.
pub fn coupling_diagnosis(config: &ExperimentConfig) -> Result<Vec<f64>> {
    if !matches!(config.task, Task::BlobsClasswise | Task::BlobsRandom) {
        return Err(Error::Config("coupling diagnosis needs a blobs task".into()));
    }
    Ok(run(config)?.rows.iter().map(|r| r.cos_coupling).collect())
}

/// 17 significant digits: round-trip exact for 64-bit floats.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub const METRICS_CSV_HEADER: &str = "step,retain_loss,forget_loss,surrogate_retain_loss,\
cos_coupling,q_norm,branch,retain_acc,forget_acc,test_acc";

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            fmt_f64(r.retain_loss),
            fmt_f64(r.forget_loss),
            fmt_f64(r.surrogate_retain_loss),
            fmt_f64(r.cos_coupling),
            fmt_f64(r.q_norm),
            r.branch,
            fmt_f64(r.retain_acc),
            fmt_f64(r.forget_acc),
            fmt_f64(r.test_acc),
        )?;
    }
    Ok(())
}

pub fn write_metrics_jsonl<W: Write>(rows: &[MetricsRow], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
