//! Joint refinement of rails, uv strands, tangents and widths with Adam.

use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::{total_loss, LossBreakdown, LossError, LossWeights, MatchNorm, MeshSdf};
use crate::math::{Vec2, Vec3};
use crate::model::{CardModel, ModelGrads};
use crate::softrender::{ChannelImages, ViewCamera};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite loss or gradient at epoch {epoch}, step {step}: {detail}")]
    NonFinite { epoch: usize, step: usize, detail: String },
    #[error("checkpoint does not match the model layout")]
    CheckpointMismatch,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub views_per_step: usize,
    /// Step size for uv, tangents and widths.
    pub lr: f64,
    /// Step size for rail points, in units of the bounding radius.
    pub rail_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Lower bound on strand widths, in units of the bounding radius.
    pub min_width: f64,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            views_per_step: 4,
            lr: 1e-3,
            rail_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            min_width: 1e-5,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

/// Flattened parameters with Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    /// Number of leading entries that are rail coordinates.
    pub rail_len: usize,
}

/// Parameters in the order used by [`ModelGrads::flatten`].
pub fn flatten_params(model: &CardModel) -> (Vec<f64>, usize) {
    let mut out = Vec::new();
    for c in &model.cards {
        for v in &c.geometry.vertices {
            out.extend(v.iter());
        }
    }
    let rail_len = out.len();
    for t in &model.textures {
        for s in &t.strands {
            for uv in &s.uv {
                out.extend(uv.iter());
            }
        }
    }
    for t in &model.textures {
        for s in &t.strands {
            for tg in &s.tangents {
                out.extend(tg.iter());
            }
        }
    }
    for t in &model.textures {
        for s in &t.strands {
            out.push(s.width);
        }
    }
    (out, rail_len)
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params(model: &mut CardModel, params: &[f64]) {
    let mut it = params.iter().copied();
    let mut next = || it.next().expect("parameter vector too short");
    for c in &mut model.cards {
        for v in &mut c.geometry.vertices {
            *v = Vec3::new(next(), next(), next());
        }
    }
    for t in &mut model.textures {
        for s in &mut t.strands {
            for uv in &mut s.uv {
                *uv = Vec2::new(next(), next());
            }
        }
    }
    for t in &mut model.textures {
        for s in &mut t.strands {
            for tg in &mut s.tangents {
                *tg = Vec3::new(next(), next(), next());
            }
        }
    }
    for t in &mut model.textures {
        for s in &mut t.strands {
            s.width = next();
        }
    }
}

impl OptimState {
    pub fn new(model: &CardModel) -> Self {
        let (params, rail_len) = flatten_params(model);
        let n = params.len();
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            rail_len,
        }
    }

    fn adam_step(&mut self, grads: &[f64], cfg: &OptimConfig, rail_lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            let lr = if i < self.rail_len { rail_lr } else { cfg.lr };
            self.params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

/// Re-imposes the box, unit-length and positivity constraints.
pub fn project_constraints(model: &mut CardModel, min_width: f64) {
    for t in &mut model.textures {
        for s in &mut t.strands {
            for uv in &mut s.uv {
                *uv = crate::texspace::clamp_uv(*uv);
            }
            for j in 0..s.tangents.len() {
                let n = s.tangents[j].norm();
                if n > 1e-12 {
                    s.tangents[j] /= n;
                } else {
                    s.tangents[j] = if j > 0 { s.tangents[j - 1] } else { Vec3::x() };
                }
            }
            s.width = s.width.max(min_width);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over the epoch's steps of each unweighted term.
    pub terms: LossBreakdown,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub state: OptimState,
    pub model: CardModel,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), OptimError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, OptimError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub model: CardModel,
    pub history: Vec<EpochLog>,
    /// Full-view objective before and after.
    pub initial: LossBreakdown,
    pub initial_total: f64,
    pub final_terms: LossBreakdown,
    pub final_total: f64,
}

/// Inputs shared by every step.
pub struct Problem<'a> {
    pub views: &'a [ViewCamera],
    pub references: &'a [ChannelImages],
    pub sdf: Option<&'a MeshSdf>,
    pub weights: LossWeights,
    pub match_norm: MatchNorm,
    pub radius: f64,
}

impl Problem<'_> {
    fn evaluate(&self, model: &CardModel) -> Result<(LossBreakdown, f64), OptimError> {
        let l = total_loss(model, self.views, self.references, &self.weights, self.sdf, self.match_norm)?;
        Ok((l.terms, l.value))
    }
}

pub const CHECKPOINT_FILE: &str = "optim_checkpoint.json";

pub fn joint_optimize(
    model: CardModel,
    problem: &Problem,
    cfg: &OptimConfig,
    resume: Option<Checkpoint>,
) -> Result<OptimResult, OptimError> {
    let (initial, initial_total) = problem.evaluate(&model)?;
    let start_model = model.clone();
    let (mut model, mut state, mut history, start) = match resume {
        Some(ck) => {
            if flatten_params(&ck.model).0.len() != flatten_params(&model).0.len() {
                return Err(OptimError::CheckpointMismatch);
            }
            (ck.model, ck.state, ck.history, ck.epoch)
        }
        None => {
            let state = OptimState::new(&model);
            (model, state, Vec::new(), 0)
        }
    };
    let rail_lr = cfg.rail_lr * problem.radius;
    let min_width = cfg.min_width * problem.radius;
    let per_step = cfg.views_per_step.max(1);

    for epoch in start..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..problem.views.len()).collect();
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let mut acc_total = 0.0;
        let chunks: Vec<&[usize]> = if order.is_empty() { vec![&[]] } else { order.chunks(per_step).collect() };
        for (step, chunk) in chunks.iter().enumerate() {
            let views: Vec<ViewCamera> = chunk.iter().map(|&i| problem.views[i].clone()).collect();
            let refs: Vec<ChannelImages> = chunk.iter().map(|&i| problem.references[i].clone()).collect();
            let loss = total_loss(&model, &views, &refs, &problem.weights, problem.sdf, problem.match_norm)?;
            if !loss.value.is_finite() || loss.grads.has_non_finite() {
                return Err(non_finite(epoch, step, &loss.grads, loss.value, cfg));
            }
            acc_add(&mut acc, &loss.terms);
            acc_total += loss.value;
            state.adam_step(&loss.grads.flatten(), cfg, rail_lr);
            unflatten_params(&mut model, &state.params);
            project_constraints(&mut model, min_width);
            state.params = flatten_params(&model).0;
        }
        let k = 1.0 / chunks.len() as f64;
        let terms = LossBreakdown {
            tangent: acc.tangent * k,
            depth: acc.depth * k,
            dice: acc.dice * k,
            matching: acc.matching * k,
            collision: acc.collision * k,
        };
        history.push(EpochLog {
            epoch,
            terms,
            total: acc_total * k,
        });
        if epoch % 10 == 0 || epoch + 1 == cfg.epochs {
            info!("epoch {epoch}: loss {:.6e}", acc_total * k);
        }
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if every > 0 && (epoch + 1) % every == 0 {
                Checkpoint {
                    epoch: epoch + 1,
                    state: state.clone(),
                    model: model.clone(),
                    history: history.clone(),
                }
                .save(&dir.join(CHECKPOINT_FILE))?;
            }
        }
    }

    let (mut final_terms, mut final_total) = problem.evaluate(&model)?;
    if final_total > initial_total {
        warn!("optimization ended above its starting loss ({final_total:.6e} > {initial_total:.6e}); keeping the start");
        model = start_model;
        final_terms = initial;
        final_total = initial_total;
    }
    Ok(OptimResult {
        model,
        history,
        initial,
        initial_total,
        final_terms,
        final_total,
    })
}

fn acc_add(acc: &mut LossBreakdown, t: &LossBreakdown) {
    acc.tangent += t.tangent;
    acc.depth += t.depth;
    acc.dice += t.dice;
    acc.matching += t.matching;
    acc.collision += t.collision;
}

fn non_finite(epoch: usize, step: usize, grads: &ModelGrads, value: f64, cfg: &OptimConfig) -> OptimError {
    let flat = grads.flatten();
    let bad = flat.iter().filter(|x| !x.is_finite()).count();
    let max = flat.iter().filter(|x| x.is_finite()).fold(0.0f64, |m, x| m.max(x.abs()));
    let mut detail = format!("loss {value}, {bad} non-finite gradient entries, largest finite |g| {max:e}");
    if let Some(dir) = &cfg.checkpoint_dir {
        let path = dir.join("nan_gradients.txt");
        let dumped = std::fs::File::create(&path).and_then(|f| {
            let mut w = std::io::BufWriter::new(f);
            for g in &flat {
                writeln!(w, "{g}")?;
            }
            w.flush()
        });
        if dumped.is_ok() {
            detail.push_str(&format!(", gradients dumped to {}", path.display()));
        }
    }
    OptimError::NonFinite { epoch, step, detail }
}

/// Loss curve as `epoch,tangent,depth,dice,match,collision,total`.
pub fn write_loss_csv(path: &Path, history: &[EpochLog]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,tangent,depth,dice,match,collision,total")?;
    for e in history {
        let t = &e.terms;
        writeln!(
            w,
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            e.epoch, t.tangent, t.depth, t.dice, t.matching, t.collision, e.total
        )?;
    }
    w.flush()
}

/// Trailing-window means of the per-epoch totals.
pub fn smoothed(history: &[EpochLog], window: usize) -> Vec<f64> {
    let w = window.max(1);
    history
        .windows(w.min(history.len().max(1)))
        .map(|s| s.iter().map(|e| e.total).sum::<f64>() / s.len() as f64)
        .collect()
}
