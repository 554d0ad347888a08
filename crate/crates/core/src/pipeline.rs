//! Stage runner over a fixed output directory.
//!
//! Layout of `out/`:
//! - `config.txt`: the effective configuration;
//! - `01_cluster/`: `clustering.json`, `assignment.txt`;
//! - `02_fit/`: `fitted.json`, `cards.obj`;
//! - `03_project/`: `model.json`;
//! - `04_reduce/`: `distances.dmat`, `assignment.json`, `model.json`;
//! - `05_optimize/`: `model.json`, `loss.csv`, `summary.json`, `optim_checkpoint.json`;
//! - `06_bake/`: `cards.obj`, `atlas_{tangent,depth,alpha,ao}.png`, `manifest.txt`;
//! - `07_cap/`: `cap_mesh.obj`, `cap_{tangent,alpha,ao}.png` (or `skipped.txt`);
//! - `08_eval/`: `report.json`, `initial_report.json`, `views/`.
//!
//! A stage writes into `NN_name.partial/` and renames it when done, so a
//! finished stage is never rewritten. An interrupted optimization resumes
//! from the checkpoint left in its partial directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bake::{bake_atlas, export_cards, BakeConfig};
use crate::cardgeom::{write_cards_obj, FittedCard};
use crate::cluster::{cluster_strands, Clustering};
use crate::config::{ConfigError, PipelineConfig};
use crate::haircap::{bake_cap_texture, build_cap_mesh, export_cap, CapBakeParams};
use crate::hairio::{downsample_strands, load_hair, load_head_mesh, HairModel, HeadMesh};
use crate::losses::{LossBreakdown, MeshSdf};
use crate::math::Vec3;
use crate::metrics::{evaluate, EvalReport};
use crate::model::CardModel;
use crate::optimize::{joint_optimize, write_loss_csv, Checkpoint, OptimConfig, Problem, CHECKPOINT_FILE};
use crate::softrender::{rasterize, sample_views, strand_ribbons, ChannelImages};
use crate::stages::{apply_assignment, fit_all, project_all, reference_renders, FitParams};
use crate::synth::{icosphere, synthetic_wig, WigParams};
use crate::texreduce::{
    raster_card_texture, reduce_with_matrix, DistanceMatrix, PatchStatsMetric, TextureAssignment,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Load,
    Cluster,
    Fit,
    Project,
    Reduce,
    Optimize,
    Bake,
    Cap,
    Eval,
    Preview,
}

impl Stage {
    /// Stages with an output directory, in execution order.
    pub const SEQUENCE: [Stage; 8] = [
        Stage::Cluster,
        Stage::Fit,
        Stage::Project,
        Stage::Reduce,
        Stage::Optimize,
        Stage::Bake,
        Stage::Cap,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Cluster => "cluster",
            Stage::Fit => "fit",
            Stage::Project => "project",
            Stage::Reduce => "reduce",
            Stage::Optimize => "optimize",
            Stage::Bake => "bake",
            Stage::Cap => "cap",
            Stage::Eval => "eval",
            Stage::Preview => "preview",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Load => 10,
            Stage::Cluster => 11,
            Stage::Fit => 12,
            Stage::Project => 13,
            Stage::Reduce => 14,
            Stage::Optimize => 15,
            Stage::Bake => 16,
            Stage::Cap => 17,
            Stage::Eval => 18,
            Stage::Preview => 19,
        }
    }

    fn previous(self) -> Option<Stage> {
        let i = Self::SEQUENCE.iter().position(|s| *s == self)?;
        i.checked_sub(1).map(|j| Self::SEQUENCE[j])
    }

    pub fn dir_name(self) -> String {
        let i = Self::SEQUENCE.iter().position(|s| *s == self).map_or(0, |i| i + 1);
        format!("{i:02}_{}", self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("output directory {0} is locked by another run (remove the lock file if that run is gone)")]
    Locked(PathBuf),
    #[error("{stage} stage: {context}: {source}")]
    Stage {
        stage: Stage,
        context: String,
        #[source]
        source: BoxError,
    },
    #[error("{stage} stage needs the {needs} stage to be complete")]
    Missing { stage: Stage, needs: Stage },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Locked(_) => 3,
            PipelineError::Stage { stage, .. } | PipelineError::Missing { stage, .. } => stage.exit_code(),
        }
    }
}

trait StageContext<T> {
    fn ctx(self, stage: Stage, context: impl Into<String>) -> Result<T, PipelineError>;
}

impl<T, E: Into<BoxError>> StageContext<T> for Result<T, E> {
    fn ctx(self, stage: Stage, context: impl Into<String>) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::Stage {
            stage,
            context: context.into(),
            source: e.into(),
        })
    }
}

pub const LOCK_FILE: &str = ".lock";
pub const CONFIG_FILE: &str = "config.txt";

struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(ConfigError::Io(format!("{}: {e}", path.display())).into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

struct Inputs {
    hair: HairModel,
    head: Option<HeadMesh>,
}

/// Loss values before and after optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimSummary {
    pub epochs: usize,
    pub initial: LossBreakdown,
    pub initial_total: f64,
    pub final_terms: LossBreakdown,
    pub final_total: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BoxError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, BoxError> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    inputs: OnceLock<Inputs>,
    _lock: OutputLock,
}

impl Pipeline {
    /// Validates `cfg`, locks `out` and records the configuration. An
    /// existing output directory must have been created with the same one.
    pub fn open(cfg: PipelineConfig, out: &Path) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let io = |e: std::io::Error| ConfigError::Io(format!("{}: {e}", out.display()));
        fs::create_dir_all(out).map_err(io)?;
        let lock = OutputLock::acquire(out)?;
        let snapshot = out.join(CONFIG_FILE);
        let text = cfg.to_text();
        if snapshot.exists() {
            let old = fs::read_to_string(&snapshot).map_err(io)?;
            if old != text {
                return Err(ConfigError::Invalid(format!(
                    "{} was produced with a different configuration; use a new output directory",
                    out.display()
                ))
                .into());
            }
        } else {
            fs::write(&snapshot, text).map_err(io)?;
        }
        Ok(Self {
            cfg,
            out: out.to_path_buf(),
            inputs: OnceLock::new(),
            _lock: lock,
        })
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.dir_name())
    }

    fn partial_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(format!("{}.partial", stage.dir_name()))
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.stage_dir(stage).is_dir()
    }

    fn inputs(&self) -> Result<&Inputs, PipelineError> {
        if let Some(i) = self.inputs.get() {
            return Ok(i);
        }
        let loaded = self.load_inputs()?;
        Ok(self.inputs.get_or_init(|| loaded))
    }

    fn load_inputs(&self) -> Result<Inputs, PipelineError> {
        let c = &self.cfg;
        let st = Stage::Load;
        let wig = WigParams {
            strands: c.synth_strands,
            samples: c.n_samples,
            seed: c.synth_seed,
            ..WigParams::default()
        };
        let mut hair = if c.hair.is_empty() {
            synthetic_wig(&wig)
        } else {
            load_hair(Path::new(&c.hair), c.n_samples).ctx(st, format!("reading {}", c.hair))?
        };
        if c.n_strands > 0 && c.n_strands < hair.len() {
            hair = downsample_strands(&hair, c.n_strands, c.synth_seed).ctx(st, "downsampling")?;
        }
        let head = if !c.head.is_empty() {
            Some(load_head_mesh(Path::new(&c.head)).ctx(st, format!("reading {}", c.head))?)
        } else if c.hair.is_empty() {
            Some(icosphere(3, wig.head_radius, Vec3::zeros()))
        } else {
            warn!("no head mesh: collision loss and hair cap disabled");
            None
        };
        if hair.len() < c.n_cards {
            return Err(PipelineError::Stage {
                stage: st,
                context: "checking inputs".into(),
                source: format!("{} strands cannot form {} cards", hair.len(), c.n_cards).into(),
            });
        }
        Ok(Inputs { hair, head })
    }

    pub fn strand_width(&self, hair: &HairModel) -> f64 {
        self.cfg
            .strand_width
            .0
            .unwrap_or(2.0 * hair.bounds.radius / self.cfg.render_resolution as f64)
    }

    fn require(&self, stage: Stage, needs: Stage) -> Result<PathBuf, PipelineError> {
        if self.is_done(needs) {
            Ok(self.stage_dir(needs))
        } else {
            Err(PipelineError::Missing { stage, needs })
        }
    }

    /// Runs one stage. Returns `false` when it had already finished.
    pub fn run_stage(&self, stage: Stage) -> Result<bool, PipelineError> {
        if self.is_done(stage) {
            info!("{stage}: already complete");
            return Ok(false);
        }
        if let Some(prev) = stage.previous() {
            self.require(stage, prev)?;
        }
        let partial = self.partial_dir(stage);
        if stage != Stage::Optimize && partial.exists() {
            fs::remove_dir_all(&partial).ctx(stage, "clearing partial output")?;
        }
        fs::create_dir_all(&partial).ctx(stage, "creating output directory")?;
        info!("{stage}: running");
        match stage {
            Stage::Cluster => self.cluster(&partial),
            Stage::Fit => self.fit(&partial),
            Stage::Project => self.project(&partial),
            Stage::Reduce => self.reduce(&partial),
            Stage::Optimize => self.optimize(&partial),
            Stage::Bake => self.bake(&partial),
            Stage::Cap => self.cap(&partial),
            Stage::Eval => self.eval(&partial),
            Stage::Load | Stage::Preview => Ok(()),
        }?;
        fs::rename(&partial, self.stage_dir(stage)).ctx(stage, "finalizing output")?;
        Ok(true)
    }

    /// Runs every unfinished stage in order.
    pub fn run_all(&self) -> Result<(), PipelineError> {
        self.run_through(Stage::Eval)
    }

    /// Runs every unfinished stage up to and including `last`.
    pub fn run_through(&self, last: Stage) -> Result<(), PipelineError> {
        for s in Stage::SEQUENCE {
            self.run_stage(s)?;
            if s == last {
                break;
            }
        }
        Ok(())
    }

    fn cluster(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Cluster;
        let hair = &self.inputs()?.hair;
        let c = cluster_strands(hair, self.cfg.n_cards, self.cfg.cluster_seed, self.cfg.cluster_iters).ctx(st, "k-means")?;
        write_json(&dir.join("clustering.json"), &c).ctx(st, "writing clustering")?;
        c.write_assignment(&dir.join("assignment.txt")).ctx(st, "writing assignment")?;
        Ok(())
    }

    fn clustering(&self, stage: Stage) -> Result<Clustering, PipelineError> {
        let d = self.require(stage, Stage::Cluster)?;
        read_json(&d.join("clustering.json")).ctx(stage, "reading clustering")
    }

    fn fit(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Fit;
        let hair = &self.inputs()?.hair;
        let clustering = self.clustering(st)?;
        let p = FitParams {
            n_quads: self.cfg.n_quads,
            n_circle_samples: self.cfg.orientation_samples,
            min_width: self.cfg.card_min_width * hair.bounds.radius,
            crossed: self.cfg.crossed,
            strand_width: self.strand_width(hair),
        };
        let fitted = fit_all(hair, &clustering, &p).ctx(st, "fitting cards")?;
        write_json(&dir.join("fitted.json"), &fitted).ctx(st, "writing cards")?;
        let geoms: Vec<_> = fitted.iter().flatten().map(|f| f.geometry.clone()).collect();
        write_cards_obj(&dir.join("cards.obj"), &geoms).ctx(st, "writing cards.obj")?;
        Ok(())
    }

    fn project(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Project;
        let hair = &self.inputs()?.hair;
        let clustering = self.clustering(st)?;
        let fitted: Vec<Vec<FittedCard>> =
            read_json(&self.require(st, Stage::Fit)?.join("fitted.json")).ctx(st, "reading cards")?;
        let model = project_all(hair, &clustering, &fitted, self.strand_width(hair)).ctx(st, "projecting strands")?;
        write_json(&dir.join("model.json"), &model).ctx(st, "writing model")
    }

    pub fn load_model(&self, stage: Stage) -> Result<CardModel, PipelineError> {
        let d = self.require(stage, stage)?;
        read_json(&d.join("model.json")).ctx(stage, "reading model")
    }

    fn load_model_for(&self, stage: Stage, from: Stage) -> Result<CardModel, PipelineError> {
        let d = self.require(stage, from)?;
        read_json(&d.join("model.json")).ctx(stage, format!("reading {from} model"))
    }

    pub fn load_assignment(&self) -> Result<TextureAssignment, PipelineError> {
        let d = self.require(Stage::Reduce, Stage::Reduce)?;
        read_json(&d.join("assignment.json")).ctx(Stage::Reduce, "reading assignment")
    }

    fn reduce(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Reduce;
        let model = self.load_model_for(st, Stage::Project)?;
        let n = model.cards.len();
        let assignment = if self.cfg.reduce {
            let d = if self.cfg.distance_matrix.is_empty() {
                let images: Vec<_> = model
                    .cards
                    .iter()
                    .map(|c| {
                        raster_card_texture(
                            &model.textures[c.texture],
                            self.cfg.reduce_tex_width,
                            self.cfg.reduce_tex_height,
                            c.geometry.mean_width(),
                        )
                    })
                    .collect();
                DistanceMatrix::from_images(&images, &PatchStatsMetric::default()).ctx(st, "texture distances")?
            } else {
                let d = DistanceMatrix::load(Path::new(&self.cfg.distance_matrix)).ctx(st, "reading distances")?;
                if d.n != n {
                    return Err(PipelineError::Stage {
                        stage: st,
                        context: "reading distances".into(),
                        source: format!("matrix covers {} textures, model has {n}", d.n).into(),
                    });
                }
                d
            };
            d.save(&dir.join("distances.dmat")).ctx(st, "writing distances")?;
            reduce_with_matrix(&d, self.cfg.n_textures.min(n), self.cfg.reduce_seed).ctx(st, "k-medoids")?
        } else {
            TextureAssignment::identity(n)
        };
        let reduced = apply_assignment(&model, &assignment).ctx(st, "sharing textures")?;
        write_json(&dir.join("assignment.json"), &assignment).ctx(st, "writing assignment")?;
        write_json(&dir.join("model.json"), &reduced).ctx(st, "writing model")
    }

    fn optimize(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Optimize;
        let inputs = self.inputs()?;
        let hair = &inputs.hair;
        let model = self.load_model_for(st, Stage::Reduce)?;
        let c = &self.cfg;
        let views = sample_views(c.train_views, &hair.bounds, c.render_resolution);
        let refs = reference_renders(hair, &views, self.strand_width(hair));
        let sdf = inputs.head.as_ref().map(MeshSdf::new);
        let problem = Problem {
            views: &views,
            references: &refs,
            sdf: sdf.as_ref(),
            weights: c.weights(),
            match_norm: c.match_norm.0,
            radius: hair.bounds.radius,
        };
        let ocfg = OptimConfig {
            epochs: c.epochs,
            views_per_step: c.views_per_step,
            lr: c.lr,
            rail_lr: c.rail_lr,
            seed: c.optim_seed,
            min_width: c.min_strand_width,
            checkpoint_every: (c.checkpoint_every > 0).then_some(c.checkpoint_every),
            checkpoint_dir: Some(dir.to_path_buf()),
            ..OptimConfig::default()
        };
        let ck_path = dir.join(CHECKPOINT_FILE);
        let resume = if ck_path.exists() {
            let ck = Checkpoint::load(&ck_path).ctx(st, "reading checkpoint")?;
            info!("optimize: resuming at epoch {}", ck.epoch);
            Some(ck)
        } else {
            None
        };
        let res = joint_optimize(model, &problem, &ocfg, resume).ctx(st, "joint optimization")?;
        write_json(&dir.join("model.json"), &res.model).ctx(st, "writing model")?;
        write_loss_csv(&dir.join("loss.csv"), &res.history).ctx(st, "writing loss curve")?;
        let summary = OptimSummary {
            epochs: c.epochs,
            initial: res.initial,
            initial_total: res.initial_total,
            final_terms: res.final_terms,
            final_total: res.final_total,
        };
        write_json(&dir.join("summary.json"), &summary).ctx(st, "writing summary")
    }

    fn bake(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Bake;
        let model = self.load_model_for(st, Stage::Optimize)?;
        let assignment = self.load_assignment()?;
        let cfg = BakeConfig {
            layout: self.cfg.atlas(),
            ao_rays: self.cfg.ao_rays,
            seed: self.cfg.bake_seed,
            ao_whole_model: self.cfg.ao_whole_model,
            depth_16bit: self.cfg.depth_16bit,
        };
        let atlas = bake_atlas(&model, &assignment.representative, &cfg).ctx(st, "baking atlas")?;
        atlas.save_pngs(dir, cfg.depth_16bit).ctx(st, "writing atlas")?;
        export_cards(&model, &atlas, dir).ctx(st, "writing cards")
    }

    fn cap(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Cap;
        let inputs = self.inputs()?;
        let head = match (&inputs.head, self.cfg.cap) {
            (Some(h), true) => h,
            (None, true) => return fs::write(dir.join("skipped.txt"), "no head mesh\n").ctx(st, "writing note"),
            (_, false) => return fs::write(dir.join("skipped.txt"), "cap disabled\n").ctx(st, "writing note"),
        };
        let hair = &inputs.hair;
        let r = hair.bounds.radius;
        let cap = build_cap_mesh(head, &hair.strands, self.cfg.eps_cap * r).ctx(st, "building cap mesh")?;
        let params = CapBakeParams {
            eps_root: self.cfg.eps_root * r,
            resolution: self.cfg.cap_resolution,
            strand_width: self.strand_width(hair),
            ao_saturation: self.cfg.cap_ao_saturation,
        };
        let tex = bake_cap_texture(head, &hair.strands, &cap, &params).ctx(st, "baking cap texture")?;
        export_cap(&cap, &tex, dir).ctx(st, "writing cap")
    }

    fn eval(&self, dir: &Path) -> Result<(), PipelineError> {
        let st = Stage::Eval;
        let hair = &self.inputs()?.hair;
        let initial = self.load_model_for(st, Stage::Reduce)?;
        let last = self.load_model_for(st, Stage::Optimize)?;
        let metric = PatchStatsMetric::default();
        let (n, res, w) = (self.cfg.eval_views, self.cfg.eval_resolution, self.strand_width(hair));
        let (before, _) = evaluate(&initial, hair, n, res, w, &metric).ctx(st, "evaluating initial model")?;
        let (after, renders) = evaluate(&last, hair, n, res, w, &metric).ctx(st, "evaluating final model")?;
        before.save(&dir.join("initial_report.json")).ctx(st, "writing report")?;
        after.save(&dir.join("report.json")).ctx(st, "writing report")?;
        let views = dir.join("views");
        fs::create_dir_all(&views).ctx(st, "creating views directory")?;
        renders.save_pngs(&views).ctx(st, "writing view images")
    }

    pub fn load_report(&self) -> Result<EvalReport, PipelineError> {
        let d = self.require(Stage::Eval, Stage::Eval)?;
        EvalReport::load(&d.join("report.json")).ctx(Stage::Eval, "reading report")
    }

    /// Writes preview renders of a stage artifact into `out/preview_<what>/`
    /// and returns that directory. `what` is `cluster`, `project`, `reduce`,
    /// `optimize` or `final` (same as `optimize`).
    pub fn preview(&self, what: &str, n_views: usize) -> Result<PathBuf, PipelineError> {
        let st = Stage::Preview;
        let hair = &self.inputs()?.hair;
        let res = self.cfg.eval_resolution;
        let views = sample_views(n_views, &hair.bounds, res);
        let dir = self.out.join(format!("preview_{what}"));
        fs::create_dir_all(&dir).ctx(st, "creating preview directory")?;
        let width = self.strand_width(hair);
        if what == "cluster" {
            let clustering = self.clustering(st)?;
            let ribbons = strand_ribbons(hair.strands.iter().map(|s| s.samples.as_slice()), width);
            for (i, cam) in views.iter().enumerate() {
                let (img, rec) = rasterize(&ribbons, cam);
                let rgb = image::RgbImage::from_fn(res as u32, res as u32, |x, y| {
                    let p = y as usize * res + x as usize;
                    let color = rec.coverers[p].map_or([0.0; 3], |(r, _)| palette(clustering.assignment[r as usize]));
                    image::Rgb(color.map(|c| (c * img.mask[p] * 255.0).round() as u8))
                });
                rgb.save(dir.join(format!("view_{i:02}.png"))).ctx(st, "writing preview")?;
            }
            return Ok(dir);
        }
        let stage = match what {
            "project" => Stage::Project,
            "reduce" => Stage::Reduce,
            "optimize" | "final" => Stage::Optimize,
            other => {
                return Err(PipelineError::Stage {
                    stage: st,
                    context: "choosing artifact".into(),
                    source: format!("unknown artifact {other:?}").into(),
                })
            }
        };
        let model = self.load_model_for(st, stage)?;
        if model.cards.is_empty() {
            return Err(PipelineError::Stage {
                stage: st,
                context: format!("previewing {what}"),
                source: "the card model is empty".into(),
            });
        }
        let refs = reference_renders(hair, &views, width);
        let cards = crate::metrics::render_cards(&model, &views);
        for (i, (r, c)) in refs.iter().zip(&cards).enumerate() {
            side_by_side(r, c).save(dir.join(format!("pair_{i:02}.png"))).ctx(st, "writing preview")?;
        }
        Ok(dir)
    }
}

/// Distinct, deterministic color per index.
fn palette(i: usize) -> [f64; 3] {
    let h = (i as f64 * 0.618_033_988_749_895).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Tangent renders, strands on the left and cards on the right.
fn side_by_side(left: &ChannelImages, right: &ChannelImages) -> image::RgbImage {
    let n = left.resolution;
    image::RgbImage::from_fn(2 * n as u32, n as u32, |x, y| {
        let (img, x) = if (x as usize) < n { (left, x as usize) } else { (right, x as usize - n) };
        let p = 3 * (y as usize * n + x);
        image::Rgb([0, 1, 2].map(|k| (img.tangent[p + k].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}
