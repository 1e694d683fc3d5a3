//! One annotation session: the loop it drives, what it needs to render
//! queries, and its on-disk checkpoint.
//!
//! Layout under the session directory: `meta.json` (the creation request)
//! and `loop/` (the loop checkpoint, rewritten after every change).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use activeseg::active::{BatchRecord, GroundTruthOracle, LabelSource, LoopStatus, QueryBatch};
use activeseg::active_pixel::{oracle_pool, PixelSession};
use activeseg::boundary::{
    boundary_feature_bank, derive_boundary_truth, BoundarySession, RegionAdjacencyGraph, StopReason,
};
use activeseg::features::{compute_pixel_features, FeatureBank};
use activeseg::forest::EnsembleModel;
use activeseg::io::{self, DatasetManifest};
use activeseg::{ClassLabel, RasterVolume, SegmentationMap};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::api::{self, CreateSession, Mode, Phase, Progress, QueryItem, Queries, API_VERSION};
use crate::error::ApiError;
use crate::render;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    v: u32,
    id: String,
    request: CreateSession,
}

/// Everything fixed at creation: the image, and for boundary sessions the
/// over-segmentation and its graph.
struct Context {
    volume: RasterVolume,
    features: Arc<FeatureBank>,
    seg: Option<SegmentationMap>,
    rag: Option<RegionAdjacencyGraph>,
    /// Oracle answers per sample.
    truth: Option<Vec<usize>>,
}

enum Loop {
    Pixel(PixelSession),
    Boundary(BoundarySession),
}

impl Loop {
    fn status(&self) -> LoopStatus {
        match self {
            Loop::Pixel(s) => s.status(),
            Loop::Boundary(s) => s.status(),
        }
    }

    fn pending(&self) -> Option<&QueryBatch> {
        match self {
            Loop::Pixel(s) => s.pending(),
            Loop::Boundary(s) => s.pending(),
        }
    }

    fn model(&self) -> Option<&EnsembleModel> {
        match self {
            Loop::Pixel(s) => s.model(),
            Loop::Boundary(s) => s.model(),
        }
    }

    fn save(&self, dir: &Path) -> activeseg::Result<()> {
        match self {
            Loop::Pixel(s) => s.save_checkpoint(dir),
            Loop::Boundary(s) => s.save_checkpoint(dir),
        }
    }

    fn submit(&mut self, batch: usize, answers: &[(usize, usize)]) -> activeseg::Result<()> {
        match self {
            Loop::Pixel(s) => s.submit_labels(batch, answers).map(|_| ()),
            Loop::Boundary(s) => s.submit_labels(batch, answers).map(|_| ()),
        }
    }

    fn answer(&mut self, source: &mut dyn LabelSource) -> activeseg::Result<()> {
        match self {
            Loop::Pixel(s) => s.answer_pending(source).map(|_| ()),
            Loop::Boundary(s) => s.answer_pending(source).map(|_| ()),
        }
    }
}

/// What readers see: rebuilt after every change, swapped in whole.
pub struct Snapshot {
    pub queries: Queries,
    pub progress: Progress,
    pub model: Option<Arc<Vec<u8>>>,
}

pub struct Session {
    pub id: String,
    pub phase: Phase,
    pub mode: Mode,
    dir: PathBuf,
    ctx: Context,
    state: Mutex<Loop>,
    snapshot: RwLock<Arc<Snapshot>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn build_context(req: &CreateSession, base: &Path) -> Result<Context, ApiError> {
    let manifest_path = resolve(base, &req.manifest);
    if !manifest_path.exists() {
        return Err(activeseg::Error::MissingFile(manifest_path).into());
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    manifest.validate()?;
    let data = io::load_dataset(&manifest)?;
    let labels = data.labels;
    match req.phase {
        Phase::Pixel => {
            let setup = req.pixel.clone().unwrap_or_default();
            let features = Arc::new(compute_pixel_features(&data.volume, &setup.scales)?);
            let truth = match req.mode {
                Mode::Oracle => Some(
                    labels
                        .as_ref()
                        .ok_or_else(|| ApiError::BadRequest("oracle mode needs label planes in the manifest".into()))?
                        .iter()
                        .map(|l| l.index())
                        .collect(),
                ),
                Mode::Interactive => None,
            };
            Ok(Context { volume: data.volume, features, seg: None, rag: None, truth })
        }
        Phase::Boundary => {
            let setup = req
                .boundary
                .as_ref()
                .ok_or_else(|| ApiError::BadRequest("boundary sessions need a `boundary` setup".into()))?;
            let field = io::load_probability_field(&resolve(base, &setup.probabilities))?;
            let seg = io::load_segmentation(&resolve(base, &setup.oversegmentation))?;
            let dims = data.volume.dims();
            if field.dims() != dims || seg.dims() != dims {
                return Err(activeseg::Error::DimensionMismatch(format!(
                    "image {dims:?}, probabilities {:?}, over-segmentation {:?}",
                    field.dims(),
                    seg.dims()
                ))
                .into());
            }
            let rag = RegionAdjacencyGraph::build(&seg, &field)?;
            let features = Arc::new(boundary_feature_bank(&rag)?);
            let truth = match req.mode {
                Mode::Oracle => {
                    let (Some(gt), Some(labels)) = (data.segmentation.as_ref(), labels.as_ref()) else {
                        return Err(ApiError::BadRequest(
                            "oracle mode needs a groundtruth segmentation and label planes".into(),
                        ));
                    };
                    Some(derive_boundary_truth(&rag, &seg, gt, labels)?.classes())
                }
                Mode::Interactive => None,
            };
            Ok(Context { volume: data.volume, features, seg: Some(seg), rag: Some(rag), truth })
        }
    }
}

impl Session {
    /// Creates and persists a new session under `root/<id>`.
    pub fn create(root: &Path, id: String, req: CreateSession, base: &Path) -> Result<Arc<Session>, ApiError> {
        crate::error::check_version(req.v)?;
        let mut req = req;
        // stored requests resolve without the caller's working directory
        req.manifest = resolve(base, &req.manifest);
        if let Some(b) = req.boundary.as_mut() {
            b.probabilities = resolve(base, &b.probabilities);
            b.oversegmentation = resolve(base, &b.oversegmentation);
        }
        let ctx = build_context(&req, base)?;
        let state = match req.phase {
            Phase::Pixel => {
                let setup = req.pixel.clone().unwrap_or_default();
                let mut s = PixelSession::new(ctx.features.clone(), setup.config)?;
                if let Some(truth) = &ctx.truth {
                    let labels: Vec<ClassLabel> =
                        truth.iter().map(|&c| ClassLabel::from_index(c).expect("class index")).collect();
                    s.add_brush(&oracle_pool(&labels, setup.pool_per_class, setup.config.seed))?;
                    s.start()?;
                }
                Loop::Pixel(s)
            }
            Phase::Boundary => {
                let cfg = req.boundary.as_ref().expect("checked in context").config;
                Loop::Boundary(BoundarySession::new(ctx.features.clone(), cfg)?)
            }
        };
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::Internal(format!("{}: {e}", dir.display())))?;
        let meta = SessionMeta { v: API_VERSION, id: id.clone(), request: req.clone() };
        io::write_json(&dir.join("meta.json"), &meta)?;
        let session = Session::assemble(id, &req, dir, ctx, state);
        session.checkpoint()?;
        Ok(session)
    }

    /// Reopens a session directory written by [`Session::create`].
    pub fn open(dir: &Path) -> Result<Arc<Session>, ApiError> {
        let meta: SessionMeta = io::read_json(&dir.join("meta.json"))?;
        crate::error::check_version(meta.v)?;
        let req = meta.request;
        let ctx = build_context(&req, Path::new("/"))?;
        let checkpoint = dir.join("loop");
        let state = match req.phase {
            Phase::Pixel => Loop::Pixel(PixelSession::load_checkpoint(&checkpoint, ctx.features.clone())?),
            Phase::Boundary => Loop::Boundary(BoundarySession::load_checkpoint(&checkpoint, ctx.features.clone())?),
        };
        Ok(Session::assemble(meta.id, &req, dir.to_path_buf(), ctx, state))
    }

    fn assemble(id: String, req: &CreateSession, dir: PathBuf, ctx: Context, state: Loop) -> Arc<Session> {
        let session = Session {
            id,
            phase: req.phase,
            mode: req.mode,
            dir,
            ctx,
            state: Mutex::new(state),
            snapshot: RwLock::new(Arc::new(Snapshot {
                queries: Queries { v: API_VERSION, id: String::new(), status: LoopStatus::Training, batch: None, items: vec![] },
                progress: Progress {
                    v: API_VERSION,
                    id: String::new(),
                    phase: req.phase,
                    mode: req.mode,
                    status: LoopStatus::Training,
                    iteration: 0,
                    labeled: 0,
                    budget_remaining: 0,
                    history: vec![],
                    zero_error_streak: None,
                    stop_reason: None,
                    stopping_criterion_met: false,
                },
                model: None,
            })),
        };
        let snap = session.build_snapshot(&session.state.lock());
        *session.snapshot.write() = Arc::new(snap);
        Arc::new(session)
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    /// Whether a background oracle run should be driving this session.
    pub fn needs_oracle_run(&self) -> bool {
        self.mode == Mode::Oracle && self.snapshot().progress.status == LoopStatus::AwaitingLabels
    }

    fn checkpoint(&self) -> Result<(), ApiError> {
        let state = self.state.lock();
        self.persist(&state)
    }

    fn persist(&self, state: &Loop) -> Result<(), ApiError> {
        state.save(&self.dir.join("loop"))?;
        *self.snapshot.write() = Arc::new(self.build_snapshot(state));
        Ok(())
    }

    fn mark_training(&self) {
        let old = self.snapshot();
        let mut queries = old.queries.clone();
        queries.status = LoopStatus::Training;
        queries.items.clear();
        queries.batch = None;
        let mut progress = old.progress.clone();
        progress.status = LoopStatus::Training;
        *self.snapshot.write() = Arc::new(Snapshot { queries, progress, model: old.model.clone() });
    }

    fn build_snapshot(&self, state: &Loop) -> Snapshot {
        let status = state.status();
        let (batch, items) = match (status, state.pending()) {
            (LoopStatus::AwaitingLabels, Some(p)) => (Some(p.number), self.render_items(p)),
            _ => (None, Vec::new()),
        };
        let queries = Queries { v: API_VERSION, id: self.id.clone(), status, batch, items };
        let (history, labeled, budget_remaining, streak, stop, met): (Vec<BatchRecord>, _, _, _, _, _) = match state {
            Loop::Pixel(s) => (
                s.history().to_vec(),
                s.training_set().len(),
                s.budget_remaining() * s.config().batch_size,
                None,
                None,
                false,
            ),
            Loop::Boundary(s) => (
                s.history().to_vec(),
                s.labeled().len(),
                s.budget_remaining(),
                Some(s.zero_error_streak()),
                s.stop_reason(),
                s.stop_reason() == Some(StopReason::ZeroErrorWindow),
            ),
        };
        let progress = Progress {
            v: API_VERSION,
            id: self.id.clone(),
            phase: self.phase,
            mode: self.mode,
            status,
            iteration: history.len(),
            labeled,
            budget_remaining,
            history,
            zero_error_streak: streak,
            stop_reason: stop,
            stopping_criterion_met: met,
        };
        let model = state.model().map(|m| Arc::new(m.to_bytes()));
        Snapshot { queries, progress, model }
    }

    fn render_items(&self, batch: &QueryBatch) -> Vec<QueryItem> {
        let dims = self.ctx.volume.dims();
        match self.phase {
            Phase::Pixel => batch
                .items
                .iter()
                .map(|q| {
                    let (x, y, z) = dims.coords(q.sample);
                    QueryItem::Pixel {
                        sample: q.sample,
                        coords: [x, y, z],
                        patch: render::pixel_patch(&self.ctx.volume, q.sample),
                        crosshair: [render::PATCH_RADIUS, render::PATCH_RADIUS],
                        options: ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect(),
                    }
                })
                .collect(),
            Phase::Boundary => {
                let rag = self.ctx.rag.as_ref().expect("boundary context");
                let seg = self.ctx.seg.as_ref().expect("boundary context");
                batch
                    .items
                    .iter()
                    .map(|q| {
                        let b = rag.boundary(q.sample);
                        let mut voxels = b.voxels.clone();
                        voxels.sort_unstable();
                        QueryItem::Boundary {
                            boundary: q.sample,
                            regions: [b.a, b.b],
                            contact: b.contact,
                            overlay: render::boundary_overlay(&self.ctx.volume, seg, (b.a, b.b), &voxels),
                            options: vec!["false".into(), "true".into()],
                        }
                    })
                    .collect()
            }
        }
    }

    /// Ingests one answered batch. Blocking: retrains both predictors.
    pub fn post_labels(&self, body: &api::PostLabels) -> Result<Progress, ApiError> {
        crate::error::check_version(body.v)?;
        if self.mode == Mode::Oracle {
            return Err(ApiError::Conflict("oracle sessions answer their own queries".into()));
        }
        let mut state = self
            .state
            .try_lock()
            .ok_or_else(|| ApiError::Conflict("the session is training".into()))?;
        match (state.status(), state.pending()) {
            (LoopStatus::AwaitingLabels, Some(p)) if p.number == body.batch => {}
            (LoopStatus::AwaitingLabels, Some(p)) => {
                return Err(ApiError::Conflict(format!("batch {} is not the pending batch {}", body.batch, p.number)))
            }
            (status, _) => return Err(ApiError::Conflict(format!("session is {status:?}, not awaiting labels"))),
        }
        let answers: Vec<(usize, usize)> = body.labels.iter().map(|a| (a.sample, a.label)).collect();
        self.mark_training();
        let result = state.submit(body.batch, &answers);
        // a rejected batch leaves the loop untouched; restore the view either way
        self.persist(&state)?;
        result?;
        Ok(self.snapshot().progress.clone())
    }

    /// Adds brushed strokes and optionally starts the loop. Blocking when
    /// `complete` is set.
    pub fn post_brush(&self, body: &api::PostBrush) -> Result<api::BrushResult, ApiError> {
        crate::error::check_version(body.v)?;
        if self.phase != Phase::Pixel {
            return Err(ApiError::Conflict("brushing applies to pixel sessions only".into()));
        }
        let mut state = self
            .state
            .try_lock()
            .ok_or_else(|| ApiError::Conflict("the session is training".into()))?;
        let Loop::Pixel(session) = &mut *state else { unreachable!("phase checked") };
        if session.status() != LoopStatus::AwaitingBrush {
            return Err(ApiError::Conflict("brushing is closed once the loop has started".into()));
        }
        let strokes: Vec<(usize, usize)> = body.strokes.iter().map(|s| (s.voxel, s.label)).collect();
        let report = session.add_brush(&strokes)?;
        let started = if body.complete { session.start() } else { Ok(()) };
        self.persist(&state)?;
        started?;
        Ok(api::BrushResult {
            v: API_VERSION,
            accepted: report.accepted,
            rejected: report.rejected,
            pool_size: report.pool_size,
            status: state.status(),
        })
    }

    /// Answers batches from groundtruth until the loop finishes,
    /// checkpointing after each. Blocking.
    pub fn run_oracle(&self) -> Result<(), ApiError> {
        let truth = self.ctx.truth.clone().ok_or_else(|| ApiError::Internal("no oracle labels".into()))?;
        let mut oracle = GroundTruthOracle::new(truth);
        loop {
            let mut state = self.state.lock();
            if state.status() != LoopStatus::AwaitingLabels {
                return Ok(());
            }
            self.mark_training();
            let result = state.answer(&mut oracle);
            self.persist(&state)?;
            result?;
        }
    }
}
