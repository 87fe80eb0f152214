//! Adam/AdamW, the step learning-rate schedule and the training loop.

use std::fmt;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{total_loss, LossConfig, SourceView};
use crate::ndiff::{Array, Graph, Tensor};
use crate::nets::checkpoint::ModelBundle;
use crate::nets::{Arch, DepthNet, EgoNet, ParamSet, Session};
use crate::pipeline::config::KeyValues;
use crate::pipeline::ImageTriplet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimKind {
    Adam,
    AdamW,
}

impl fmt::Display for OptimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimKind::Adam => "adam",
            OptimKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimKind::Adam),
            "adamw" => Ok(OptimKind::AdamW),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, used by AdamW only.
    pub weight_decay: f64,
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl OptimConfig {
    /// Adam at 1e-4 for convolutional networks.
    pub fn cnn() -> Self {
        Self {
            kind: OptimKind::Adam,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            decay_epoch: 15,
            decay_factor: 10.0,
            epochs: 20,
            batch_size: 12,
        }
    }

    /// AdamW at 1e-5 for transformer networks.
    pub fn transformer() -> Self {
        Self { kind: OptimKind::AdamW, lr: 1e-5, ..Self::cnn() }
    }

    /// The optimizer used when the depth network is `arch`.
    pub fn for_arch(arch: Arch) -> Self {
        match arch {
            Arch::Transformer => Self::transformer(),
            Arch::Conv => Self::cnn(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("eps, weight decay and decay factor must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self, kv: &mut KeyValues) {
        kv.set("optim.kind", self.kind);
        kv.set("optim.lr", self.lr);
        kv.set("optim.beta1", self.beta1);
        kv.set("optim.beta2", self.beta2);
        kv.set("optim.eps", self.eps);
        kv.set("optim.weight_decay", self.weight_decay);
        kv.set("optim.decay_epoch", self.decay_epoch);
        kv.set("optim.decay_factor", self.decay_factor);
        kv.set("optim.epochs", self.epochs);
        kv.set("optim.batch_size", self.batch_size);
    }

    pub fn from_kv(mut self, kv: &KeyValues) -> Result<Self> {
        if let Some(v) = kv.get_parsed::<String>("optim.kind")? {
            self.kind = v.parse()?;
        }
        macro_rules! field {
            ($name:ident) => {
                if let Some(v) = kv.get_parsed(concat!("optim.", stringify!($name)))? {
                    self.$name = v;
                }
            };
        }
        field!(lr);
        field!(beta1);
        field!(beta2);
        field!(eps);
        field!(weight_decay);
        field!(decay_epoch);
        field!(decay_factor);
        field!(epochs);
        field!(batch_size);
        Ok(self)
    }
}

/// Step schedule: `lr` before `decay_epoch`, `lr / decay_factor` after.
pub fn lr_schedule(epoch: usize, cfg: &OptimConfig) -> f64 {
    if epoch < cfg.decay_epoch {
        cfg.lr
    } else {
        cfg.lr / cfg.decay_factor
    }
}

/// First and second moments for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Array>,
    pub v: Vec<Array>,
    pub step: usize,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self::for_shapes(params.params().iter().map(|p| p.value.shape()))
    }

    pub fn for_shapes<'a>(shapes: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let (m, v) = shapes.into_iter().map(|s| (Array::zeros(s), Array::zeros(s))).unzip();
        Self { m, v, step: 0 }
    }
}

/// One Adam/AdamW update of `params` in place at learning rate `lr`.
/// AdamW first shrinks each parameter by `lr · weight_decay`, then applies
/// the bias-corrected Adam step.
pub fn optimizer_step(
    params: &mut [&mut Array],
    grads: &[Array],
    state: &mut AdamState,
    cfg: &OptimConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape(
            "optimizer_step",
            format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if p.shape() != grads[i].shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "optimizer_step",
                format!("tensor {i}: param {:?}, grad {:?}", p.shape(), grads[i].shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let decay = if cfg.kind == OptimKind::AdamW { lr * cfg.weight_decay } else { 0.0 };
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, x) in p.data_mut().iter_mut().enumerate() {
            if decay != 0.0 {
                *x -= decay * *x;
            }
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *x -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// [`optimizer_step`] over every tensor of a [`ParamSet`].
pub fn step_params(ps: &mut ParamSet, grads: &[Array], state: &mut AdamState, cfg: &OptimConfig, lr: f64) -> Result<()> {
    let mut refs: Vec<&mut Array> = ps.params_mut().iter_mut().map(|p| &mut p.value).collect();
    optimizer_step(&mut refs, grads, state, cfg, lr)
}

/// Where the intrinsics used for warping come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntrinsicsMode {
    /// Taken from the dataset.
    Given,
    /// Predicted by the ego network, averaged over the two pairs.
    Learned,
}

impl fmt::Display for IntrinsicsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntrinsicsMode::Given => "given",
            IntrinsicsMode::Learned => "learned",
        })
    }
}

impl FromStr for IntrinsicsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "given" => Ok(IntrinsicsMode::Given),
            "learned" => Ok(IntrinsicsMode::Learned),
            other => Err(Error::Config(format!("intrinsics mode {other:?}: expected given or learned"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub intrinsics: IntrinsicsMode,
    pub seed: u64,
    pub shuffle: bool,
}

impl TrainConfig {
    pub fn new(optim: OptimConfig) -> Self {
        Self { optim, loss: LossConfig::default(), intrinsics: IntrinsicsMode::Given, seed: 0, shuffle: true }
    }
}

/// Statistics of one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Per-scale photometric term averaged over the batch.
    pub reprojection: Vec<f64>,
    pub mask_fraction: f64,
    /// Intrinsics used for the first sample, `[fx, fy, cx, cy]`.
    pub intrinsics: [f64; 4],
    /// Mean translation norm over all predicted pair motions.
    pub translation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub steps: usize,
}

/// Forward pass of both networks on a batch and the resulting loss.
pub struct BatchForward<'g> {
    pub loss: Tensor<'g>,
    pub per_sample: Vec<crate::losses::LossBreakdown<'g>>,
    pub intrinsics: Vec<Tensor<'g>>,
    /// Pair motions `[P, 6]`, prev pair before next pair for each sample.
    pub poses: Tensor<'g>,
    /// Target-image leaves, `[3, H, W]` each, in batch order.
    pub targets: Vec<Tensor<'g>>,
}

/// Image tensors for one sample, so callers can make them differentiable.
#[derive(Clone, Copy, Debug)]
pub struct SampleImages<'g> {
    pub prev: Option<Tensor<'g>>,
    pub target: Tensor<'g>,
    pub next: Option<Tensor<'g>>,
}

impl<'g> SampleImages<'g> {
    pub fn constants(g: &'g Graph, t: &ImageTriplet) -> Self {
        Self {
            prev: t.prev.as_ref().map(|a| g.constant(a.clone())),
            target: g.constant(t.target.clone()),
            next: t.next.as_ref().map(|a| g.constant(a.clone())),
        }
    }

    pub fn leaves(g: &'g Graph, t: &ImageTriplet) -> Self {
        Self {
            prev: t.prev.as_ref().map(|a| g.param(a.clone())),
            target: g.param(t.target.clone()),
            next: t.next.as_ref().map(|a| g.param(a.clone())),
        }
    }
}

fn add_batch_axis<'g>(t: &Tensor<'g>) -> Result<Tensor<'g>> {
    let s = t.shape();
    t.reshape(&[1, s[0], s[1], s[2]])
}

/// Run depth and ego networks on `samples` and build the mean loss.
///
/// Frame pairs are `(I−1, I0)` and `(I0, I1)`; their outputs are used
/// directly as the target→previous and target→next motions. A sample
/// missing a neighbour uses only the pair that exists.
#[allow(clippy::too_many_arguments)]
pub fn batch_forward<'g>(
    depth_s: &Session<'g, '_>,
    ego_s: &Session<'g, '_>,
    depth: &DepthNet,
    ego: &EgoNet,
    samples: &[SampleImages<'g>],
    given_k: &[Option<crate::geometry::Intrinsics>],
    mode: IntrinsicsMode,
    loss_cfg: &LossConfig,
) -> Result<BatchForward<'g>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let g = depth_s.graph();
    let targets: Vec<Tensor<'g>> = samples.iter().map(|s| add_batch_axis(&s.target)).collect::<Result<_>>()?;
    let disps = depth.forward(depth_s, &Tensor::concat(&targets, 0)?)?;
    let mut pairs = Vec::new();
    let mut owners: Vec<Vec<(usize, Tensor<'g>)>> = vec![Vec::new(); samples.len()];
    for (b, s) in samples.iter().enumerate() {
        if let Some(prev) = s.prev {
            owners[b].push((pairs.len(), prev));
            pairs.push(Tensor::concat(&[add_batch_axis(&prev)?, targets[b]], 1)?);
        }
        if let Some(next) = s.next {
            owners[b].push((pairs.len(), next));
            pairs.push(Tensor::concat(&[targets[b], add_batch_axis(&next)?], 1)?);
        }
        if owners[b].is_empty() {
            return Err(Error::Data(format!("sample {b} has no neighbouring frame")));
        }
    }
    let learned = mode == IntrinsicsMode::Learned;
    let ego_out = ego.forward(ego_s, &Tensor::concat(&pairs, 0)?, learned)?;
    let mut total = g.constant(Array::scalar(0.0));
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut intrinsics = Vec::with_capacity(samples.len());
    for (b, s) in samples.iter().enumerate() {
        let k = if learned {
            let pred = ego_out.intrinsics.expect("requested intrinsics");
            let rows = owners[b]
                .iter()
                .map(|(i, _)| pred.slice(0, *i, i + 1))
                .collect::<Result<Vec<_>>>()?;
            Tensor::concat(&rows, 0)?.mean_axis(0)?
        } else {
            let k = given_k[b].ok_or_else(|| Error::Data(format!("sample {b} has no intrinsics")))?;
            g.constant(k.to_array())
        };
        let sources = owners[b]
            .iter()
            .map(|(i, image)| {
                Ok(SourceView { image: *image, pose: ego_out.pose.slice(0, *i, i + 1)?.reshape(&[6])? })
            })
            .collect::<Result<Vec<_>>>()?;
        let disp_b = disps.iter().map(|d| d.slice(0, b, b + 1)).collect::<Result<Vec<_>>>()?;
        let lb = total_loss(&disp_b, &s.target, &sources, &k, loss_cfg)?;
        total = total.add(&lb.total)?;
        per_sample.push(lb);
        intrinsics.push(k);
    }
    let loss = total.mul_scalar(1.0 / samples.len() as f64)?;
    Ok(BatchForward { loss, per_sample, intrinsics, poses: ego_out.pose, targets: samples.iter().map(|s| s.target).collect() })
}

/// Depth and ego networks with their optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub depth: DepthNet,
    pub ego: EgoNet,
    pub cfg: TrainConfig,
    depth_state: AdamState,
    ego_state: AdamState,
    pub steps: usize,
}

impl Trainer {
    pub fn new(depth: DepthNet, ego: EgoNet, cfg: TrainConfig) -> Result<Self> {
        cfg.optim.validate()?;
        cfg.loss.validate()?;
        let depth_state = AdamState::new(&depth.params);
        let ego_state = AdamState::new(&ego.params);
        Ok(Self { depth, ego, cfg, depth_state, ego_state, steps: 0 })
    }

    /// One forward/backward/update on `batch` at learning rate `lr`.
    pub fn step(&mut self, batch: &[&ImageTriplet], lr: f64) -> Result<StepStats> {
        let g = Graph::new();
        let ds = Session::train(&g, &self.depth.params);
        let es = Session::train(&g, &self.ego.params);
        let samples: Vec<SampleImages<'_>> = batch.iter().map(|t| SampleImages::constants(&g, t)).collect();
        let given: Vec<_> = batch.iter().map(|t| t.intrinsics).collect();
        let fwd = batch_forward(&ds, &es, &self.depth, &self.ego, &samples, &given, self.cfg.intrinsics, &self.cfg.loss)?;
        let loss = fwd.loss.item();
        if !loss.is_finite() {
            return Err(Error::Diverged { step: self.steps, detail: format!("loss {loss}") });
        }
        let n_scales = fwd.per_sample[0].reprojection.len();
        let mut reprojection = vec![0.0; n_scales];
        let mut mask_fraction = 0.0;
        for lb in &fwd.per_sample {
            reprojection.iter_mut().zip(&lb.reprojection).for_each(|(a, b)| *a += b / batch.len() as f64);
            mask_fraction += lb.mask_fraction.iter().sum::<f64>() / (n_scales * batch.len()) as f64;
        }
        let kv = fwd.intrinsics[0].value();
        let intrinsics = [kv.data()[0], kv.data()[1], kv.data()[2], kv.data()[3]];
        let pv = fwd.poses.value();
        let n_pairs = pv.shape()[0];
        let translation = pv
            .data()
            .chunks(6)
            .map(|p| (p[3] * p[3] + p[4] * p[4] + p[5] * p[5]).sqrt())
            .sum::<f64>()
            / n_pairs as f64;
        let grads = g.backward(&fwd.loss)?;
        let dg = ds.gradients(&grads);
        let eg = es.gradients(&grads);
        if dg.iter().chain(&eg).any(|a| !a.all_finite()) {
            return Err(Error::Diverged { step: self.steps, detail: "non-finite gradient".into() });
        }
        let depth_stats = ds.take_batch_stats();
        let ego_stats = es.take_batch_stats();
        drop((ds, es));
        step_params(&mut self.depth.params, &dg, &mut self.depth_state, &self.cfg.optim, lr)?;
        step_params(&mut self.ego.params, &eg, &mut self.ego_state, &self.cfg.optim, lr)?;
        self.depth.params.commit_batch_stats(&depth_stats)?;
        self.ego.params.commit_batch_stats(&ego_stats)?;
        self.steps += 1;
        Ok(StepStats { loss, reprojection, mask_fraction, intrinsics, translation })
    }

    /// One pass over `dataset` in seeded shuffled order.
    pub fn train_epoch(&mut self, dataset: &[ImageTriplet], epoch: usize) -> Result<EpochStats> {
        if dataset.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let lr = lr_schedule(epoch, &self.cfg.optim);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        if self.cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(epoch as u64));
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.optim.batch_size) {
            let batch: Vec<&ImageTriplet> = chunk.iter().map(|&i| &dataset[i]).collect();
            let stats = self.step(&batch, lr)?;
            debug!("epoch {epoch} step {} loss {:.6}", self.steps, stats.loss);
            sum += stats.loss;
            steps += 1;
        }
        Ok(EpochStats { epoch, mean_loss: sum / steps as f64, lr, steps })
    }

    /// Train for `cfg.optim.epochs` epochs, logging to `run` when given.
    pub fn fit(&mut self, dataset: &[ImageTriplet], run: Option<&RunDir>) -> Result<Vec<EpochStats>> {
        let mut history = Vec::with_capacity(self.cfg.optim.epochs);
        for epoch in 0..self.cfg.optim.epochs {
            let stats = self.train_epoch(dataset, epoch)?;
            info!("epoch {epoch}: mean loss {:.6}, lr {:e}", stats.mean_loss, stats.lr);
            if let Some(run) = run {
                run.log_epoch(&stats)?;
                run.save_checkpoint(&self.bundle(KeyValues::default()), epoch)?;
            }
            history.push(stats);
        }
        Ok(history)
    }

    pub fn bundle(&self, extra: KeyValues) -> ModelBundle {
        ModelBundle {
            depth: self.depth.clone(),
            ego: self.ego.clone(),
            learn_intrinsics: self.cfg.intrinsics == IntrinsicsMode::Learned,
            extra,
        }
    }

    /// Mean of the two pairwise intrinsics predictions for `t`, inference
    /// mode.
    pub fn predict_intrinsics(&self, t: &ImageTriplet) -> Result<[f64; 4]> {
        predict_intrinsics(&self.ego, t)
    }
}

/// Mean pairwise intrinsics prediction of `ego` for one triplet.
pub fn predict_intrinsics(ego: &EgoNet, t: &ImageTriplet) -> Result<[f64; 4]> {
    let g = Graph::new();
    let s = Session::eval(&g, &ego.params);
    let imgs = SampleImages::constants(&g, t);
    let target = add_batch_axis(&imgs.target)?;
    let mut pairs = Vec::new();
    if let Some(p) = imgs.prev {
        pairs.push(Tensor::concat(&[add_batch_axis(&p)?, target], 1)?);
    }
    if let Some(n) = imgs.next {
        pairs.push(Tensor::concat(&[target, add_batch_axis(&n)?], 1)?);
    }
    if pairs.is_empty() {
        return Err(Error::Data("triplet has no neighbouring frame".into()));
    }
    let out = ego.forward(&s, &Tensor::concat(&pairs, 0)?, true)?;
    let k = out.intrinsics.expect("requested").mean_axis(0)?.to_array();
    Ok([k.data()[0], k.data()[1], k.data()[2], k.data()[3]])
}

/// Run directory: `config.txt`, `metrics.csv` and per-epoch checkpoints.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    /// Create the directory, write the config snapshot and the metrics
    /// header.
    pub fn create(root: &Path, config: &KeyValues) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        config.save(&root.join("config.txt"))?;
        let metrics = root.join("metrics.csv");
        std::fs::write(&metrics, "epoch,mean_loss,lr\n").map_err(|e| Error::io(&metrics, e))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn log_epoch(&self, s: &EpochStats) -> Result<()> {
        let path = self.root.join("metrics.csv");
        let mut f = File::options().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{},{},{}", s.epoch, s.mean_loss, s.lr).map_err(|e| Error::io(&path, e))
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root.join(format!("epoch_{epoch:03}.sfmk"))
    }

    pub fn save_checkpoint(&self, bundle: &ModelBundle, epoch: usize) -> Result<PathBuf> {
        let path = self.checkpoint_path(epoch);
        bundle.save(&path)?;
        Ok(path)
    }
}
