//! The dual-network training core: saliency extraction, the inverted-saliency
//! loss, magnitude balancing, and the ERM / student-teacher loops.
//!
//! Per batch the student runs first: one train-mode forward yields both its
//! CE loss and the saliency target, the target is detached, and the student
//! steps.  The teacher then forwards on the same batch, its saliency is taken
//! with retained backward ops so the combined objective can differentiate
//! through it, and the teacher steps.  Nothing flows teacher → student.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, Retain, Tensor, TensorError};
use crate::data::{BatchStream, DataError, GroupedDataset};
use crate::nn::{BoundParams, ForwardPass, GradMap, Network, NnError, OptimSpec, Optimizer};
use crate::real::Real;
use crate::seeds;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("student saliency is still attached to the graph")]
    StudentOnGraph,
    #[error("activation tap widths differ: student {student}, teacher {teacher}")]
    TapWidth { student: usize, teacher: usize },
    #[error("loss diverged at epoch {epoch} step {step}: {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("eval hook: {0}")]
    Hook(String),
}

pub type Result<X> = std::result::Result<X, EngineError>;

/// How the model "output" is reduced to the scalar that gets differentiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scalarize {
    /// Sum over the batch of each sample's predicted-class logit.
    Predicted,
    /// Sum of all logits.
    SumAll,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SalMode {
    /// Gradient w.r.t. the input pixels.
    Input { scalarize: Scalarize },
    /// Gradient w.r.t. the flattened activation after the tagged layer;
    /// student and teacher tap widths must agree.
    Activation { tap: String, scalarize: Scalarize },
    /// E = A·Aᵀ of the flattened tap activation: b×b regardless of width,
    /// so architectures may differ.
    Gram { tap: String },
}

impl SalMode {
    fn tap(&self) -> Option<&str> {
        match self {
            SalMode::Input { .. } => None,
            SalMode::Activation { tap, .. } | SalMode::Gram { tap } => Some(tap),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Mse,
    L1,
}

#[derive(Clone, Debug)]
pub struct UleConfig {
    pub lambda: f64,
    pub distance: Distance,
    pub sal_mode: SalMode,
    /// Tap override for the student when architectures (and so tag names or
    /// widths) differ; `None` reuses the mode's tap.
    pub student_tap: Option<String>,
    pub optim: OptimSpec,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Run the eval hook every this many epochs (and always on the last);
    /// 0 = last epoch only.
    pub eval_every: usize,
    pub balancer_decay: f64,
    /// Abort when |total loss| exceeds this.
    pub max_loss: f64,
}

impl Default for UleConfig {
    fn default() -> Self {
        UleConfig {
            lambda: 0.5,
            distance: Distance::Mse,
            sal_mode: SalMode::Input {
                scalarize: Scalarize::Predicted,
            },
            student_tap: None,
            optim: OptimSpec::adam_default(),
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 1,
            batch_size: 32,
            seed: 0,
            eval_every: 1,
            balancer_decay: 0.99,
            max_loss: 1e6,
        }
    }
}

impl UleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(EngineError::BadConfig(format!(
                "lambda {} outside [0,1]",
                self.lambda
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(EngineError::BadConfig(format!("lr {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(EngineError::BadConfig(format!(
                "weight decay {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(EngineError::BadConfig("batch size 0".into()));
        }
        if !(0.0..1.0).contains(&self.balancer_decay) {
            return Err(EngineError::BadConfig(format!(
                "balancer decay {} outside [0,1)",
                self.balancer_decay
            )));
        }
        if !(self.max_loss.is_finite() && self.max_loss > 0.0) {
            return Err(EngineError::BadConfig(format!("max loss {}", self.max_loss)));
        }
        Ok(())
    }
}

/// Keeps the two loss terms on comparable scales: an EMA of each term's
/// magnitude, seeded with the first value it sees.  Magnitudes are clamped
/// away from zero so the scale factors stay finite.
#[derive(Clone, Debug)]
pub struct Balancer {
    m_ce: f64,
    m_sal: f64,
    seen_ce: bool,
    seen_sal: bool,
    decay: f64,
    frozen: bool,
}

impl Balancer {
    pub fn ema(decay: f64) -> Self {
        Balancer {
            m_ce: 1.0,
            m_sal: 1.0,
            seen_ce: false,
            seen_sal: false,
            decay,
            frozen: false,
        }
    }

    /// Both magnitudes pinned to 1: the combination reduces to the raw
    /// λ·ce + (1−λ)·sal.
    pub fn fixed() -> Self {
        Balancer {
            m_ce: 1.0,
            m_sal: 1.0,
            seen_ce: true,
            seen_sal: true,
            decay: 0.0,
            frozen: true,
        }
    }

    pub fn m_ce(&self) -> f64 {
        self.m_ce
    }

    pub fn m_sal(&self) -> f64 {
        self.m_sal
    }

    fn absorb(m: &mut f64, seen: &mut bool, decay: f64, v: f64) {
        let v = v.abs().max(1e-12);
        if *seen {
            *m = decay * *m + (1.0 - decay) * v;
        } else {
            *m = v;
            *seen = true;
        }
    }

    fn update_ce(&mut self, v: f64) {
        if !self.frozen {
            Self::absorb(&mut self.m_ce, &mut self.seen_ce, self.decay, v);
        }
    }

    fn update_sal(&mut self, v: f64) {
        if !self.frozen {
            Self::absorb(&mut self.m_sal, &mut self.seen_sal, self.decay, v);
        }
    }
}

/// Per-sample unit-max normalization: each row divided by max(max|row|, ε).
/// An all-zero row comes back unchanged.  Odd in its argument and invariant
/// to positive per-row scaling.
pub fn normalize_sal<T: Real>(g: &mut Graph<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    if z.rank() != 2 {
        return Err(TensorError::Invalid {
            op: "normalize_sal",
            msg: format!("want rank 2, got {:?}", z.shape()),
        }
        .into());
    }
    let cols = z.shape()[1];
    let m = g.row_max_abs(z)?;
    // max(m, ε) as ε + relu(m − ε): differentiable wherever it matters.
    let eps = Tensor::full(m.shape(), T::from_f64(1e-12));
    let shifted = g.sub(&m, &eps)?;
    let clipped = g.relu(&shifted)?;
    let denom = g.add(&clipped, &eps)?;
    let wide = g.row_broadcast(&denom, cols)?;
    Ok(g.div(z, &wide)?)
}

/// Eq-2 style distance between the inverted student saliency and the teacher
/// saliency, both unit-max normalized.  `g_s` must be detached — the teacher
/// objective must not reach the student.
pub fn ule_sal_loss<T: Real>(
    g: &mut Graph<T>,
    g_s: &Tensor<T>,
    g_t: &Tensor<T>,
    distance: Distance,
) -> Result<Tensor<T>> {
    if g_s.node_id().is_some() {
        return Err(EngineError::StudentOnGraph);
    }
    if g_s.shape() != g_t.shape() {
        return Err(TensorError::IncompatibleShapes {
            op: "ule_sal_loss",
            lhs: g_s.shape().to_vec(),
            rhs: g_t.shape().to_vec(),
        }
        .into());
    }
    // g_s is a constant, so this whole branch stays off the tape.
    let inv = g.neg(g_s)?;
    let ns = normalize_sal(g, &inv)?;
    let nt = normalize_sal(g, g_t)?;
    Ok(match distance {
        Distance::Mse => g.mse(&nt, &ns)?,
        Distance::L1 => g.mae(&nt, &ns)?,
    })
}

/// λ·ce/m_ce + (1−λ)·sal/m_sal, with the balancer absorbing the current raw
/// magnitudes first.  The endpoints drop the other term from the graph
/// entirely, which is what makes λ=1 reproduce ERM bit for bit.
pub fn ule_total_loss<T: Real>(
    g: &mut Graph<T>,
    ce: &Tensor<T>,
    sal: Option<&Tensor<T>>,
    lambda: f64,
    bal: &mut Balancer,
) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(EngineError::BadConfig(format!("lambda {lambda} outside [0,1]")));
    }
    bal.update_ce(ce.item().to_f64());
    if let Some(s) = sal {
        bal.update_sal(s.item().to_f64());
    }
    if lambda == 1.0 {
        return Ok(g.scalar_mul(ce, T::from_f64(1.0 / bal.m_ce()))?);
    }
    let s = sal.ok_or_else(|| {
        EngineError::BadConfig("lambda < 1 needs a saliency term".into())
    })?;
    let sal_term = g.scalar_mul(s, T::from_f64((1.0 - lambda) / bal.m_sal()))?;
    if lambda == 0.0 {
        return Ok(sal_term);
    }
    let ce_term = g.scalar_mul(ce, T::from_f64(lambda / bal.m_ce()))?;
    Ok(g.add(&ce_term, &sal_term)?)
}

fn score<T: Real>(
    g: &mut Graph<T>,
    logits: &Tensor<T>,
    scalarize: Scalarize,
) -> Result<Tensor<T>> {
    Ok(match scalarize {
        Scalarize::SumAll => g.sum(logits)?,
        Scalarize::Predicted => {
            // The class choice is data, not function: a constant selector.
            let picks = logits.argmax_rows();
            let (b, c) = (logits.shape()[0], logits.shape()[1]);
            let mut sel = vec![T::zero(); b * c];
            for (r, &cls) in picks.iter().enumerate() {
                sel[r * c + cls] = T::one();
            }
            let sel = Tensor::from_vec(&[b, c], sel)?;
            let picked = g.mul(logits, &sel)?;
            g.sum(&picked)?
        }
    })
}

/// Saliency in the mode's natural shape: input mode mirrors x, activation
/// mode is the (b, width) tap gradient, gram mode the b×b similarity matrix.
fn extract_sal<T: Real>(
    g: &mut Graph<T>,
    mode: &SalMode,
    fwd: &ForwardPass<T>,
    xv: Option<&Tensor<T>>,
    retain: Retain,
) -> Result<Tensor<T>> {
    match mode {
        SalMode::Input { scalarize } => {
            let xv = xv.ok_or_else(|| {
                EngineError::BadConfig("input-mode saliency needs a watched input".into())
            })?;
            let s = score(g, &fwd.logits, *scalarize)?;
            Ok(g.grad(&s, &[xv], retain)?.remove(0))
        }
        SalMode::Activation { scalarize, .. } => {
            let tap = fwd
                .tap
                .as_ref()
                .ok_or_else(|| EngineError::BadConfig("no tap captured".into()))?;
            let s = score(g, &fwd.logits, *scalarize)?;
            Ok(g.grad(&s, &[tap], retain)?.remove(0))
        }
        SalMode::Gram { .. } => {
            let tap = fwd
                .tap
                .as_ref()
                .ok_or_else(|| EngineError::BadConfig("no tap captured".into()))?;
            Ok(g.matmul_bt(tap, tap)?)
        }
    }
}

/// Rank-2 view the loss compares: samples stay rows; a gram matrix becomes a
/// single globally-normalized row.
fn flatten_for_loss<T: Real>(
    g: &mut Graph<T>,
    mode: &SalMode,
    sal: &Tensor<T>,
) -> Result<Tensor<T>> {
    let out = match mode {
        SalMode::Input { .. } => {
            let b = sal.shape()[0];
            let d = sal.numel() / b;
            g.reshape(sal, vec![b, d])?
        }
        SalMode::Activation { .. } => sal.clone(),
        SalMode::Gram { .. } => g.reshape(sal, vec![1, sal.numel()])?,
    };
    Ok(out)
}

/// Standalone saliency of a frozen net on one batch: eval-mode forward with
/// parameters as constants.  `retain` only matters if the caller keeps
/// differentiating on a shared graph; here the graph is private.
pub fn saliency<T: Real>(
    net: &Network<T>,
    x: &Tensor<T>,
    mode: &SalMode,
    retain: Retain,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let xv = g.var(x);
    let fwd = net.forward(&mut g, &xv, &BoundParams::none(), false, None, mode.tap())?;
    extract_sal(&mut g, mode, &fwd, Some(&xv), retain)
}

/// Top-left rows×cols window used to quantify how much saliency sits on a
/// planted shortcut.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub rows: usize,
    pub cols: usize,
}

/// Mean over the batch of (Σ|g| inside the patch) / (Σ|g| over the image),
/// channels pooled.  A zero-saliency sample contributes 0.
pub fn corner_saliency_mass<T: Real>(
    net: &Network<T>,
    x: &Tensor<T>,
    patch: &PatchSpec,
    scalarize: Scalarize,
) -> Result<f64> {
    let sal = saliency(net, x, &SalMode::Input { scalarize }, Retain::No)?;
    if sal.rank() != 4 {
        return Err(EngineError::BadConfig(format!(
            "corner mass needs image input, got {:?}",
            sal.shape()
        )));
    }
    let (b, c, h, w) = (
        sal.shape()[0],
        sal.shape()[1],
        sal.shape()[2],
        sal.shape()[3],
    );
    if patch.rows > h || patch.cols > w || patch.rows * patch.cols == 0 {
        return Err(EngineError::BadConfig(format!(
            "patch {}x{} outside image {}x{}",
            patch.rows, patch.cols, h, w
        )));
    }
    let data = sal.data();
    let mut acc = 0.0;
    for s in 0..b {
        let mut inside = 0.0;
        let mut total = 0.0;
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let v = data[((s * c + ch) * h + i) * w + j].to_f64().abs();
                    total += v;
                    if i < patch.rows && j < patch.cols {
                        inside += v;
                    }
                }
            }
        }
        if total > 0.0 {
            acc += inside / total;
        }
    }
    Ok(acc / b as f64)
}

/// Per-epoch batch means of the raw losses plus the balancer state at epoch
/// end.  ERM reports the trained net under `teacher_ce` and zeros elsewhere.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub student_ce: f64,
    pub teacher_ce: f64,
    pub sal: f64,
    pub total: f64,
    pub m_ce: f64,
    pub m_sal: f64,
}

#[derive(Default)]
struct StatAcc {
    student_ce: f64,
    teacher_ce: f64,
    sal: f64,
    total: f64,
    n: usize,
}

impl StatAcc {
    fn finish(&self, epoch: usize, bal: &Balancer) -> EpochStats {
        let n = self.n.max(1) as f64;
        EpochStats {
            epoch,
            student_ce: self.student_ce / n,
            teacher_ce: self.teacher_ce / n,
            sal: self.sal / n,
            total: self.total / n,
            m_ce: bal.m_ce(),
            m_sal: bal.m_sal(),
        }
    }
}

fn should_eval(epoch: usize, cfg: &UleConfig) -> bool {
    epoch == cfg.epochs || (cfg.eval_every > 0 && epoch % cfg.eval_every == 0)
}

fn guard<T: Real>(total: &Tensor<T>, epoch: usize, step: usize, cfg: &UleConfig) -> Result<f64> {
    let v = total.item().to_f64();
    if !v.is_finite() || v.abs() > cfg.max_loss {
        return Err(EngineError::Diverged {
            epoch,
            step,
            loss: v,
        });
    }
    Ok(v)
}

fn apply_step<T: Real>(
    g: &mut Graph<T>,
    net: &mut Network<T>,
    bound: &BoundParams<T>,
    total: &Tensor<T>,
    opt: &mut Optimizer<T>,
) -> Result<()> {
    let views = bound.tensors();
    let grads = g.grad(total, &views, Retain::No)?;
    let pairs = bound
        .names()
        .map(String::from)
        .zip(grads)
        .collect::<Vec<_>>();
    opt.step(net.params_mut(), &GradMap::from_pairs(pairs))?;
    Ok(())
}

/// Flattened tap width found by a throwaway constant forward.
fn tap_width<T: Real>(net: &Network<T>, tap: &str) -> Result<usize> {
    let mut g = Graph::new();
    let mut shape = vec![1];
    shape.extend_from_slice(net.input_shape());
    let x = Tensor::<T>::zeros(shape);
    let fwd = net.forward(&mut g, &x, &BoundParams::none(), false, None, Some(tap))?;
    Ok(fwd.tap.expect("tap requested").shape()[1])
}

/// Plain CE minimization sharing the teacher's RNG stream and loss assembly,
/// so a λ=1 dual run reproduces it exactly.
pub fn train_erm<T: Real>(
    net: &mut Network<T>,
    data: &GroupedDataset<T>,
    cfg: &UleConfig,
    mut on_eval: impl FnMut(&EpochStats, &Network<T>) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(EngineError::BadConfig("empty training set".into()));
    }
    let n_classes = data.n_classes();
    let mut stream = BatchStream::new(
        data.len(),
        cfg.batch_size,
        seeds::derive(cfg.seed, &[seeds::STREAM_DATA]),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[seeds::STREAM_TEACHER]));
    let mut opt = Optimizer::new(cfg.optim.clone(), cfg.lr, cfg.weight_decay);
    let mut bal = Balancer::ema(cfg.balancer_decay);
    let mut trace = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut acc = StatAcc::default();
        for (step, idx) in stream.next_epoch().iter().enumerate() {
            let (x, y, _) = data.gather(idx)?;
            let targets = GroupedDataset::one_hot(&y, n_classes);
            let mut g = Graph::new();
            let bound = net.bind(&mut g);
            let fwd = net.forward(&mut g, &x, &bound, true, Some(&mut rng), None)?;
            let ce = g.cross_entropy(&fwd.logits, &targets)?;
            let total = ule_total_loss(&mut g, &ce, None, 1.0, &mut bal)?;
            acc.teacher_ce += ce.item().to_f64();
            acc.total += guard(&total, epoch, step, cfg)?;
            acc.n += 1;
            apply_step(&mut g, net, &bound, &total, &mut opt)?;
        }
        let stats = acc.finish(epoch, &bal);
        if should_eval(epoch, cfg) {
            on_eval(&stats, net)?;
        }
        trace.push(stats);
    }
    Ok(trace)
}

/// The dual loop.  Student and teacher walk identical batches; the student's
/// inverted, detached saliency is the teacher's target for this step.
pub fn train_ule<T: Real>(
    student: &mut Network<T>,
    teacher: &mut Network<T>,
    data: &GroupedDataset<T>,
    cfg: &UleConfig,
    mut on_eval: impl FnMut(&EpochStats, &Network<T>, &Network<T>) -> Result<()>,
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if data.len() == 0 {
        return Err(EngineError::BadConfig("empty training set".into()));
    }
    if student.input_shape() != teacher.input_shape() {
        return Err(EngineError::BadConfig(format!(
            "input shapes differ: student {:?}, teacher {:?}",
            student.input_shape(),
            teacher.input_shape()
        )));
    }
    let teacher_tap = cfg.sal_mode.tap().map(String::from);
    let student_tap = cfg
        .student_tap
        .clone()
        .or_else(|| teacher_tap.clone());
    if let SalMode::Activation { .. } = cfg.sal_mode {
        let st = student_tap.as_deref().expect("activation mode has a tap");
        let tt = teacher_tap.as_deref().expect("activation mode has a tap");
        let ws = tap_width(student, st)?;
        let wt = tap_width(teacher, tt)?;
        if ws != wt {
            return Err(EngineError::TapWidth {
                student: ws,
                teacher: wt,
            });
        }
    }
    // λ=1 never consumes the saliency branch: skip building it so the teacher
    // path is the ERM path.
    let needs_sal = cfg.lambda < 1.0;

    let n_classes = data.n_classes();
    let mut stream = BatchStream::new(
        data.len(),
        cfg.batch_size,
        seeds::derive(cfg.seed, &[seeds::STREAM_DATA]),
    )?;
    let mut s_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[seeds::STREAM_STUDENT]));
    let mut t_rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, &[seeds::STREAM_TEACHER]));
    let mut s_opt = Optimizer::new(cfg.optim.clone(), cfg.lr, cfg.weight_decay);
    let mut t_opt = Optimizer::new(cfg.optim.clone(), cfg.lr, cfg.weight_decay);
    let mut s_bal = Balancer::ema(cfg.balancer_decay);
    let mut t_bal = Balancer::ema(cfg.balancer_decay);
    let mut trace = Vec::new();

    for epoch in 1..=cfg.epochs {
        let mut acc = StatAcc::default();
        for (step, idx) in stream.next_epoch().iter().enumerate() {
            let (x, y, _) = data.gather(idx)?;
            let targets = GroupedDataset::one_hot(&y, n_classes);

            // Student: CE step plus the saliency target from its pre-step
            // weights.  Its objective is pure CE — the teacher cannot reach it.
            let g_s = {
                let mut g = Graph::new();
                let xv = g.var(&x);
                let bound = student.bind(&mut g);
                let fwd = student.forward(
                    &mut g,
                    &xv,
                    &bound,
                    true,
                    Some(&mut s_rng),
                    student_tap.as_deref(),
                )?;
                let ce = g.cross_entropy(&fwd.logits, &targets)?;
                let target = if needs_sal {
                    let raw = extract_sal(&mut g, &cfg.sal_mode, &fwd, Some(&xv), Retain::No)?;
                    let flat = flatten_for_loss(&mut g, &cfg.sal_mode, &raw)?;
                    Some(flat.detach())
                } else {
                    None
                };
                let total = ule_total_loss(&mut g, &ce, None, 1.0, &mut s_bal)?;
                acc.student_ce += ce.item().to_f64();
                guard(&total, epoch, step, cfg)?;
                apply_step(&mut g, student, &bound, &total, &mut s_opt)?;
                target
            };

            // Teacher: same batch, own RNG stream; saliency retained so the
            // combined objective differentiates through it.
            {
                let mut g = Graph::new();
                let bound = teacher.bind(&mut g);
                let watch_input = needs_sal && matches!(cfg.sal_mode, SalMode::Input { .. });
                let xin = if watch_input { g.var(&x) } else { x.clone() };
                let fwd = teacher.forward(
                    &mut g,
                    &xin,
                    &bound,
                    true,
                    Some(&mut t_rng),
                    if needs_sal { teacher_tap.as_deref() } else { None },
                )?;
                let ce = g.cross_entropy(&fwd.logits, &targets)?;
                let sal_loss = if needs_sal {
                    let raw = extract_sal(&mut g, &cfg.sal_mode, &fwd, Some(&xin), Retain::Yes)?;
                    let flat = flatten_for_loss(&mut g, &cfg.sal_mode, &raw)?;
                    let target = g_s.as_ref().expect("student target exists");
                    Some(ule_sal_loss(&mut g, target, &flat, cfg.distance)?)
                } else {
                    None
                };
                let total = ule_total_loss(&mut g, &ce, sal_loss.as_ref(), cfg.lambda, &mut t_bal)?;
                acc.teacher_ce += ce.item().to_f64();
                if let Some(s) = &sal_loss {
                    acc.sal += s.item().to_f64();
                }
                acc.total += guard(&total, epoch, step, cfg)?;
                acc.n += 1;
                apply_step(&mut g, teacher, &bound, &total, &mut t_opt)?;
            }
        }
        let stats = acc.finish(epoch, &t_bal);
        if should_eval(epoch, cfg) {
            on_eval(&stats, student, teacher)?;
        }
        trace.push(stats);
    }
    Ok(trace)
}
