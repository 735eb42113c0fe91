//! Two-stage training.
//!
//! Stage 1 fits `G` and `F` on the labelled source with a temperature
//! cross-entropy. Stage 2 runs `steps` rounds; each round pseudo-labels the
//! target against source prototypes, keeps the samples above the round's
//! threshold, re-initialises the global prototypes and then performs
//! `iters_per_step` mini-batch updates of
//!
//! ```text
//! L = L_c(T) + λ·L_d + γ·L_apa
//! ```
//!
//! where `G` receives the domain gradient reversed (`−λ`), `D` descends on
//! `L_d` itself, and `p` (hence lr, λ, γ) advances linearly over all stage-2
//! iterations.

mod config;
mod report;
mod schedule;

use log::warn;

use crate::apa::{init_global, local_alignment, ClassTrace, GlobalPrototypeState};
use crate::datasets::{batch_indices, BatchIter, DomainDataset, UnlabeledDataset};
use crate::ehts::{
    assign_pseudo_labels, compute_prototypes, select_all, select_easy, select_random,
    similarity_scores, threshold, PseudoLabeledSet, Provenance, SelectionAudit,
};
use crate::error::{Error, Result};
use crate::eval::{accuracy, pseudo_label_accuracy, random_selection_precision, target_accuracy, LabelOracle};
use crate::model::{grl_backward, Model, ModelSnapshot};
use crate::numerics::{domain_bce, temperature_cross_entropy, Matrix, Rng, Stream};

pub use config::{AlignmentMode, DomainLossTarget, SelectionPolicy, TrainConfig, Variant};
pub use report::{
    Accuracies, EpochRecord, IterationRecord, RunReport, StepRecord, TraceRecord, STEPS_HEADER,
};
pub use schedule::{lambda_gamma_schedule, lr_schedule, ramp, ProgressClock, Schedules};

/// How the domain term's gradients are routed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainGrad {
    /// Training: `G` receives `−λ·∂L_d/∂f` through the reversal layer and `D`
    /// receives the unscaled `∂L_d/∂θ_d`.
    Reversed,
    /// Plain descent on `λ·L_d` for every parameter, so the accumulated
    /// gradients are exactly `∂L/∂θ` of the composite loss (for
    /// finite-difference checks).
    Descent,
}

impl DomainGrad {
    fn discriminator_scale(self, lambda: f64) -> f64 {
        match self {
            DomainGrad::Reversed => 1.0,
            DomainGrad::Descent => lambda,
        }
    }
}

/// Which prototype alignment term is active.
pub enum Alignment<'a> {
    None,
    Global(&'a mut GlobalPrototypeState),
    Local { class_count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub temperature: f64,
    pub lambda: f64,
    pub gamma: f64,
}

/// Inputs of one composite-loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CompositeBatch<'a> {
    pub source_x: &'a Matrix,
    pub source_y: &'a [usize],
    /// Selected target rows and their pseudo-labels; may be empty.
    pub target_x: &'a Matrix,
    pub target_pseudo: &'a [usize],
    /// Target rows seen by the discriminator instead of `target_x`.
    pub domain_x: Option<&'a Matrix>,
}

#[derive(Debug, Clone)]
pub struct LossTerms {
    pub l_c: f64,
    pub l_d: f64,
    pub l_apa: f64,
    pub total: f64,
    pub trace: Vec<ClassTrace>,
}

/// Evaluates `L_c + λ·L_d + γ·L_apa` on one batch and accumulates its
/// gradients into `model` with a single backward pass through `G`. The
/// caller zeroes gradients beforehand.
///
/// With no target rows the domain and alignment terms are skipped and the
/// loss is the source cross-entropy alone.
pub fn total_loss(
    model: &mut Model,
    batch: &CompositeBatch<'_>,
    alignment: Alignment<'_>,
    w: LossWeights,
    mode: DomainGrad,
) -> Result<LossTerms> {
    let ns = batch.source_x.rows();
    let nt = batch.target_x.rows();
    if batch.source_y.len() != ns || batch.target_pseudo.len() != nt {
        return Err(Error::dim(
            "total_loss",
            format!("{ns} / {nt} labels"),
            format!("{} / {}", batch.source_y.len(), batch.target_pseudo.len()),
        ));
    }
    let has_target = nt > 0;
    let mut parts = vec![batch.source_x];
    if has_target {
        parts.push(batch.target_x);
        if let Some(d) = batch.domain_x {
            parts.push(d);
        }
    }
    let x = Matrix::vstack(&parts)?;
    let (feats, g_cache) = model.extractor.0.forward(&x)?;
    let fs = feats.slice_rows(0, ns);

    let (logits, f_cache) = model.classifier.net.forward(&fs)?;
    let (l_c, g_logits) = temperature_cross_entropy(&logits, batch.source_y, w.temperature)?;
    let g_fs = model.classifier.net.backward(&f_cache, &g_logits)?;
    let mut grad = Matrix::zeros(feats.rows(), feats.cols());
    add_rows(&mut grad, 0, &g_fs);

    let (mut l_d, mut l_apa, mut trace) = (0.0, 0.0, Vec::new());
    if has_target {
        let dom_start = if batch.domain_x.is_some() { ns + nt } else { ns };
        let ft_dom = feats.slice_rows(dom_start, feats.rows());
        let (ld, g_df) = domain_backward(model, &fs, &ft_dom, mode.discriminator_scale(w.lambda))?;
        l_d = ld;
        let g_dom = match mode {
            DomainGrad::Reversed => grl_backward(&g_df, w.lambda),
            DomainGrad::Descent => g_df.scale(w.lambda),
        };
        add_rows(&mut grad, 0, &g_dom.slice_rows(0, ns));
        add_rows(&mut grad, dom_start, &g_dom.slice_rows(ns, g_dom.rows()));

        let ft = feats.slice_rows(ns, ns + nt);
        let outcome = match alignment {
            Alignment::None => None,
            Alignment::Global(state) => {
                Some(state.advance(&fs, batch.source_y, &ft, batch.target_pseudo)?)
            }
            Alignment::Local { class_count } => Some(local_alignment(
                &fs,
                batch.source_y,
                &ft,
                batch.target_pseudo,
                class_count,
            )?),
        };
        if let Some(o) = outcome {
            l_apa = o.loss;
            add_rows(&mut grad, 0, &o.grad_source.scale(w.gamma));
            add_rows(&mut grad, ns, &o.grad_target.scale(w.gamma));
            trace = o.trace;
        }
    }

    let total = l_c + w.lambda * l_d + w.gamma * l_apa;
    if !total.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss: L_c={l_c} L_d={l_d} L_apa={l_apa} (λ={}, γ={})",
            w.lambda, w.gamma
        )));
    }
    model.extractor.0.backward(&g_cache, &grad)?;
    Ok(LossTerms {
        l_c,
        l_d,
        l_apa,
        total,
        trace,
    })
}

fn add_rows(dst: &mut Matrix, start: usize, src: &Matrix) {
    for r in 0..src.rows() {
        for (d, s) in dst.row_mut(start + r).iter_mut().zip(src.row(r)) {
            *d += s;
        }
    }
}

/// Discriminator pass over `[source; target]` features. Adds `scale·∂L_d/∂θ_d`
/// to `D`'s gradients and returns `L_d` with the unscaled `∂L_d/∂f`.
fn domain_backward(model: &mut Model, fs: &Matrix, ft: &Matrix, scale: f64) -> Result<(f64, Matrix)> {
    let df = Matrix::vstack(&[fs, ft])?;
    let (z, cache) = model.discriminator.0.forward(&df)?;
    let ns = fs.rows();
    let bce = domain_bce(&z.as_slice()[..ns], &z.as_slice()[ns..]);
    let mut g = bce.grad_source;
    g.extend(bce.grad_target);
    let g = Matrix::from_vec(df.rows(), 1, g)?;
    let mut scratch = model.discriminator.0.clone();
    scratch.layers.iter_mut().for_each(|p| p.zero_grad());
    let g_df = scratch.backward(&cache, &g)?;
    for (dst, src) in model.discriminator.0.layers.iter_mut().zip(&scratch.layers) {
        dst.grad_weight.add_assign(&src.grad_weight.scale(scale))?;
        for (d, s) in dst.grad_bias.iter_mut().zip(&src.grad_bias) {
            *d += scale * s;
        }
    }
    Ok((bce.loss, g_df))
}

/// Gradient of the domain term alone with respect to `G`'s parameters
/// (flattened), on a copy of `model`.
pub fn domain_extractor_gradient(
    model: &Model,
    source_x: &Matrix,
    target_x: &Matrix,
    lambda: f64,
    mode: DomainGrad,
) -> Result<Vec<f64>> {
    let mut m = model.clone();
    m.zero_grad();
    let x = Matrix::vstack(&[source_x, target_x])?;
    let (feats, cache) = m.extractor.0.forward(&x)?;
    let ns = source_x.rows();
    let (_, g_df) = domain_backward(
        &mut m,
        &feats.slice_rows(0, ns),
        &feats.slice_rows(ns, feats.rows()),
        mode.discriminator_scale(lambda),
    )?;
    let g = match mode {
        DomainGrad::Reversed => grl_backward(&g_df, lambda),
        DomainGrad::Descent => g_df.scale(lambda),
    };
    m.extractor.0.backward(&cache, &g)?;
    let n = m.extractor_param_count();
    let mut flat = m.flat_grads();
    flat.truncate(n);
    Ok(flat)
}

/// Per-step random stream; `slot` separates the consumers within one step.
fn step_rng(seed: u64, stream: Stream, m: u64, slot: u64) -> Rng {
    Rng::derive(seed, stream, (slot << 24) | m)
}

/// Index source for one side of stage-2 batches.
enum Sampler {
    Empty,
    WithReplacement { n: usize, k: usize, rng: Rng },
    Epochs(BatchIter),
}

impl Sampler {
    /// Draws with replacement when the pool is smaller than the number of
    /// samples the step will consume.
    fn new(n: usize, k: usize, draws: usize, rng: Rng) -> Self {
        if n == 0 {
            Sampler::Empty
        } else if n < draws * k {
            Sampler::WithReplacement { n, k, rng }
        } else {
            Sampler::Epochs(BatchIter::new(n, k, rng))
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        match self {
            Sampler::Empty => Vec::new(),
            Sampler::WithReplacement { n, k, rng } => (0..*k).map(|_| rng.below(*n)).collect(),
            Sampler::Epochs(it) => it.next().unwrap_or_default(),
        }
    }
}

/// Result of one stage-2 step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub snapshot: ModelSnapshot,
    pub record: StepRecord,
    pub iterations: Vec<IterationRecord>,
    pub audit: SelectionAudit,
    pub trace: Vec<TraceRecord>,
    pub selection: PseudoLabeledSet,
}

/// Runs both stages over one source/target pair.
pub struct Trainer<'a> {
    given: TrainConfig,
    cfg: TrainConfig,
    source: &'a DomainDataset,
    source_labels: &'a [usize],
    target: &'a UnlabeledDataset,
    oracle: Option<&'a LabelOracle>,
    dataset_tag: String,
}

impl<'a> Trainer<'a> {
    /// `oracle` is used for reporting target metrics only.
    pub fn new(
        cfg: &TrainConfig,
        source: &'a DomainDataset,
        target: &'a UnlabeledDataset,
        oracle: Option<&'a LabelOracle>,
    ) -> Result<Self> {
        cfg.validate()?;
        let source_labels = source.require_labels()?;
        if source.is_empty() {
            return Err(Error::Data("empty source domain".into()));
        }
        if source.input_dim() != target.input_dim() {
            return Err(Error::dim("Trainer::new", source.input_dim(), target.input_dim()));
        }
        if source.class_count != target.class_count {
            return Err(Error::Data(format!(
                "source has {} classes, target {}",
                source.class_count, target.class_count
            )));
        }
        if let Some(o) = oracle {
            if o.len() != target.len() {
                return Err(Error::dim("Trainer::new oracle", target.len(), o.len()));
            }
        }
        let resolved = cfg.resolved();
        resolved.model_config(source.input_dim(), source.class_count).validate()?;
        Ok(Trainer {
            given: cfg.clone(),
            cfg: resolved,
            source,
            source_labels,
            target,
            oracle,
            dataset_tag: String::new(),
        })
    }

    pub fn with_dataset_tag(mut self, tag: impl Into<String>) -> Self {
        self.dataset_tag = tag.into();
        self
    }

    /// The configuration after the variant toggle.
    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    fn class_count(&self) -> usize {
        self.source.class_count
    }

    pub fn init_model(&self) -> Result<Model> {
        let mc = self.cfg.model_config(self.source.input_dim(), self.class_count());
        Model::new(&mc, &mut Rng::derive(self.cfg.seed, Stream::Init, 0))
    }

    /// Stage 1: temperature cross-entropy on the source at a constant rate.
    pub fn pretrain_source(&self) -> Result<(ModelSnapshot, Vec<EpochRecord>)> {
        let cfg = &self.cfg;
        let mut model = self.init_model()?;
        let mut rng = Rng::derive(cfg.seed, Stream::Shuffle, 0);
        let empty = Matrix::zeros(0, self.source.input_dim());
        let weights = LossWeights {
            temperature: cfg.temperature,
            lambda: 0.0,
            gamma: 0.0,
        };
        let mut curve = Vec::with_capacity(cfg.pretrain_epochs);
        for epoch in 0..cfg.pretrain_epochs {
            let (mut sum, mut count) = (0.0, 0usize);
            for idx in batch_indices(self.source.len(), cfg.batch_size, &mut rng) {
                let xs = self.source.features.select_rows(&idx);
                let ys: Vec<usize> = idx.iter().map(|&i| self.source_labels[i]).collect();
                let batch = CompositeBatch {
                    source_x: &xs,
                    source_y: &ys,
                    target_x: &empty,
                    target_pseudo: &[],
                    domain_x: None,
                };
                model.zero_grad();
                let terms = total_loss(&mut model, &batch, Alignment::None, weights, DomainGrad::Reversed)?;
                model.sgd_step(cfg.pretrain_lr)?;
                sum += terms.l_c * idx.len() as f64;
                count += idx.len();
            }
            let logits = model.logits(&model.forward_features(&self.source.features)?)?;
            let (end_loss, _) = temperature_cross_entropy(&logits, self.source_labels, cfg.temperature)?;
            curve.push(EpochRecord {
                epoch,
                loss: sum / count as f64,
                end_loss,
            });
        }
        Ok((ModelSnapshot::new(0, model), curve))
    }

    pub fn accuracies(&self, model: &Model) -> Result<Accuracies> {
        Ok(Accuracies {
            source: accuracy(model, self.source)?,
            target: self
                .oracle
                .map(|o| target_accuracy(model, self.target, o))
                .transpose()?,
        })
    }

    /// Pseudo-labels for every target sample against the source prototypes of
    /// `model`, with their best cosine scores.
    pub fn pseudo_label(&self, model: &Model) -> Result<(Vec<usize>, Vec<f64>)> {
        let fs = model.forward_features(&self.source.features)?;
        let ft = model.forward_features(&self.target.features)?;
        let protos = compute_prototypes(&fs, self.source_labels, self.class_count(), Provenance::Source)?;
        assign_pseudo_labels(&similarity_scores(&ft, &protos)?)
    }

    /// Stage-2 step `m` (from 1), starting from `model_{m−1}`.
    pub fn adaptation_step(&self, m: u64, previous: &ModelSnapshot) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        if m == 0 {
            return Err(Error::Parameter("stage-2 steps count from 1".into()));
        }
        if previous.step != m - 1 {
            return Err(Error::Parameter(format!(
                "step {m} needs model_{}, got model_{}",
                m - 1,
                previous.step
            )));
        }
        let c = self.class_count();
        let mut model = previous.model.clone();
        if cfg.reset_momentum {
            model.reset_momentum();
        }

        // Selection.
        let fs_all = model.forward_features(&self.source.features)?;
        let ft_all = model.forward_features(&self.target.features)?;
        let protos = compute_prototypes(&fs_all, self.source_labels, c, Provenance::Source)?;
        let (pseudo, best) = assign_pseudo_labels(&similarity_scores(&ft_all, &protos)?)?;
        let tau = threshold(m - 1, cfg.mu);
        let easy = select_easy(&pseudo, &best, tau, m);
        let selection = match cfg.selection {
            SelectionPolicy::EasyToHard => easy,
            SelectionPolicy::Random => {
                let mut rng = step_rng(cfg.seed, Stream::Selection, m, 0);
                select_random(&pseudo, &best, easy.len(), &mut rng, m)
            }
            SelectionPolicy::All => select_all(&pseudo, &best, m),
        };
        let audit = SelectionAudit {
            step: m,
            tau,
            n_selected: selection.len(),
            class_counts: selection.class_counts(c),
            precision: match self.oracle {
                Some(o) => pseudo_label_accuracy(&selection, o)?,
                None => None,
            },
            random_precision: match self.oracle {
                Some(o) => {
                    let mut rng = step_rng(cfg.seed, Stream::Audit, m, 0);
                    random_selection_precision(&pseudo, selection.len(), o, &mut rng)?
                }
                None => None,
            },
        };
        if selection.is_empty() {
            warn!("step {m}: no target sample reached τ = {tau:.6}; source classification only");
        }

        let mut state = match cfg.alignment {
            AlignmentMode::Global => Some(init_global(
                &fs_all,
                self.source_labels,
                &ft_all.select_rows(&selection.indices),
                &selection.labels,
                c,
                cfg.rho_mode,
            )?),
            AlignmentMode::LocalOnly => None,
        };

        // Batches.
        let iters = cfg.iters_per_step;
        let mut source_batches = BatchIter::new(
            self.source.len(),
            cfg.source_half(),
            step_rng(cfg.seed, Stream::Shuffle, m, 0),
        );
        let mut target_draws = Sampler::new(
            selection.len(),
            cfg.target_half(),
            iters,
            step_rng(cfg.seed, Stream::Shuffle, m, 1),
        );
        let mut domain_draws = match cfg.domain_loss_target {
            DomainLossTarget::Full if !selection.is_empty() => Sampler::new(
                self.target.len(),
                cfg.target_half(),
                iters,
                step_rng(cfg.seed, Stream::Shuffle, m, 2),
            ),
            _ => Sampler::Empty,
        };

        let total = cfg.total_iterations();
        let mut iterations = Vec::with_capacity(iters);
        let mut trace = Vec::new();
        for i in 0..iters {
            let g = (m as usize - 1) * iters + i;
            let s = Schedules::at(ProgressClock::at(g, total), cfg);
            let si = source_batches.next().unwrap_or_default();
            let xs = self.source.features.select_rows(&si);
            let ys: Vec<usize> = si.iter().map(|&j| self.source_labels[j]).collect();
            let ti = target_draws.next_batch();
            let rows: Vec<usize> = ti.iter().map(|&j| selection.indices[j]).collect();
            let xt = self.target.features.select_rows(&rows);
            let yt: Vec<usize> = ti.iter().map(|&j| selection.labels[j]).collect();
            let di = domain_draws.next_batch();
            let xd = (!di.is_empty()).then(|| self.target.features.select_rows(&di));
            let batch = CompositeBatch {
                source_x: &xs,
                source_y: &ys,
                target_x: &xt,
                target_pseudo: &yt,
                domain_x: xd.as_ref(),
            };
            let alignment = match state.as_mut() {
                Some(st) => Alignment::Global(st),
                None => Alignment::Local { class_count: c },
            };
            let weights = LossWeights {
                temperature: cfg.temperature,
                lambda: s.lambda,
                gamma: s.gamma,
            };
            model.zero_grad();
            let terms = total_loss(&mut model, &batch, alignment, weights, DomainGrad::Reversed)
                .map_err(|e| annotate(e, m, g))?;
            model.sgd_step(s.lr).map_err(|e| annotate(e, m, g))?;
            iterations.push(IterationRecord {
                step: m,
                iter: g,
                p: s.p,
                lr: s.lr,
                lambda: s.lambda,
                gamma: s.gamma,
                l_c: terms.l_c,
                l_d: terms.l_d,
                l_apa: terms.l_apa,
                total: terms.total,
            });
            trace.extend(terms.trace.into_iter().map(|t| TraceRecord {
                step: m,
                iter: g,
                class: t.class,
                rho_source: t.rho_source,
                rho_target: t.rho_target,
                distance: t.distance,
            }));
        }

        let acc = self.accuracies(&model)?;
        let last = iterations.last().copied();
        let mean = |f: fn(&IterationRecord) -> f64| {
            iterations.iter().map(f).sum::<f64>() / iterations.len().max(1) as f64
        };
        let record = StepRecord {
            step: m,
            iter: m as usize * iters,
            p: last.map_or(0.0, |r| r.p),
            lr: last.map_or(cfg.lr0, |r| r.lr),
            lambda: last.map_or(0.0, |r| r.lambda),
            gamma: last.map_or(0.0, |r| r.gamma),
            l_c: mean(|r| r.l_c),
            l_d: mean(|r| r.l_d),
            l_apa: mean(|r| r.l_apa),
            tau,
            n_selected: selection.len(),
            source_acc: acc.source,
            target_acc: acc.target,
            pseudo_acc: audit.precision,
        };
        Ok(StepOutcome {
            snapshot: ModelSnapshot::new(m, model),
            record,
            iterations,
            audit,
            trace,
            selection,
        })
    }

    /// Stage 1 followed by every stage-2 step.
    pub fn run(&self) -> Result<RunReport> {
        let (initial, pretrain) = self.pretrain_source()?;
        self.run_from(initial, pretrain)
    }

    /// Every stage-2 step starting from a given `model_0`; `pretrain` is the
    /// stage-1 curve to carry into the report (may be empty).
    pub fn run_from(&self, initial: ModelSnapshot, pretrain: Vec<EpochRecord>) -> Result<RunReport> {
        if initial.step != 0 {
            return Err(Error::Parameter(format!(
                "stage 2 starts from model_0, got model_{}",
                initial.step
            )));
        }
        let expected = self.cfg.model_config(self.source.input_dim(), self.class_count());
        let mut found = initial.model.config();
        found.temperature = expected.temperature;
        if found != expected {
            return Err(Error::Snapshot(format!(
                "model_0 has architecture {found:?}, configuration asks for {expected:?}"
            )));
        }
        let source_only = self.accuracies(&initial.model)?;
        let mut report = RunReport {
            variant: self.given.variant,
            seed: self.cfg.seed,
            dataset: self.dataset_tag.clone(),
            config: self.given.clone(),
            pretrain,
            steps: Vec::new(),
            iterations: Vec::new(),
            audit: Vec::new(),
            trace: Vec::new(),
            source_only,
            final_accuracy: source_only,
            final_snapshot: initial.clone(),
            initial,
        };
        let mut current = report.initial.clone();
        for m in 1..=self.cfg.steps {
            let out = self.adaptation_step(m, &current)?;
            log::info!(
                "step {m}: selected {} (τ={:.4}), source acc {:.4}, target acc {:?}",
                out.record.n_selected,
                out.record.tau,
                out.record.source_acc,
                out.record.target_acc
            );
            report.steps.push(out.record);
            report.iterations.extend(out.iterations);
            report.audit.push(out.audit);
            report.trace.extend(out.trace);
            current = out.snapshot;
        }
        report.final_accuracy = self.accuracies(&current.model)?;
        report.final_snapshot = current;
        Ok(report)
    }
}

fn annotate(e: Error, m: u64, iter: usize) -> Error {
    match e {
        Error::Divergence(msg) => Error::Divergence(format!("step {m}, iteration {iter}: {msg}")),
        other => other,
    }
}

/// Convenience wrapper around [`Trainer::run`].
pub fn run(
    cfg: &TrainConfig,
    source: &DomainDataset,
    target: &UnlabeledDataset,
    oracle: Option<&LabelOracle>,
) -> Result<RunReport> {
    Trainer::new(cfg, source, target, oracle)?.run()
}
