//! Adaptive alignment of per-class global prototypes.
//!
//! Each step starts from global prototypes computed over the whole source set
//! and the selected target set. Every iteration then folds the mini-batch's
//! local prototypes into a running mean per class,
//!
//! ```text
//! c̄(I) = ((I − 1)·c̄(I−1) + c_local(I)) / I
//! ```
//!
//! and moves the global prototype toward that mean by the squared cosine
//! agreement between the two:
//!
//! ```text
//! ρ = cos(c̄(I), c(I−1))
//! c(I) = ρ²·c̄(I) + (1 − ρ²)·c(I−1)
//! ```
//!
//! A mean that has drifted away from the previous global (for instance because
//! of a few wrong pseudo-labels) therefore moves it only a little. The
//! alignment loss is `Σ_k ‖c_k^S − c_k^T‖²` over classes present in both
//! domains.
//!
//! Gradients reach the embeddings only through the current batch's local
//! prototypes; the running history and the previous globals are constants.
//! The derivative through `ρ` is included.

use serde::{Deserialize, Serialize};

use crate::ehts::{compute_prototypes, PrototypeSet, Provenance};
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix, NORM_EPS};

/// Whether the blend weight is computed per class or once over all classes
/// updated in an iteration (their prototypes concatenated).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RhoMode {
    #[default]
    PerClass,
    Shared,
}

/// Global and accumulated prototypes for one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SidePrototypes {
    pub global: PrototypeSet,
    pub accumulated: Matrix,
    /// Local prototypes folded into `accumulated`, per class.
    pub history: Vec<usize>,
}

impl SidePrototypes {
    fn new(global: PrototypeSet) -> Self {
        let (c, d) = global.centroids.shape();
        SidePrototypes {
            history: vec![0; c],
            accumulated: Matrix::zeros(c, d),
            global,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalPrototypeState {
    pub source: SidePrototypes,
    pub target: SidePrototypes,
    /// False when no target sample was selected; alignment is skipped.
    pub active: bool,
    pub rho_mode: RhoMode,
    /// Iterations run in the current step.
    pub iteration: usize,
}

/// Starting point of a step: source globals over every source embedding
/// (true labels), target globals over the selected target embeddings
/// (pseudo-labels).
pub fn init_global(
    source_features: &Matrix,
    source_labels: &[usize],
    target_features: &Matrix,
    pseudo_labels: &[usize],
    class_count: usize,
    rho_mode: RhoMode,
) -> Result<GlobalPrototypeState> {
    let s = compute_prototypes(source_features, source_labels, class_count, Provenance::Source)?;
    let t = compute_prototypes(target_features, pseudo_labels, class_count, Provenance::TargetGlobal)?;
    Ok(GlobalPrototypeState {
        active: !pseudo_labels.is_empty(),
        source: SidePrototypes::new(s),
        target: SidePrototypes::new(t),
        rho_mode,
        iteration: 0,
    })
}

/// Running mean after folding the `I`-th local prototype in (`I = count_before + 1`).
pub fn update_accumulated(previous: &[f64], count_before: usize, local: &[f64]) -> Vec<f64> {
    let i = (count_before + 1) as f64;
    let w = count_before as f64;
    previous
        .iter()
        .zip(local)
        .map(|(&p, &l)| (w * p + l) / i)
        .collect()
}

/// `ρ = cos(accumulated, previous)`; returns `(ρ²·accumulated + (1 − ρ²)·previous, ρ)`.
pub fn adapt_global(accumulated: &[f64], previous: &[f64]) -> (Vec<f64>, f64) {
    let rho = cos_guarded(accumulated, previous);
    let r2 = rho * rho;
    let out = accumulated
        .iter()
        .zip(previous)
        .map(|(&a, &p)| p + r2 * (a - p))
        .collect();
    (out, rho)
}

fn cos_guarded(u: &[f64], v: &[f64]) -> f64 {
    dot(u, v) / ((norm(u) + NORM_EPS) * (norm(v) + NORM_EPS))
}

/// Gradient of a loss with respect to the accumulated prototype `u`, given its
/// gradient `g` with respect to the blended output and the constant previous
/// global `v`.
fn blend_backward(u: &[f64], v: &[f64], rho: f64, g: &[f64]) -> Vec<f64> {
    let nu = norm(u);
    let (a, b) = (nu + NORM_EPS, norm(v) + NORM_EPS);
    let uv = dot(u, v);
    let g_dot_diff: f64 = g.iter().zip(u.iter().zip(v)).map(|(gi, (ui, vi))| gi * (ui - vi)).sum();
    let coef = 2.0 * rho * g_dot_diff;
    let r2 = rho * rho;
    u.iter()
        .zip(v)
        .zip(g)
        .map(|((&ui, &vi), &gi)| {
            let unit = if nu > 0.0 { ui / nu } else { 0.0 };
            let drho = vi / (a * b) - uv / (a * a * b) * unit;
            r2 * gi + coef * drho
        })
        .collect()
}

/// Per-class bookkeeping from one side's update in an iteration.
#[derive(Debug, Clone)]
struct SideUpdate {
    /// Classes whose running mean and global moved this iteration.
    updated: Vec<usize>,
    local_counts: Vec<usize>,
    /// Accumulated prototypes before the blend (the `u` of the blend).
    accumulated: Vec<Vec<f64>>,
    /// Globals before the blend (the constant `v`).
    previous: Vec<Vec<f64>>,
    /// Blend weight per updated class (same value for all under `Shared`).
    rho: Vec<f64>,
}

fn advance_side(
    side: &mut SidePrototypes,
    features: &Matrix,
    labels: &[usize],
    mode: RhoMode,
) -> Result<SideUpdate> {
    let c = side.global.class_count();
    let local = compute_prototypes(features, labels, c, Provenance::LocalBatch)?;
    let updated: Vec<usize> = (0..c)
        .filter(|&k| local.is_valid(k) && side.global.is_valid(k))
        .collect();
    let mut accumulated = Vec::with_capacity(updated.len());
    let mut previous = Vec::with_capacity(updated.len());
    for &k in &updated {
        let acc = update_accumulated(side.accumulated.row(k), side.history[k], local.centroids.row(k));
        side.accumulated.row_mut(k).copy_from_slice(&acc);
        side.history[k] += 1;
        accumulated.push(acc);
        previous.push(side.global.centroids.row(k).to_vec());
    }
    let rho = match mode {
        RhoMode::PerClass => accumulated
            .iter()
            .zip(&previous)
            .map(|(u, v)| cos_guarded(u, v))
            .collect(),
        RhoMode::Shared => {
            let r = cos_guarded(&accumulated.concat(), &previous.concat());
            vec![r; updated.len()]
        }
    };
    for (i, &k) in updated.iter().enumerate() {
        let r2 = rho[i] * rho[i];
        let row = side.global.centroids.row_mut(k);
        for ((g, &a), &p) in row.iter_mut().zip(&accumulated[i]).zip(&previous[i]) {
            *g = p + r2 * (a - p);
        }
    }
    Ok(SideUpdate {
        updated,
        local_counts: local.counts,
        accumulated,
        previous,
        rho,
    })
}

/// Back-propagates `grad_global` (per class, w.r.t. the blended globals) to the
/// rows of the batch that produced the side update.
fn side_backward(
    update: &SideUpdate,
    side: &SidePrototypes,
    grad_global: &Matrix,
    labels: &[usize],
    mode: RhoMode,
    dim: usize,
) -> Matrix {
    let mut grad_local = Matrix::zeros(grad_global.rows(), dim);
    let grad_acc: Vec<Vec<f64>> = match mode {
        RhoMode::PerClass => update
            .updated
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                blend_backward(&update.accumulated[i], &update.previous[i], update.rho[i], grad_global.row(k))
            })
            .collect(),
        RhoMode::Shared => {
            let g: Vec<f64> = update.updated.iter().flat_map(|&k| grad_global.row(k).to_vec()).collect();
            let rho = update.rho.first().copied().unwrap_or(0.0);
            let flat = blend_backward(&update.accumulated.concat(), &update.previous.concat(), rho, &g);
            flat.chunks(dim).map(<[f64]>::to_vec).collect()
        }
    };
    for (i, &k) in update.updated.iter().enumerate() {
        // c̄ = (I−1)/I·c̄_prev + 1/I·local, with I the history after the update.
        let inv_i = 1.0 / side.history[k] as f64;
        for (gl, ga) in grad_local.row_mut(k).iter_mut().zip(&grad_acc[i]) {
            *gl = ga * inv_i;
        }
    }
    let mut grad_rows = Matrix::zeros(labels.len(), dim);
    for (r, &y) in labels.iter().enumerate() {
        let n = update.local_counts[y];
        if n == 0 || !update.updated.contains(&y) {
            continue;
        }
        let inv_n = 1.0 / n as f64;
        for (g, gl) in grad_rows.row_mut(r).iter_mut().zip(grad_local.row(y)) {
            *g = gl * inv_n;
        }
    }
    grad_rows
}

/// Per-class trace values after an iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTrace {
    pub class: usize,
    pub rho_source: Option<f64>,
    pub rho_target: Option<f64>,
    /// `‖c^S − c^T‖` after the update, when both globals exist.
    pub distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ApaOutcome {
    pub loss: f64,
    /// d loss / d source-batch embeddings.
    pub grad_source: Matrix,
    /// d loss / d target-batch embeddings.
    pub grad_target: Matrix,
    pub trace: Vec<ClassTrace>,
}

impl GlobalPrototypeState {
    pub fn class_count(&self) -> usize {
        self.source.global.class_count()
    }

    /// Classes contributing to the loss.
    pub fn active_classes(&self) -> Vec<usize> {
        if !self.active {
            return Vec::new();
        }
        (0..self.class_count())
            .filter(|&k| self.source.global.is_valid(k) && self.target.global.is_valid(k))
            .collect()
    }

    /// `Σ_k ‖c_k^S − c_k^T‖²` over active classes.
    pub fn loss(&self) -> f64 {
        self.active_classes()
            .into_iter()
            .map(|k| {
                self.source
                    .global
                    .centroids
                    .row(k)
                    .iter()
                    .zip(self.target.global.centroids.row(k))
                    .map(|(s, t)| (s - t) * (s - t))
                    .sum::<f64>()
            })
            .sum()
    }

    /// One iteration: fold the batch's local prototypes into the running means,
    /// blend the globals, and return the alignment loss with its gradient with
    /// respect to the batch embeddings.
    pub fn advance(
        &mut self,
        source_features: &Matrix,
        source_labels: &[usize],
        target_features: &Matrix,
        target_labels: &[usize],
    ) -> Result<ApaOutcome> {
        let dim = self.source.global.dim();
        if source_features.cols() != dim || target_features.cols() != dim {
            return Err(Error::dim(
                "GlobalPrototypeState::advance",
                dim,
                format!("{} / {}", source_features.cols(), target_features.cols()),
            ));
        }
        if !self.active {
            return Ok(ApaOutcome {
                loss: 0.0,
                grad_source: Matrix::zeros(source_features.rows(), dim),
                grad_target: Matrix::zeros(target_features.rows(), dim),
                trace: Vec::new(),
            });
        }
        self.iteration += 1;
        let su = advance_side(&mut self.source, source_features, source_labels, self.rho_mode)?;
        let tu = advance_side(&mut self.target, target_features, target_labels, self.rho_mode)?;

        let c = self.class_count();
        let mut g_s = Matrix::zeros(c, dim);
        let mut g_t = Matrix::zeros(c, dim);
        let mut loss = 0.0;
        let active = self.active_classes();
        for &k in &active {
            let (cs, ct) = (self.source.global.centroids.row(k), self.target.global.centroids.row(k));
            for j in 0..dim {
                let d = cs[j] - ct[j];
                loss += d * d;
                g_s.set(k, j, 2.0 * d);
                g_t.set(k, j, -2.0 * d);
            }
        }
        let grad_source = side_backward(&su, &self.source, &g_s, source_labels, self.rho_mode, dim);
        let grad_target = side_backward(&tu, &self.target, &g_t, target_labels, self.rho_mode, dim);

        let rho_of = |u: &SideUpdate, k: usize| u.updated.iter().position(|&x| x == k).map(|i| u.rho[i]);
        let trace = (0..c)
            .map(|k| ClassTrace {
                class: k,
                rho_source: rho_of(&su, k),
                rho_target: rho_of(&tu, k),
                distance: active.contains(&k).then(|| {
                    let d: f64 = self
                        .source
                        .global
                        .centroids
                        .row(k)
                        .iter()
                        .zip(self.target.global.centroids.row(k))
                        .map(|(s, t)| (s - t) * (s - t))
                        .sum();
                    d.sqrt()
                }),
            })
            .collect();
        Ok(ApaOutcome {
            loss,
            grad_source,
            grad_target,
            trace,
        })
    }
}

/// Alignment of the batch's own local prototypes only (no globals, no
/// history): `Σ_k ‖l_k^S − l_k^T‖²` over classes present in both batches.
pub fn local_alignment(
    source_features: &Matrix,
    source_labels: &[usize],
    target_features: &Matrix,
    target_labels: &[usize],
    class_count: usize,
) -> Result<ApaOutcome> {
    let ls = compute_prototypes(source_features, source_labels, class_count, Provenance::LocalBatch)?;
    let lt = compute_prototypes(target_features, target_labels, class_count, Provenance::LocalBatch)?;
    let dim = source_features.cols();
    let mut loss = 0.0;
    let mut diff = Matrix::zeros(class_count, dim);
    let mut trace = Vec::new();
    for k in 0..class_count {
        if !(ls.is_valid(k) && lt.is_valid(k)) {
            continue;
        }
        let mut d2 = 0.0;
        for j in 0..dim {
            let d = ls.centroids.get(k, j) - lt.centroids.get(k, j);
            d2 += d * d;
            diff.set(k, j, d);
        }
        loss += d2;
        trace.push(ClassTrace {
            class: k,
            rho_source: None,
            rho_target: None,
            distance: Some(d2.sqrt()),
        });
    }
    let rows = |labels: &[usize], counts: &[usize], sign: f64| {
        let mut g = Matrix::zeros(labels.len(), dim);
        for (r, &y) in labels.iter().enumerate() {
            if !(ls.is_valid(y) && lt.is_valid(y)) {
                continue;
            }
            let s = sign * 2.0 / counts[y] as f64;
            for (gi, di) in g.row_mut(r).iter_mut().zip(diff.row(y)) {
                *gi = s * di;
            }
        }
        g
    };
    Ok(ApaOutcome {
        loss,
        grad_source: rows(source_labels, &ls.counts, 1.0),
        grad_target: rows(target_labels, &lt.counts, -1.0),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, Rng};

    fn rand_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn accumulated_mean_small_cases() {
        let a = update_accumulated(&[0.0, 0.0], 0, &[1.0, 0.0]);
        assert_eq!(a, vec![1.0, 0.0]);
        let b = update_accumulated(&a, 1, &[0.0, 1.0]);
        assert_eq!(b, vec![0.5, 0.5]);
    }

    #[test]
    fn blend_fixed_point_orthogonal_and_hand_case() {
        let (c, rho) = adapt_global(&[2.0, 1.0], &[2.0, 1.0]);
        assert!((rho - 1.0).abs() < 1e-11);
        assert_eq!(c, vec![2.0, 1.0]);

        let (c, rho) = adapt_global(&[0.0, 3.0], &[1.0, 0.0]);
        assert_eq!(rho, 0.0);
        assert_eq!(c, vec![1.0, 0.0]);

        let (c, rho) = adapt_global(&[1.0, 1.0], &[1.0, 0.0]);
        assert!((rho * rho - 0.5).abs() < 1e-11);
        assert!((c[0] - 1.0).abs() < 1e-11 && (c[1] - 0.5).abs() < 1e-11);
    }

    #[test]
    fn init_marks_missing_classes_and_inactive() {
        let sf = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let tf = Matrix::from_rows(&[[2.0, 0.0]]).unwrap();
        let st = init_global(&sf, &[0, 1, 2], &tf, &[0], 3, RhoMode::PerClass).unwrap();
        assert!(st.active);
        assert_eq!(st.target.global.centroid(0).unwrap(), &[2.0, 0.0]);
        assert!(!st.target.global.is_valid(1));
        assert_eq!(st.active_classes(), vec![0]);
        assert_eq!(st.loss(), 1.0);

        let none = init_global(&sf, &[0, 1, 2], &Matrix::zeros(0, 2), &[], 3, RhoMode::PerClass).unwrap();
        assert!(!none.active);
        assert_eq!(none.loss(), 0.0);
    }

    #[test]
    fn identical_globals_zero_loss_zero_gradient() {
        let f = Matrix::from_rows(&[[1.0, 2.0], [3.0, 1.0]]).unwrap();
        let mut st = init_global(&f, &[0, 1], &f, &[0, 1], 2, RhoMode::PerClass).unwrap();
        assert_eq!(st.loss(), 0.0);
        let out = st.advance(&f, &[0, 1], &f, &[0, 1]).unwrap();
        assert!(out.loss.abs() < 1e-24);
        assert!(out.grad_source.as_slice().iter().all(|g| g.abs() < 1e-12));
    }

    fn gradient_check_for(mode: RhoMode) {
        let mut rng = Rng::new(11);
        let d = 3;
        let c = 3;
        let src_all = rand_matrix(12, d, &mut rng).map(f64::abs);
        let src_lab: Vec<usize> = (0..12).map(|i| i % c).collect();
        let tgt_all = rand_matrix(9, d, &mut rng).map(f64::abs);
        let tgt_lab = vec![0, 1, 0, 1, 2, 0, 1, 2, 2];
        let mut state = init_global(&src_all, &src_lab, &tgt_all, &tgt_lab, c, mode).unwrap();
        // Two earlier iterations so the history terms are non-trivial.
        for _ in 0..2 {
            let bs = rand_matrix(4, d, &mut rng).map(f64::abs);
            let bt = rand_matrix(4, d, &mut rng).map(f64::abs);
            state.advance(&bs, &[0, 1, 2, 0], &bt, &[1, 0, 2, 1]).unwrap();
        }
        let bs = rand_matrix(4, d, &mut rng).map(f64::abs);
        let bt = rand_matrix(4, d, &mut rng).map(f64::abs);
        let (ls, lt) = ([0usize, 1, 1, 2], [0usize, 0, 1, 2]);
        let out = state.clone().advance(&bs, &ls, &bt, &lt).unwrap();

        let mut x0 = bs.as_slice().to_vec();
        x0.extend_from_slice(bt.as_slice());
        let mut analytic = out.grad_source.as_slice().to_vec();
        analytic.extend_from_slice(out.grad_target.as_slice());
        let report = grad_check(
            |x: &[f64]| {
                let s = Matrix::from_vec(4, d, x[..4 * d].to_vec()).unwrap();
                let t = Matrix::from_vec(4, d, x[4 * d..].to_vec()).unwrap();
                state.clone().advance(&s, &ls, &t, &lt).unwrap().loss
            },
            &x0,
            &analytic,
            1e-6,
        );
        assert!(report.max_rel_error < 1e-6, "{mode:?}: {report:?}");
    }

    #[test]
    fn alignment_gradient_per_class_rho() {
        gradient_check_for(RhoMode::PerClass);
    }

    #[test]
    fn alignment_gradient_shared_rho() {
        gradient_check_for(RhoMode::Shared);
    }

    #[test]
    fn local_alignment_gradient() {
        let mut rng = Rng::new(12);
        let bs = rand_matrix(5, 2, &mut rng);
        let bt = rand_matrix(4, 2, &mut rng);
        let (ls, lt) = ([0usize, 1, 0, 2, 1], [1usize, 0, 1, 0]);
        let out = local_alignment(&bs, &ls, &bt, &lt, 3).unwrap();
        let mut x0 = bs.as_slice().to_vec();
        x0.extend_from_slice(bt.as_slice());
        let mut analytic = out.grad_source.as_slice().to_vec();
        analytic.extend_from_slice(out.grad_target.as_slice());
        let report = grad_check(
            |x: &[f64]| {
                let s = Matrix::from_vec(5, 2, x[..10].to_vec()).unwrap();
                let t = Matrix::from_vec(4, 2, x[10..].to_vec()).unwrap();
                local_alignment(&s, &ls, &t, &lt, 3).unwrap().loss
            },
            &x0,
            &analytic,
            1e-6,
        );
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        // class 2 has no target sample: its source row gets no gradient
        assert_eq!(out.grad_source.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn absent_class_history_does_not_advance() {
        let f = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let mut st = init_global(&f, &[0, 1], &f, &[0, 1], 2, RhoMode::PerClass).unwrap();
        st.advance(&f.slice_rows(0, 1), &[0], &f.slice_rows(0, 1), &[0]).unwrap();
        assert_eq!(st.source.history, vec![1, 0]);
        assert_eq!(st.target.history, vec![1, 0]);
        assert_eq!(st.iteration, 1);
    }
}
