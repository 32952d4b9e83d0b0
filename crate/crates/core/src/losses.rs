//! The contrastive loss family: similarity kernel, alignment (MSE) term,
//! uniformity variants, the combined loss, and the gradient-weight
//! diagnostic.
//!
//! With unit-norm embeddings the least-squares objective reduces to the
//! negative mean diagonal similarity. The contrastive loss adds a
//! log-sum-exp uniformity term and decomposes exactly as
//! `contrastive = (1/tau) * mse + uniformity`; both sides of that identity
//! are computed by independent routes so the decomposition stays a real
//! check rather than a tautology.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    add, backward, concat_cols, log_sum_exp_rows, masked_log_sum_exp_rows, matmul_nt, mean_all,
    mul, rows_dot, scale, sub, sum_all, Element, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    MseOnly,
    Contrastive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniformityVariant {
    /// Noisy student embeddings against clean teacher embeddings
    /// (includes the j = i term).
    StudentVsTeacher,
    /// Pairs of noisy student embeddings, j ≠ i.
    StudentVsStudent,
    /// Student-student (j ≠ i) and student-teacher pools combined inside
    /// the logarithm.
    StudentVsBoth,
    /// All student/teacher pairings, anchored at both sides.
    NtXent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    #[serde(default = "default_variant")]
    pub variant: UniformityVariant,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_variant() -> UniformityVariant {
    UniformityVariant::StudentVsTeacher
}

fn default_tau() -> f64 {
    0.1
}

impl LossSpec {
    pub fn contrastive(variant: UniformityVariant, tau: f64) -> Self {
        LossSpec {
            family: LossFamily::Contrastive,
            variant,
            tau,
        }
    }

    pub fn mse_only() -> Self {
        LossSpec {
            family: LossFamily::MseOnly,
            variant: default_variant(),
            tau: default_tau(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Domain(format!(
                "temperature {} must be positive",
                self.tau
            )));
        }
        Ok(())
    }
}

fn check_unit_rows<T: Element>(t: &Tensor<T>, what: &str) -> Result<()> {
    let (n, d) = match t.shape() {
        [n, d] => (*n, *d),
        s => {
            return Err(Error::Dimension(format!(
                "{what}: expected N×d embeddings, got {s:?}"
            )))
        }
    };
    let data = t.data();
    for i in 0..n {
        let norm: f64 = data[i * d..(i + 1) * d]
            .iter()
            .map(|&v| v.to64() * v.to64())
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() > 1e-5 {
            return Err(Error::Contract(format!(
                "{what}: row {i} has norm {norm}, embeddings must be unit-norm"
            )));
        }
    }
    Ok(())
}

/// K(i,j) = ⟨student_i, teacher_j⟩ for unit-norm inputs.
#[derive(Debug)]
pub struct SimilarityMatrix<T: Element> {
    pub k: Tensor<T>,
    pub tau: f64,
}

pub fn similarity_matrix<T: Element>(
    s_emb: &Tensor<T>,
    r_emb: &Tensor<T>,
    tau: f64,
) -> Result<SimilarityMatrix<T>> {
    if tau <= 0.0 {
        return Err(Error::Domain(format!("temperature {tau} must be positive")));
    }
    check_unit_rows(s_emb, "similarity student")?;
    check_unit_rows(r_emb, "similarity teacher")?;
    if s_emb.shape()[1] != r_emb.shape()[1] {
        return Err(Error::Dimension(format!(
            "similarity: embedding dims {} and {} differ",
            s_emb.shape()[1],
            r_emb.shape()[1]
        )));
    }
    let k = matmul_nt(s_emb, r_emb)?;
    // unit rows bound every inner product by 1
    if k.data().iter().any(|&v| v.to64().abs() > 1.0 + 1e-6) {
        return Err(Error::Numeric(
            "similarity entries escape [-1, 1]".to_string(),
        ));
    }
    Ok(SimilarityMatrix { k, tau })
}

/// Least-squares alignment: -(1/N) Σ_i ⟨student_i, teacher_i⟩ (the constant
/// terms of the squared distance are already dropped).
pub fn loss_mse<T: Element>(s_emb: &Tensor<T>, r_emb: &Tensor<T>) -> Result<Tensor<T>> {
    check_unit_rows(s_emb, "mse student")?;
    check_unit_rows(r_emb, "mse teacher")?;
    if s_emb.shape() != r_emb.shape() {
        return Err(Error::Dimension(format!(
            "mse: shapes {:?} and {:?} differ",
            s_emb.shape(),
            r_emb.shape()
        )));
    }
    scale(&mean_all(&rows_dot(s_emb, r_emb)?)?, -1.0)
}

fn batch_size<T: Element>(t: &Tensor<T>) -> usize {
    t.shape()[0]
}

fn offdiag_mask(n: usize) -> Vec<bool> {
    let mut m = vec![true; n * n];
    for i in 0..n {
        m[i * n + i] = false;
    }
    m
}

/// Mask for [student-block (n, diag excluded) | extra-block (n, all kept)].
fn both_mask(n: usize) -> Vec<bool> {
    let mut m = vec![true; n * 2 * n];
    for i in 0..n {
        m[i * 2 * n + i] = false;
    }
    m
}

/// The uniformity (push) term of the selected variant, averaged over the
/// batch. Variants that exclude j = i need N ≥ 2.
pub fn loss_uniformity<T: Element>(
    s_emb: &Tensor<T>,
    r_emb: &Tensor<T>,
    spec: &LossSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    check_unit_rows(s_emb, "uniformity student")?;
    check_unit_rows(r_emb, "uniformity teacher")?;
    let n = batch_size(s_emb);
    if n != batch_size(r_emb) {
        return Err(Error::Dimension(format!(
            "uniformity: batch sizes {n} and {} differ",
            batch_size(r_emb)
        )));
    }
    let inv_tau = 1.0 / spec.tau;
    let needs_negatives = !matches!(spec.variant, UniformityVariant::StudentVsTeacher);
    if needs_negatives && n < 2 {
        return Err(Error::BatchSize(format!(
            "uniformity variant {:?} needs at least 2 samples, got {n}",
            spec.variant
        )));
    }

    let per_sample = match spec.variant {
        UniformityVariant::StudentVsTeacher => {
            let st = scale(&matmul_nt(s_emb, r_emb)?, inv_tau)?;
            log_sum_exp_rows(&st)?
        }
        UniformityVariant::StudentVsStudent => {
            let ss = scale(&matmul_nt(s_emb, s_emb)?, inv_tau)?;
            masked_log_sum_exp_rows(&ss, &offdiag_mask(n))?
        }
        UniformityVariant::StudentVsBoth => {
            let ss = scale(&matmul_nt(s_emb, s_emb)?, inv_tau)?;
            let st = scale(&matmul_nt(s_emb, r_emb)?, inv_tau)?;
            let pooled = concat_cols(&[ss, st])?;
            masked_log_sum_exp_rows(&pooled, &both_mask(n))?
        }
        UniformityVariant::NtXent => {
            let ss = scale(&matmul_nt(s_emb, s_emb)?, inv_tau)?;
            let st = scale(&matmul_nt(s_emb, r_emb)?, inv_tau)?;
            let student_anchor =
                masked_log_sum_exp_rows(&concat_cols(&[ss, st])?, &both_mask(n))?;
            let rs = scale(&matmul_nt(r_emb, s_emb)?, inv_tau)?;
            let rr = scale(&matmul_nt(r_emb, r_emb)?, inv_tau)?;
            let teacher_anchor =
                masked_log_sum_exp_rows(&concat_cols(&[rs, rr])?, &ntxent_teacher_mask(n))?;
            add(&student_anchor, &teacher_anchor)?
        }
    };
    mean_all(&per_sample)
}

/// Mask for [teacher-student block (all kept) | teacher-teacher (diag
/// excluded)].
fn ntxent_teacher_mask(n: usize) -> Vec<bool> {
    let mut m = vec![true; n * 2 * n];
    for i in 0..n {
        m[i * 2 * n + n + i] = false;
    }
    m
}

/// The combined contrastive loss. For `StudentVsTeacher` this is computed
/// through the softmax cross-entropy route directly, which equals
/// `(1/tau)·mse + uniformity` up to floating-point accumulation order — the
/// decomposition identity is asserted against this independent route.
pub fn loss_contrastive<T: Element>(
    s_emb: &Tensor<T>,
    r_emb: &Tensor<T>,
    spec: &LossSpec,
) -> Result<Tensor<T>> {
    spec.validate()?;
    if spec.family != LossFamily::Contrastive {
        return Err(Error::Contract(
            "loss_contrastive requires a contrastive LossSpec".to_string(),
        ));
    }
    match spec.variant {
        UniformityVariant::StudentVsTeacher => {
            check_unit_rows(s_emb, "contrastive student")?;
            check_unit_rows(r_emb, "contrastive teacher")?;
            let inv_tau = 1.0 / spec.tau;
            let scores = scale(&matmul_nt(s_emb, r_emb)?, inv_tau)?;
            let lse = log_sum_exp_rows(&scores)?;
            let aligned = scale(&rows_dot(s_emb, r_emb)?, inv_tau)?;
            mean_all(&sub(&lse, &aligned)?)
        }
        _ => {
            let pull = scale(&loss_mse(s_emb, r_emb)?, 1.0 / spec.tau)?;
            let push = loss_uniformity(s_emb, r_emb, spec)?;
            add(&pull, &push)
        }
    }
}

/// Softmax weights w_i(j) = exp(K(i,j)/tau - logsumexp_i): each row is the
/// convex combination weighting the uniformity gradient.
#[derive(Debug)]
pub struct UniformityWeights<T: Element> {
    /// N×N, untracked.
    pub w: Tensor<T>,
}

pub fn uniformity_weights<T: Element>(k: &SimilarityMatrix<T>) -> Result<UniformityWeights<T>> {
    let n = batch_size(&k.k);
    let kd = k.k.data();
    let mut w = vec![T::zero(); n * n];
    for i in 0..n {
        let row = &kd[i * n..(i + 1) * n];
        let mut max = row[0];
        for &v in row {
            if v > max {
                max = v;
            }
        }
        let inv_tau = T::of(1.0 / k.tau);
        let mut sum = T::zero();
        for j in 0..n {
            let e = ((row[j] - max) * inv_tau).exp();
            w[i * n + j] = e;
            sum = sum + e;
        }
        for j in 0..n {
            w[i * n + j] = w[i * n + j] / sum;
        }
    }
    drop(kd);
    Ok(UniformityWeights {
        w: Tensor::from_vec(&[n, n], w)?,
    })
}

/// Result of the dual-backward gradient identity check.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    /// max |grad_direct - grad_decomposed| / max |grad_direct| over all
    /// student parameters.
    pub max_rel_deviation: f64,
    pub weight_row_sum_max_err: f64,
    /// Largest uniformity-side gradient magnitude (exactly zero for
    /// MSE-only specs).
    pub uniformity_side_max_abs: f64,
}

fn collect_grads<T: Element>(params: &[Tensor<T>]) -> Vec<f64> {
    let mut out = Vec::new();
    for p in params {
        match p.grad() {
            Some(g) => out.extend(g.iter().map(|&v| v.to64())),
            None => out.extend(std::iter::repeat(0.0).take(p.numel())),
        }
    }
    out
}

fn zero_grads<T: Element>(params: &[Tensor<T>]) {
    for p in params {
        p.zero_grad();
    }
}

/// Verifies the gradient decomposition of the contrastive loss w.r.t. the
/// student parameters: the direct gradient of the loss against the sum of
/// the scaled alignment gradient and the w_i(j)-weighted similarity
/// gradients (weights held constant), each via its own backward pass.
pub fn gradient_decomposition_check<T: Element>(
    student_params: &[Tensor<T>],
    s_emb: &Tensor<T>,
    r_emb: &Tensor<T>,
    spec: &LossSpec,
) -> Result<DecompositionReport> {
    spec.validate()?;
    if spec.family == LossFamily::Contrastive && spec.variant != UniformityVariant::StudentVsTeacher
    {
        return Err(Error::Contract(
            "gradient decomposition is defined for the student-vs-teacher kernel".to_string(),
        ));
    }
    if !s_emb.tracked() {
        return Err(Error::Contract(
            "student embeddings must be produced by a differentiable student".to_string(),
        ));
    }
    let n = batch_size(s_emb);

    // Side A: direct gradient of the loss.
    let loss_direct = match spec.family {
        LossFamily::MseOnly => loss_mse(s_emb, r_emb)?,
        LossFamily::Contrastive => loss_contrastive(s_emb, r_emb, spec)?,
    };
    zero_grads(student_params);
    backward(&loss_direct)?;
    let grad_direct = collect_grads(student_params);

    // Side B: (1/tau)·mse plus the weighted similarity surrogate with the
    // weights frozen at their current values.
    let (weights, row_sum_err) = match spec.family {
        LossFamily::MseOnly => (None, 0.0),
        LossFamily::Contrastive => {
            let k = similarity_matrix(&s_emb.detach(), &r_emb.detach(), spec.tau)?;
            let w = uniformity_weights(&k)?;
            let wd = w.w.data_vec();
            let mut err: f64 = 0.0;
            for i in 0..n {
                let sum: f64 = wd[i * n..(i + 1) * n].iter().map(|&v| v.to64()).sum();
                err = err.max((sum - 1.0).abs());
                if wd[i * n..(i + 1) * n].iter().any(|&v| v.to64() < 0.0) {
                    return Err(Error::Numeric("negative uniformity weight".to_string()));
                }
            }
            (Some(w), err)
        }
    };

    let mse = loss_mse(s_emb, r_emb)?;
    let pull_side = match spec.family {
        LossFamily::MseOnly => mse,
        LossFamily::Contrastive => scale(&mse, 1.0 / spec.tau)?,
    };

    let mut uniformity_side_max_abs = 0.0;
    let grad_decomposed = match &weights {
        None => {
            zero_grads(student_params);
            backward(&pull_side)?;
            collect_grads(student_params)
        }
        Some(w) => {
            let k_tracked = matmul_nt(s_emb, r_emb)?;
            let surrogate = scale(
                &sum_all(&mul(&w.w, &k_tracked)?)?,
                1.0 / (spec.tau * n as f64),
            )?;
            // uniformity side alone
            zero_grads(student_params);
            backward(&surrogate)?;
            let unif_grad = collect_grads(student_params);
            uniformity_side_max_abs = unif_grad.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            // full decomposed gradient
            zero_grads(student_params);
            backward(&add(&pull_side, &surrogate)?)?;
            collect_grads(student_params)
        }
    };
    zero_grads(student_params);

    let scale_ref = grad_direct
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()))
        .max(1e-12);
    let max_rel_deviation = grad_direct
        .iter()
        .zip(&grad_decomposed)
        .fold(0.0f64, |a, (&x, &y)| a.max((x - y).abs()))
        / scale_ref;

    Ok(DecompositionReport {
        max_rel_deviation,
        weight_row_sum_max_err: row_sum_err,
        uniformity_side_max_abs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn unit_rows(rows: &[&[f64]]) -> Tensor<f64> {
        let n = rows.len();
        let d = rows[0].len();
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            let norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(r.iter().map(|v| v / norm));
        }
        Tensor::from_vec(&[n, d], data).unwrap()
    }

    fn rand_unit(rng: &mut RngStream, n: usize, d: usize) -> Tensor<f64> {
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..d {
                data[i * d + j] = row[j] / norm;
            }
        }
        Tensor::from_vec(&[n, d], data).unwrap()
    }

    #[test]
    fn similarity_orthonormal_rows_give_identity() {
        let s = unit_rows(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let k = similarity_matrix(&s, &s, 1.0).unwrap();
        assert_eq!(k.k.data_vec(), vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn similarity_equal_rows_give_all_ones() {
        let s = unit_rows(&[&[3.0, 4.0], &[3.0, 4.0], &[3.0, 4.0]]);
        let k = similarity_matrix(&s, &s, 0.1).unwrap();
        for v in k.k.data_vec() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn similarity_matches_pairwise_dot_oracle() {
        let mut rng = RngStream::new(31, "simoracle");
        let (n, d) = (6, 9);
        let s = rand_unit(&mut rng, n, d);
        let r = rand_unit(&mut rng, n, d);
        let k = similarity_matrix(&s, &r, 0.5).unwrap().k.data_vec();
        let sd = s.data_vec();
        let rd = r.data_vec();
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..d).map(|q| sd[i * d + q] * rd[j * d + q]).sum();
                assert!((k[i * n + j] - dot).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn similarity_rejects_non_unit_rows() {
        let s = Tensor::from_vec(&[1, 2], vec![2.0, 0.0]).unwrap();
        assert!(matches!(
            similarity_matrix(&s, &s, 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mse_aligned_is_minus_one_and_orthogonal_is_zero() {
        let s = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!((loss_mse(&s, &s).unwrap().item().unwrap() + 1.0).abs() < 1e-15);
        let r = unit_rows(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert!(loss_mse(&s, &r).unwrap().item().unwrap().abs() < 1e-15);
    }

    #[test]
    fn mse_matches_direct_formula_oracle() {
        let mut rng = RngStream::new(32, "mseoracle");
        let (n, d) = (8, 5);
        let s = rand_unit(&mut rng, n, d);
        let r = rand_unit(&mut rng, n, d);
        let got = loss_mse(&s, &r).unwrap().item().unwrap();
        let sd = s.data_vec();
        let rd = r.data_vec();
        let mut want = 0.0;
        for i in 0..n {
            for q in 0..d {
                want += sd[i * d + q] * rd[i * d + q];
            }
        }
        want = -want / n as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn uniformity_svt_zero_kernel_gives_log_n() {
        // orthogonal student/teacher rows → all K entries zero
        let n = 3;
        let s = unit_rows(&[
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        ]);
        let r = unit_rows(&[
            &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        ]);
        let spec = LossSpec::contrastive(UniformityVariant::StudentVsTeacher, 1.0);
        let got = loss_uniformity(&s, &r, &spec).unwrap().item().unwrap();
        assert!((got - (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn uniformity_svs_antipodal_pair_closed_form() {
        let s = unit_rows(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        let r = unit_rows(&[&[0.0, 1.0], &[0.0, 1.0]]); // irrelevant for SvS
        let spec = LossSpec::contrastive(UniformityVariant::StudentVsStudent, 1.0);
        let got = loss_uniformity(&s, &r, &spec).unwrap().item().unwrap();
        assert!((got + 1.0).abs() < 1e-12, "{got}");
    }

    #[test]
    fn uniformity_variants_match_double_loop_oracle() {
        let mut rng = RngStream::new(33, "unioracle");
        let (n, d) = (8, 6);
        for tau in [0.05, 0.1, 1.0] {
            let s = rand_unit(&mut rng, n, d);
            let r = rand_unit(&mut rng, n, d);
            let sd = s.data_vec();
            let rd = r.data_vec();
            let dot = |a: &[f64], i: usize, b: &[f64], j: usize| -> f64 {
                (0..d).map(|q| a[i * d + q] * b[j * d + q]).sum()
            };
            let ktau = |x: f64| (x / tau).exp();

            // independent double-loop oracle straight from the variant
            // definitions
            let mut want_svt = 0.0;
            let mut want_svs = 0.0;
            let mut want_sb = 0.0;
            let mut want_nt = 0.0;
            for i in 0..n {
                let mut st = 0.0;
                let mut ss = 0.0;
                let mut rs = 0.0;
                let mut rr = 0.0;
                for j in 0..n {
                    st += ktau(dot(&sd, i, &rd, j));
                    rs += ktau(dot(&rd, i, &sd, j));
                    if j != i {
                        ss += ktau(dot(&sd, i, &sd, j));
                        rr += ktau(dot(&rd, i, &rd, j));
                    }
                }
                want_svt += st.ln();
                want_svs += ss.ln();
                want_sb += (ss + st).ln();
                want_nt += (ss + st).ln() + (rs + rr).ln();
            }
            want_svt /= n as f64;
            want_svs /= n as f64;
            want_sb /= n as f64;
            want_nt /= n as f64;

            let check = |variant, want: f64| {
                let spec = LossSpec::contrastive(variant, tau);
                let got = loss_uniformity(&s, &r, &spec).unwrap().item().unwrap();
                assert!(
                    (got - want).abs() < 1e-10,
                    "{variant:?} tau {tau}: {got} vs {want}"
                );
            };
            check(UniformityVariant::StudentVsTeacher, want_svt);
            check(UniformityVariant::StudentVsStudent, want_svs);
            check(UniformityVariant::StudentVsBoth, want_sb);
            check(UniformityVariant::NtXent, want_nt);
        }
    }

    #[test]
    fn uniformity_needs_two_samples_for_exclusion_variants() {
        let s = unit_rows(&[&[1.0, 0.0]]);
        let spec = LossSpec::contrastive(UniformityVariant::StudentVsStudent, 1.0);
        assert!(matches!(
            loss_uniformity(&s, &s, &spec),
            Err(Error::BatchSize(_))
        ));
        // SvT is fine with a single sample
        let svt = LossSpec::contrastive(UniformityVariant::StudentVsTeacher, 1.0);
        assert!(loss_uniformity(&s, &s, &svt).is_ok());
    }

    #[test]
    fn contrastive_identity_kernel_closed_form() {
        // K = I, tau = 1: per-sample -log(e/(e+1)), total log(1 + e^-1)
        let s = unit_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let spec = LossSpec::contrastive(UniformityVariant::StudentVsTeacher, 1.0);
        let got = loss_contrastive(&s, &s, &spec).unwrap().item().unwrap();
        let want = (1.0 + (-1.0f64).exp()).ln(); // 0.313261687518...
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((want - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn contrastive_constant_kernel_gives_log_n() {
        // all rows equal on both sides → every K entry equals the same value
        for n in [2usize, 5] {
            let row: &[f64] = &[0.6, 0.8];
            let rows: Vec<&[f64]> = (0..n).map(|_| row).collect();
            let s = unit_rows(&rows);
            let t = unit_rows(&rows);
            let spec = LossSpec::contrastive(UniformityVariant::StudentVsTeacher, 0.37);
            let got = loss_contrastive(&s, &t, &spec).unwrap().item().unwrap();
            assert!((got - (n as f64).ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn eq3_identity_holds_on_random_batches() {
        let mut rng = RngStream::new(34, "eq3");
        for tau in [0.05, 0.1, 1.0] {
            for n in [2usize, 8] {
                for d in [4usize, 16] {
                    let s = rand_unit(&mut rng, n, d);
                    let r = rand_unit(&mut rng, n, d);
                    let spec = LossSpec::contrastive(UniformityVariant::StudentVsTeacher, tau);
                    let contr = loss_contrastive(&s, &r, &spec).unwrap().item().unwrap();
                    let mse = loss_mse(&s, &r).unwrap().item().unwrap();
                    let unif = loss_uniformity(&s, &r, &spec).unwrap().item().unwrap();
                    assert!(
                        (contr - (mse / tau + unif)).abs() < 1e-10,
                        "tau {tau} n {n} d {d}"
                    );
                    // pointwise lower bound from K(i,i) ≤ 1
                    assert!(contr >= -1.0 / tau);
                }
            }
        }
    }

    #[test]
    fn losses_invariant_under_simultaneous_row_permutation() {
        let mut rng = RngStream::new(35, "perm");
        let (n, d) = (6, 5);
        let s = rand_unit(&mut rng, n, d);
        let r = rand_unit(&mut rng, n, d);
        let perm = {
            let mut p = rng.permutation(n);
            // make sure it is not the identity
            if p.iter().enumerate().all(|(i, &v)| i == v) {
                p.swap(0, 1);
            }
            p
        };
        let permute = |t: &Tensor<f64>| {
            let data = t.data_vec();
            let mut out = vec![0.0; n * d];
            for (dst, &src) in perm.iter().enumerate() {
                out[dst * d..(dst + 1) * d].copy_from_slice(&data[src * d..(src + 1) * d]);
            }
            Tensor::from_vec(&[n, d], out).unwrap()
        };
        let sp = permute(&s);
        let rp = permute(&r);
        for variant in [
            UniformityVariant::StudentVsTeacher,
            UniformityVariant::StudentVsStudent,
            UniformityVariant::StudentVsBoth,
            UniformityVariant::NtXent,
        ] {
            let spec = LossSpec::contrastive(variant, 0.1);
            let a = loss_contrastive(&s, &r, &spec).unwrap().item().unwrap();
            let b = loss_contrastive(&sp, &rp, &spec).unwrap().item().unwrap();
            assert!((a - b).abs() < 1e-10, "{variant:?}");
        }
        let a = loss_mse(&s, &r).unwrap().item().unwrap();
        let b = loss_mse(&sp, &rp).unwrap().item().unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn uniformity_shift_property_for_svt() {
        // uniformity(K + c) == uniformity(K) + c/tau: realized by scaling
        // the kernel through a modified teacher is impossible with unit
        // rows, so check at the kernel level through the weights/LSE math.
        let mut rng = RngStream::new(36, "shift");
        let (n, tau, c) = (5usize, 0.1f64, 0.37f64);
        let k = Tensor::from_vec(
            &[n, n],
            (0..n * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let shifted = Tensor::from_vec(
            &[n, n],
            k.data_vec().iter().map(|v| v + c).collect(),
        )
        .unwrap();
        let unif = |k: &Tensor<f64>| {
            let scaled = scale(k, 1.0 / tau).unwrap();
            mean_all(&log_sum_exp_rows(&scaled).unwrap())
                .unwrap()
                .item()
                .unwrap()
        };
        assert!((unif(&shifted) - (unif(&k) + c / tau)).abs() < 1e-10);
    }

    #[test]
    fn weights_constant_row_gives_uniform() {
        let n = 4;
        let k = SimilarityMatrix {
            k: Tensor::<f64>::from_vec(&[n, n], vec![0.25; n * n]).unwrap(),
            tau: 0.1,
        };
        let w = uniformity_weights(&k).unwrap().w.data_vec();
        for v in w {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_rows_sum_to_one() {
        let mut rng = RngStream::new(37, "wsum");
        let n = 7;
        let s = rand_unit(&mut rng, n, 5);
        let r = rand_unit(&mut rng, n, 5);
        let k = similarity_matrix(&s, &r, 0.1).unwrap();
        let w = uniformity_weights(&k).unwrap().w.data_vec();
        for i in 0..n {
            let sum: f64 = w[i * n..(i + 1) * n].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(w[i * n..(i + 1) * n].iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn weights_concentrate_at_low_temperature() {
        // unique row max + tau = 0.01 → dominant weight above 0.999
        let k = SimilarityMatrix {
            k: Tensor::from_vec(&[2, 2], vec![0.9, 0.5, 0.1, 0.6]).unwrap(),
            tau: 0.01,
        };
        let w = uniformity_weights(&k).unwrap().w.data_vec();
        assert!(w[0] > 0.999);
        assert!(w[3] > 0.999);
    }

    #[test]
    fn weights_invariant_under_kernel_shift() {
        let mut rng = RngStream::new(38, "wshift");
        let n = 5;
        let kvals: Vec<f64> = (0..n * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let shifted: Vec<f64> = kvals.iter().map(|v| v + 0.5).collect();
        let w1 = uniformity_weights(&SimilarityMatrix {
            k: Tensor::from_vec(&[n, n], kvals).unwrap(),
            tau: 0.1,
        })
        .unwrap()
        .w
        .data_vec();
        let w2 = uniformity_weights(&SimilarityMatrix {
            k: Tensor::from_vec(&[n, n], shifted).unwrap(),
            tau: 0.1,
        })
        .unwrap()
        .w
        .data_vec();
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
