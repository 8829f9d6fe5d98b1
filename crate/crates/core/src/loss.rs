//! Classification and distillation losses.
//!
//! The server objective is cross-entropy over every received sample plus a
//! per-device knowledge-distillation sum; the device objective is local
//! cross-entropy plus distillation against the server's logits. Both KD terms
//! soften logits at a temperature and scale by temperature squared, treat the
//! teacher as a constant, and can be restricted to rows where the teacher
//! predicts the true label (filtered transfer). A two-stage schedule zeroes
//! both distillation weights before the switch round, which must leave values
//! and gradients bitwise identical to plain cross-entropy — the KD branch is
//! skipped entirely, never multiplied by zero.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Which distribution leads in the KD divergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(teacher-softened || student-softened); the default reading.
    TeacherFirst,
    /// KL(student-softened || teacher-softened).
    StudentFirst,
}

/// Distillation and schedule settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Strength of the server-side KD sum.
    pub alpha_s: f64,
    /// Strength of the device-side KD term.
    pub alpha_d: f64,
    pub kd_temperature: f64,
    /// Rounds before this one use embedding-only transfer and CE-only losses.
    pub two_stage_switch_round: u64,
    /// Distill only from rows the teacher classifies correctly.
    pub filtered_kd: bool,
    pub kl_direction: KlDirection,
    /// Divide the server's per-device KD sum by the device count so alpha_s
    /// has comparable scale across K. `false` keeps the raw sum.
    pub server_kd_normalized: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha_s: 1.0,
            alpha_d: 1.0,
            kd_temperature: 2.0,
            two_stage_switch_round: 50,
            filtered_kd: true,
            kl_direction: KlDirection::TeacherFirst,
            server_kd_normalized: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kd_temperature > 0.0 && self.kd_temperature.is_finite()) {
            return Err(CoreError::Config("kd_temperature must be positive".into()));
        }
        if self.alpha_s < 0.0 || self.alpha_d < 0.0 {
            return Err(CoreError::Config("alphas must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `(alpha_s, alpha_d)` in effect at `round`: zero before the switch round.
pub fn effective_alphas(cfg: &LossConfig, round: u64) -> (f64, f64) {
    if round < cfg.two_stage_switch_round {
        (0.0, 0.0)
    } else {
        (cfg.alpha_s, cfg.alpha_d)
    }
}

/// Whether logits are transferred at `round` (stage 2 of the two-stage
/// schedule).
pub fn logits_stage(cfg: &LossConfig, round: u64) -> bool {
    round >= cfg.two_stage_switch_round
}

fn check_finite(m: &ArrayView2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::Input(format!("non-finite value in {what}")))
    }
}

/// Log of softmax(row / t), computed with max subtraction.
fn log_softmax_row(row: ArrayView1<f64>, t: f64) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut shifted = row.mapv(|z| (z - max) / t);
    let lse = shifted.mapv(f64::exp).sum().ln();
    shifted.mapv_inplace(|z| z - lse);
    shifted
}

/// Temperature softmax of a logit vector. Entries are positive and sum to 1
/// within 1e-12.
pub fn softmax(logits: ArrayView1<f64>, temperature: f64) -> Result<Array1<f64>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CoreError::Config("temperature must be positive".into()));
    }
    if logits.is_empty() {
        return Err(CoreError::Input("empty logit vector".into()));
    }
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(CoreError::Input("non-finite logit".into()));
    }
    Ok(log_softmax_row(logits, temperature).mapv(f64::exp))
}

/// Mean cross-entropy over the batch plus the gradient with respect to the
/// logits, `(softmax - onehot) / B`.
pub fn cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (rows, classes) = logits.dim();
    if rows != labels.len() {
        return Err(CoreError::Shape(format!(
            "{} logit rows vs {} labels",
            rows,
            labels.len()
        )));
    }
    if rows == 0 {
        return Err(CoreError::Input("empty batch".into()));
    }
    check_finite(&logits, "logits")?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(CoreError::Input(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let b = rows as f64;
    let mut grad = Array2::zeros((rows, classes));
    let mut total = 0.0;
    for i in 0..rows {
        let log_p = log_softmax_row(logits.row(i), 1.0);
        total += -log_p[labels[i]];
        let mut g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = log_p[j].exp() / b;
        }
        g[labels[i]] -= 1.0 / b;
    }
    Ok((total / b, grad))
}

/// Per-row KD values (KL at the softened distributions, scaled by t^2) and
/// their gradients with respect to the student logits.
fn kd_rows(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    t: f64,
    direction: KlDirection,
) -> (Vec<f64>, Array2<f64>) {
    let (rows, classes) = student.dim();
    let mut values = Vec::with_capacity(rows);
    let mut grads = Array2::zeros((rows, classes));
    for i in 0..rows {
        let s_log = log_softmax_row(student.row(i), t);
        let t_log = log_softmax_row(teacher.row(i), t);
        match direction {
            KlDirection::TeacherFirst => {
                let mut kl = 0.0;
                for j in 0..classes {
                    kl += t_log[j].exp() * (t_log[j] - s_log[j]);
                }
                values.push(kl.max(0.0) * t * t);
                let mut g = grads.row_mut(i);
                for j in 0..classes {
                    g[j] = t * (s_log[j].exp() - t_log[j].exp());
                }
            }
            KlDirection::StudentFirst => {
                let mut kl = 0.0;
                for j in 0..classes {
                    kl += s_log[j].exp() * (s_log[j] - t_log[j]);
                }
                values.push(kl.max(0.0) * t * t);
                let mut g = grads.row_mut(i);
                for j in 0..classes {
                    g[j] = t * s_log[j].exp() * (s_log[j] - t_log[j] - kl);
                }
            }
        }
    }
    (values, grads)
}

/// Mean KL(teacher || student) at the given temperature, scaled by t^2, with
/// the gradient with respect to the student logits. The teacher is constant.
pub fn kd_divergence(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    if student.dim() != teacher.dim() {
        return Err(CoreError::Shape(format!(
            "student {:?} vs teacher {:?}",
            student.dim(),
            teacher.dim()
        )));
    }
    if student.nrows() == 0 {
        return Err(CoreError::Input("empty batch".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(CoreError::Config("temperature must be positive".into()));
    }
    check_finite(&student, "student logits")?;
    check_finite(&teacher, "teacher logits")?;
    let (values, grads) = kd_rows(student, teacher, temperature, KlDirection::TeacherFirst);
    let b = student.nrows() as f64;
    let loss = values.iter().sum::<f64>() / b;
    Ok((loss, grads / b))
}

/// True where the teacher's argmax (lowest-index maximizer) equals the label.
pub fn filtered_mask(teacher: ArrayView2<f64>, labels: &[usize]) -> Result<Vec<bool>> {
    if teacher.nrows() != labels.len() {
        return Err(CoreError::Shape(format!(
            "{} teacher rows vs {} labels",
            teacher.nrows(),
            labels.len()
        )));
    }
    Ok(teacher
        .outer_iter()
        .zip(labels)
        .map(|(row, &label)| {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == label
        })
        .collect())
}

/// Mean KD over the rows where the teacher is correct; `(0, zeros, 0)` when
/// no row qualifies. Returns `(value, grad wrt student, rows_used)`.
pub fn filtered_kd(
    student: ArrayView2<f64>,
    teacher: ArrayView2<f64>,
    labels: &[usize],
    temperature: f64,
    direction: KlDirection,
) -> Result<(f64, Array2<f64>, usize)> {
    if student.dim() != teacher.dim() {
        return Err(CoreError::Shape(format!(
            "student {:?} vs teacher {:?}",
            student.dim(),
            teacher.dim()
        )));
    }
    check_finite(&student, "student logits")?;
    check_finite(&teacher, "teacher logits")?;
    let mask = filtered_mask(teacher, labels)?;
    let used = mask.iter().filter(|&&m| m).count();
    let mut grad = Array2::zeros(student.dim());
    if used == 0 {
        return Ok((0.0, grad, 0));
    }
    let (values, grads) = kd_rows(student, teacher, temperature, direction);
    let mut total = 0.0;
    for i in 0..student.nrows() {
        if mask[i] {
            total += values[i];
            grad.row_mut(i).assign(&(&grads.row(i) / used as f64));
        }
    }
    Ok((total / used as f64, grad, used))
}

/// Teacher logits for a batch with a per-row presence mask (`None` = all
/// present). Rows without a teacher never contribute to KD.
#[derive(Debug, Clone, Copy)]
pub struct TeacherRows<'a> {
    pub logits: ArrayView2<'a, f64>,
    pub present: Option<&'a [bool]>,
}

impl<'a> TeacherRows<'a> {
    pub fn all(logits: ArrayView2<'a, f64>) -> Self {
        TeacherRows {
            logits,
            present: None,
        }
    }

    fn is_present(&self, i: usize) -> bool {
        self.present.map_or(true, |p| p[i])
    }
}

#[derive(Debug, Clone)]
pub struct CompositeLoss {
    pub loss: f64,
    pub grad: Array2<f64>,
    pub ce: f64,
    pub kd: f64,
    /// Rows that actually contributed to the KD term.
    pub kd_rows_used: usize,
    /// KD was wanted (alpha > 0 at this round) but no usable teacher row
    /// existed.
    pub teacher_missing: bool,
}

fn eligible_rows(
    teacher: &TeacherRows<'_>,
    labels: &[usize],
    filtered: bool,
) -> Result<Vec<bool>> {
    let mask = if filtered {
        filtered_mask(teacher.logits, labels)?
    } else {
        vec![true; labels.len()]
    };
    Ok((0..labels.len())
        .map(|i| teacher.is_present(i) && mask[i])
        .collect())
}

/// Device objective: CE(student, labels) + alpha_d * KD(student vs server
/// teacher), with filtering and the two-stage schedule applied. Without a
/// usable teacher (or before the switch round) this is exactly cross-entropy.
pub fn device_loss(
    student: ArrayView2<f64>,
    teacher: Option<TeacherRows<'_>>,
    labels: &[usize],
    cfg: &LossConfig,
    round: u64,
) -> Result<CompositeLoss> {
    cfg.validate()?;
    let (_, alpha_d) = effective_alphas(cfg, round);
    let (ce, mut grad) = cross_entropy(student, labels)?;
    let mut kd = 0.0;
    let mut used = 0usize;
    let mut teacher_missing = false;
    if alpha_d > 0.0 {
        match teacher {
            Some(tr) => {
                if tr.logits.dim() != student.dim() {
                    return Err(CoreError::Shape(format!(
                        "teacher {:?} vs student {:?}",
                        tr.logits.dim(),
                        student.dim()
                    )));
                }
                check_finite(&tr.logits, "teacher logits")?;
                let eligible = eligible_rows(&tr, labels, cfg.filtered_kd)?;
                used = eligible.iter().filter(|&&e| e).count();
                if used > 0 {
                    let (values, grads) =
                        kd_rows(student, tr.logits, cfg.kd_temperature, cfg.kl_direction);
                    let mut total = 0.0;
                    for i in 0..labels.len() {
                        if eligible[i] {
                            total += values[i];
                            let scale = alpha_d / used as f64;
                            grad.row_mut(i).scaled_add(scale, &grads.row(i));
                        }
                    }
                    kd = total / used as f64;
                } else {
                    teacher_missing = true;
                }
            }
            None => teacher_missing = true,
        }
    }
    let loss = if used > 0 { ce + alpha_d * kd } else { ce };
    Ok(CompositeLoss {
        loss,
        grad,
        ce,
        kd,
        kd_rows_used: used,
        teacher_missing,
    })
}

/// Server objective: CE over all rows + alpha_s * sum over devices of each
/// device's mean KD against its own logits (optionally divided by
/// `num_devices`). `device_of_row` groups batch rows by owning device.
pub fn server_loss(
    server_logits: ArrayView2<f64>,
    teacher: Option<TeacherRows<'_>>,
    labels: &[usize],
    device_of_row: &[usize],
    num_devices: usize,
    cfg: &LossConfig,
    round: u64,
) -> Result<CompositeLoss> {
    cfg.validate()?;
    if device_of_row.len() != labels.len() {
        return Err(CoreError::Shape(format!(
            "{} device tags vs {} labels",
            device_of_row.len(),
            labels.len()
        )));
    }
    if num_devices == 0 {
        return Err(CoreError::Config("num_devices must be positive".into()));
    }
    let (alpha_s, _) = effective_alphas(cfg, round);
    let (ce, mut grad) = cross_entropy(server_logits, labels)?;
    let mut kd = 0.0;
    let mut used_total = 0usize;
    let mut teacher_missing = false;
    if alpha_s > 0.0 {
        match teacher {
            Some(tr) => {
                if tr.logits.dim() != server_logits.dim() {
                    return Err(CoreError::Shape(format!(
                        "teacher {:?} vs student {:?}",
                        tr.logits.dim(),
                        server_logits.dim()
                    )));
                }
                check_finite(&tr.logits, "teacher logits")?;
                let eligible = eligible_rows(&tr, labels, cfg.filtered_kd)?;
                // Group eligible row indices per device, in row order.
                let mut groups: std::collections::BTreeMap<usize, Vec<usize>> =
                    std::collections::BTreeMap::new();
                for i in 0..labels.len() {
                    if eligible[i] {
                        groups.entry(device_of_row[i]).or_default().push(i);
                    }
                }
                if groups.is_empty() {
                    teacher_missing = true;
                } else {
                    let norm = if cfg.server_kd_normalized {
                        num_devices as f64
                    } else {
                        1.0
                    };
                    let (values, grads) =
                        kd_rows(server_logits, tr.logits, cfg.kd_temperature, cfg.kl_direction);
                    for rows in groups.values() {
                        let mut dev_total = 0.0;
                        for &i in rows {
                            dev_total += values[i];
                            let scale = alpha_s / (rows.len() as f64 * norm);
                            grad.row_mut(i).scaled_add(scale, &grads.row(i));
                        }
                        kd += dev_total / rows.len() as f64 / norm;
                        used_total += rows.len();
                    }
                }
            }
            None => teacher_missing = true,
        }
    }
    let loss = if used_total > 0 { ce + alpha_s * kd } else { ce };
    Ok(CompositeLoss {
        loss,
        grad,
        ce,
        kd,
        kd_rows_used: used_total,
        teacher_missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds;
    use ndarray::{array, Array2};
    use rand::Rng;

    fn random_logits(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-3.0..3.0))
    }

    fn fd_check(
        mut f: impl FnMut(&Array2<f64>) -> f64,
        at: &Array2<f64>,
        analytic: &Array2<f64>,
        tol: f64,
    ) {
        let h = 1e-6;
        for ((r, c), &a) in analytic.indexed_iter() {
            let mut plus = at.clone();
            plus[[r, c]] += h;
            let mut minus = at.clone();
            minus[[r, c]] -= h;
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < tol, "({r},{c}): analytic={a} fd={fd} rel={rel}");
        }
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let p = softmax(array![0.0, 0.0].view(), 1.0).unwrap();
        assert_eq!(p, array![0.5, 0.5]);
        let p = softmax(array![1000.0, 0.0].view(), 1.0).unwrap();
        assert!(p[0] > 0.999999 && p[1] < 1e-6);
        assert!(p.iter().all(|&v| v.is_finite()));
    }

    #[test]
    fn softmax_matches_direct_exp_normalize() {
        let logits = array![1.0, 2.0, 3.0];
        let p = softmax(logits.view(), 1.0).unwrap();
        let exps: Vec<f64> = logits.iter().map(|&z| z.exp()).collect();
        let sum: f64 = exps.iter().sum();
        for (a, e) in p.iter().zip(&exps) {
            assert!((a - e / sum).abs() < 1e-12);
        }
        assert!((p.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_analytic_values() {
        // Huge correct margin: loss ~ 0.
        let (loss, _) = cross_entropy(array![[50.0, 0.0]].view(), &[0]).unwrap();
        assert!(loss < 1e-12);
        // Uniform logits: ln C.
        for c in [2usize, 10, 100] {
            let logits = Array2::zeros((1, c));
            let (loss, _) = cross_entropy(logits.view(), &[0]).unwrap();
            assert!((loss - (c as f64).ln()).abs() < 1e-12, "C={c}");
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = seeds::rng(21, "loss-fd");
        let logits = random_logits(&mut rng, 4, 5);
        let labels = vec![0, 3, 2, 4];
        let (_, grad) = cross_entropy(logits.view(), &labels).unwrap();
        fd_check(
            |l| cross_entropy(l.view(), &labels).unwrap().0,
            &logits,
            &grad,
            1e-6,
        );
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let err = cross_entropy(array![[0.0, 1.0]].view(), &[2]).unwrap_err();
        assert!(matches!(err, CoreError::Input(_)));
    }

    #[test]
    fn kd_zero_for_identical_logits() {
        let mut rng = seeds::rng(8, "loss");
        let logits = random_logits(&mut rng, 3, 6);
        for t in [1.0, 2.0, 4.0] {
            let (v, g) = kd_divergence(logits.view(), logits.view(), t).unwrap();
            assert_eq!(v, 0.0);
            assert!(g.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn kd_matches_direct_summation_example() {
        // teacher [0,0] -> p=[0.5,0.5]; student logits ln(1),ln(3) -> q=[0.25,0.75]
        let teacher = array![[0.0, 0.0]];
        let student = array![[0.0, 3.0_f64.ln()]];
        let (v, _) = kd_divergence(student.view(), teacher.view(), 1.0).unwrap();
        let expected = 0.5 * (0.5_f64 / 0.25).ln() + 0.5 * (0.5_f64 / 0.75).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.143841).abs() < 1e-6);
    }

    #[test]
    fn kd_gradient_matches_finite_differences_both_directions() {
        let mut rng = seeds::rng(33, "loss-fd");
        let student = random_logits(&mut rng, 3, 4);
        let teacher = random_logits(&mut rng, 3, 4);
        for t in [1.0, 2.0, 4.0] {
            let (_, grad) = kd_divergence(student.view(), teacher.view(), t).unwrap();
            fd_check(
                |s| kd_divergence(s.view(), teacher.view(), t).unwrap().0,
                &student,
                &grad,
                1e-6,
            );
        }
        // Reversed direction through filtered_kd with an always-correct teacher.
        let labels = vec![0, 1, 2];
        let mut teacher = random_logits(&mut rng, 3, 4);
        for (i, &l) in labels.iter().enumerate() {
            teacher[[i, l]] = 10.0;
        }
        let (_, grad, used) = filtered_kd(
            student.view(),
            teacher.view(),
            &labels,
            2.0,
            KlDirection::StudentFirst,
        )
        .unwrap();
        assert_eq!(used, 3);
        fd_check(
            |s| {
                filtered_kd(s.view(), teacher.view(), &labels, 2.0, KlDirection::StudentFirst)
                    .unwrap()
                    .0
            },
            &student,
            &grad,
            1e-6,
        );
    }

    #[test]
    fn kd_nonnegative_on_random_inputs() {
        let mut rng = seeds::rng(14, "loss");
        for _ in 0..200 {
            let s = random_logits(&mut rng, 2, 5);
            let t = random_logits(&mut rng, 2, 5);
            let (v, _) = kd_divergence(s.view(), t.view(), 2.0).unwrap();
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn filtered_mask_and_empty_mask_convention() {
        let teacher = array![[5.0, 0.0], [0.0, 5.0], [5.0, 0.0], [0.0, 5.0]];
        let labels = [0usize, 1, 1, 0]; // first two correct
        let mask = filtered_mask(teacher.view(), &labels).unwrap();
        assert_eq!(mask, vec![true, true, false, false]);

        let student = array![[1.0, -1.0], [0.5, 0.2], [0.0, 0.0], [2.0, 1.0]];
        let (v, g, used) = filtered_kd(
            student.view(),
            teacher.view(),
            &labels,
            1.0,
            KlDirection::TeacherFirst,
        )
        .unwrap();
        assert_eq!(used, 2);
        // Sub-batch equivalence: unmasked KD on the two correct rows.
        let sub_s = array![[1.0, -1.0], [0.5, 0.2]];
        let sub_t = array![[5.0, 0.0], [0.0, 5.0]];
        let (v_sub, g_sub) = kd_divergence(sub_s.view(), sub_t.view(), 1.0).unwrap();
        assert_eq!(v, v_sub);
        assert_eq!(g.row(0), g_sub.row(0));
        assert_eq!(g.row(1), g_sub.row(1));
        assert!(g.row(2).iter().all(|&x| x == 0.0));

        // All-wrong teacher: KD exactly 0.
        let wrong = [1usize, 0, 0, 1];
        let (v, g, used) = filtered_kd(
            student.view(),
            teacher.view(),
            &wrong,
            1.0,
            KlDirection::TeacherFirst,
        )
        .unwrap();
        assert_eq!((v, used), (0.0, 0));
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn argmax_tie_counts_as_incorrect_unless_label_is_lowest_maximizer() {
        let teacher = array![[1.0, 1.0], [1.0, 1.0]];
        let mask = filtered_mask(teacher.view(), &[0, 1]).unwrap();
        assert_eq!(mask, vec![true, false]);
    }

    #[test]
    fn two_stage_schedule() {
        let cfg = LossConfig {
            two_stage_switch_round: 50,
            ..LossConfig::default()
        };
        assert_eq!(effective_alphas(&cfg, 0), (0.0, 0.0));
        assert_eq!(effective_alphas(&cfg, 49), (0.0, 0.0));
        assert_eq!(effective_alphas(&cfg, 50), (1.0, 1.0));
        let always = LossConfig {
            two_stage_switch_round: 0,
            alpha_s: 0.3,
            alpha_d: 0.7,
            ..LossConfig::default()
        };
        assert_eq!(effective_alphas(&always, 0), (0.3, 0.7));
    }

    #[test]
    fn device_loss_reduces_to_cross_entropy() {
        let mut rng = seeds::rng(2, "loss");
        let student = random_logits(&mut rng, 4, 3);
        let teacher = random_logits(&mut rng, 4, 3);
        let labels = vec![0, 1, 2, 0];
        let (ce, ce_grad) = cross_entropy(student.view(), &labels).unwrap();

        // alpha_d = 0.
        let cfg = LossConfig {
            alpha_d: 0.0,
            two_stage_switch_round: 0,
            ..LossConfig::default()
        };
        let out = device_loss(
            student.view(),
            Some(TeacherRows::all(teacher.view())),
            &labels,
            &cfg,
            10,
        )
        .unwrap();
        assert_eq!(out.loss, ce);
        assert_eq!(out.grad, ce_grad);

        // Stage 1: bitwise CE regardless of alphas.
        let cfg = LossConfig {
            two_stage_switch_round: 50,
            ..LossConfig::default()
        };
        let out = device_loss(
            student.view(),
            Some(TeacherRows::all(teacher.view())),
            &labels,
            &cfg,
            5,
        )
        .unwrap();
        assert_eq!(out.loss, ce);
        assert_eq!(out.grad, ce_grad);

        // Missing teacher: CE-only, flagged.
        let cfg = LossConfig {
            two_stage_switch_round: 0,
            ..LossConfig::default()
        };
        let out = device_loss(student.view(), None, &labels, &cfg, 3).unwrap();
        assert_eq!(out.loss, ce);
        assert!(out.teacher_missing);
    }

    #[test]
    fn device_loss_gradient_matches_finite_differences() {
        let mut rng = seeds::rng(55, "loss-fd");
        let student = random_logits(&mut rng, 5, 4);
        let mut teacher = random_logits(&mut rng, 5, 4);
        let labels = vec![1, 0, 3, 2, 1];
        // Make a mixed mask: three correct teacher rows.
        for &i in &[0usize, 2, 4] {
            teacher[[i, labels[i]]] = 9.0;
        }
        let present = vec![true, true, true, true, false];
        let cfg = LossConfig {
            alpha_d: 0.8,
            kd_temperature: 2.0,
            two_stage_switch_round: 0,
            filtered_kd: true,
            ..LossConfig::default()
        };
        let tr = TeacherRows {
            logits: teacher.view(),
            present: Some(&present),
        };
        let out = device_loss(student.view(), Some(tr), &labels, &cfg, 7).unwrap();
        fd_check(
            |s| {
                let tr = TeacherRows {
                    logits: teacher.view(),
                    present: Some(&present),
                };
                device_loss(s.view(), Some(tr), &labels, &cfg, 7).unwrap().loss
            },
            &student,
            &out.grad,
            1e-6,
        );
    }

    #[test]
    fn server_loss_reductions_and_gradient() {
        let mut rng = seeds::rng(66, "loss-fd");
        let logits = random_logits(&mut rng, 6, 3);
        let mut teacher = random_logits(&mut rng, 6, 3);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let device_of_row = vec![0, 0, 1, 1, 2, 2];
        for i in 0..6 {
            teacher[[i, labels[i]]] = 8.0; // all teachers correct
        }
        // alpha_s = 0 reduces to CE.
        let cfg = LossConfig {
            alpha_s: 0.0,
            two_stage_switch_round: 0,
            ..LossConfig::default()
        };
        let (ce, _) = cross_entropy(logits.view(), &labels).unwrap();
        let out = server_loss(
            logits.view(),
            Some(TeacherRows::all(teacher.view())),
            &labels,
            &device_of_row,
            3,
            &cfg,
            1,
        )
        .unwrap();
        assert_eq!(out.loss, ce);

        // Full composite gradient vs finite differences, both normalizations.
        for normalized in [true, false] {
            let cfg = LossConfig {
                alpha_s: 0.6,
                two_stage_switch_round: 0,
                server_kd_normalized: normalized,
                ..LossConfig::default()
            };
            let out = server_loss(
                logits.view(),
                Some(TeacherRows::all(teacher.view())),
                &labels,
                &device_of_row,
                3,
                &cfg,
                1,
            )
            .unwrap();
            fd_check(
                |l| {
                    server_loss(
                        l.view(),
                        Some(TeacherRows::all(teacher.view())),
                        &labels,
                        &device_of_row,
                        3,
                        &cfg,
                        1,
                    )
                    .unwrap()
                    .loss
                },
                &logits,
                &out.grad,
                1e-6,
            );
        }
    }

    #[test]
    fn single_device_server_loss_mirrors_device_loss_structure() {
        let mut rng = seeds::rng(77, "loss");
        let student = random_logits(&mut rng, 4, 3);
        let mut teacher = random_logits(&mut rng, 4, 3);
        let labels = vec![0, 2, 1, 0];
        for i in 0..4 {
            teacher[[i, labels[i]]] = 9.0;
        }
        let cfg = LossConfig {
            alpha_s: 0.5,
            alpha_d: 0.5,
            two_stage_switch_round: 0,
            ..LossConfig::default()
        };
        let dev = device_loss(
            student.view(),
            Some(TeacherRows::all(teacher.view())),
            &labels,
            &cfg,
            1,
        )
        .unwrap();
        let srv = server_loss(
            student.view(),
            Some(TeacherRows::all(teacher.view())),
            &labels,
            &[0, 0, 0, 0],
            1,
            &cfg,
            1,
        )
        .unwrap();
        assert!((dev.loss - srv.loss).abs() < 1e-15);
    }
}
