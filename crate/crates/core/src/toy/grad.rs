use super::policy::{log_softmax, TabularPolicy};
use crate::teach::LossEstimator;

/// `KL(p || q)` between two full rows given as log-probabilities.
pub fn kl_logprobs(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}

/// Reverse KL `KL(student || teacher)` at `state`.
pub fn reverse_kl(student: &TabularPolicy, teacher: &TabularPolicy, state: usize) -> f64 {
    kl_logprobs(&student.log_probs(state), &teacher.log_probs(state))
}

/// Forward KL `KL(teacher || student)` at `state`.
pub fn forward_kl(student: &TabularPolicy, teacher: &TabularPolicy, state: usize) -> f64 {
    kl_logprobs(&teacher.log_probs(state), &student.log_probs(state))
}

/// Gradient of the distillation loss at `state` with respect to that state's
/// logit row. Only this row has a nonzero gradient.
///
/// `FullKl` differentiates the reverse KL exactly:
/// `p ⊙ (log p − log q − KL(p || q))`. `SampledToken` differentiates the
/// surrogate `A · log p(y)` with the advantage
/// `A = log p(y) − log q(y)` held fixed, giving `A · (e_y − p)`.
pub fn opd_grad(
    student: &TabularPolicy,
    teacher: &TabularPolicy,
    state: usize,
    estimator: LossEstimator,
    sampled: u32,
) -> Vec<f64> {
    let lp = student.log_probs(state);
    let lq = teacher.log_probs(state);
    match estimator {
        LossEstimator::FullKl => {
            let kl = kl_logprobs(&lp, &lq);
            lp.iter()
                .zip(&lq)
                .map(|(a, b)| a.exp() * (a - b - kl))
                .collect()
        }
        LossEstimator::SampledToken => {
            let y = sampled as usize;
            let adv = lp[y] - lq[y];
            lp.iter()
                .enumerate()
                .map(|(v, a)| adv * (f64::from(u8::from(v == y)) - a.exp()))
                .collect()
        }
    }
}

/// Gradient of `KL(teacher || softmax(row))` with respect to `row`: `p − q`.
pub fn forward_kl_grad(row: &[f64], teacher_logprobs: &[f64]) -> Vec<f64> {
    log_softmax(row)
        .iter()
        .zip(teacher_logprobs)
        .map(|(lp, lq)| lp.exp() - lq.exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn zero_gradient_when_student_matches_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = TabularPolicy::random(8, 1, 1.0, &mut rng).unwrap();
        let g = opd_grad(&p, &p, 3, LossEstimator::FullKl, 0);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn full_kl_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = TabularPolicy::random(8, 1, 1.5, &mut rng).unwrap();
        let t = TabularPolicy::random(8, 1, 1.5, &mut rng).unwrap();
        let g = opd_grad(&s, &t, 2, LossEstimator::FullKl, 0);
        let h = 1e-5;
        let fd: Vec<f64> = (0..8)
            .map(|v| {
                let mut a = s.clone();
                a.row_mut(2)[v] += h;
                let mut b = s.clone();
                b.row_mut(2)[v] -= h;
                (reverse_kl(&a, &t, 2) - reverse_kl(&b, &t, 2)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(&g, &fd) < 1e-6, "{}", rel_err(&g, &fd));
        assert!(g.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn sampled_gradient_sums_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = TabularPolicy::random(8, 1, 1.5, &mut rng).unwrap();
        let t = TabularPolicy::random(8, 1, 1.5, &mut rng).unwrap();
        let g = opd_grad(&s, &t, 1, LossEstimator::SampledToken, 3);
        assert!(g.iter().sum::<f64>().abs() < 1e-14);
    }
}
