//! Triplet hinge loss on cosine similarity and its analytic gradient.

use super::{Gradient, HeadParameters, TrainError};
use crate::linalg::{dot, norm};
use crate::metrics::{cosine, MetricsError};
use crate::Scalar;

/// `max(cos(s, n) − cos(s, p) + margin, 0)`.
pub fn triplet_loss<S: Scalar>(s: &[S], p: &[S], n: &[S], margin: S) -> Result<S, MetricsError> {
    let pre = cosine(s, n)? - cosine(s, p)? + margin;
    Ok(pre.max(S::zero()))
}

/// d cos(a, b) / d a, plus cos(a, b).
fn cosine_grad<S: Scalar>(a: &[S], b: &[S]) -> Result<(S, Vec<S>), MetricsError> {
    let (na, nb) = (norm(a), norm(b));
    if na == S::zero() || nb == S::zero() {
        return Err(MetricsError::ZeroNorm);
    }
    let c = dot(a, b) / (na * nb);
    let inv = S::one() / (na * nb);
    let self_term = c / (na * na);
    Ok((c, a.iter().zip(b).map(|(&x, &y)| y * inv - self_term * x).collect()))
}

/// Loss of one triplet after projection, and its gradient with respect to
/// the head. The gradient is zero when the hinge is inactive.
pub fn loss_gradient<S: Scalar>(
    head: &HeadParameters<S>,
    s: &[S],
    p: &[S],
    n: &[S],
    margin: S,
) -> Result<(S, Gradient<S>), TrainError> {
    let u = head.project(s)?;
    let v = head.project(p)?;
    let w = head.project(n)?;
    let (cos_uw, d_uw_u) = cosine_grad(&u, &w)?;
    let (cos_uv, d_uv_u) = cosine_grad(&u, &v)?;
    let pre = cos_uw - cos_uv + margin;
    let mut grad = Gradient::zeros_like(head);
    if pre <= S::zero() {
        return Ok((S::zero(), grad));
    }
    let (_, d_uv_v) = cosine_grad(&v, &u)?;
    let (_, d_uw_w) = cosine_grad(&w, &u)?;
    let g_u: Vec<S> = d_uw_u.iter().zip(&d_uv_u).map(|(&a, &b)| a - b).collect();
    let g_v: Vec<S> = d_uv_v.iter().map(|&x| -x).collect();
    let g_w = d_uw_w;
    let k = head.k();
    for r in 0..k {
        let row = grad.weight.row_mut(r);
        let (gu, gv, gw) = (g_u[r], g_v[r], g_w[r]);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = gu * s[j] + gv * p[j] + gw * n[j];
        }
    }
    if let Some(b) = grad.bias.as_mut() {
        for r in 0..k {
            b[r] = g_u[r] + g_v[r] + g_w[r];
        }
    }
    Ok((pre, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::trainer::init_head;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Unit vector `s` plus vectors at prescribed cosines to it, in 2-D.
    fn at_cos(c: f64) -> Vec<f64> {
        vec![c, (1.0 - c * c).sqrt()]
    }

    #[test]
    fn loss_examples() {
        let s = [1.0, 0.0];
        assert_eq!(triplet_loss(&s, &at_cos(0.9), &at_cos(0.5), 0.2).unwrap(), 0.0);
        assert!((triplet_loss(&s, &at_cos(0.6), &at_cos(0.7), 0.2).unwrap() - 0.3).abs() < 1e-12);
        assert!((triplet_loss(&s, &s, &s, 0.2).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(triplet_loss(&s, &[0.0, 0.0], &s, 0.2), Err(MetricsError::ZeroNorm));
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let head = init_head::<f64>(2, 2, 0, 0.0).unwrap();
        let (loss, g) = loss_gradient(&head, &[1.0, 0.0], &at_cos(0.9), &at_cos(0.5), 0.2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.weight.as_slice().iter().all(|&x| x == 0.0));
    }

    fn loss_at(head: &HeadParameters<f64>, t: &[Vec<f64>; 3], m: f64) -> f64 {
        let (u, v, w) = (head.project(&t[0]).unwrap(), head.project(&t[1]).unwrap(), head.project(&t[2]).unwrap());
        triplet_loss(&u, &v, &w, m).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences_with_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut head = init_head::<f64>(6, 4, 1, 0.3).unwrap();
        head.bias = Some((0..4).map(|_| rng.random_range(-0.2..0.2)).collect());
        let t: [Vec<f64>; 3] = std::array::from_fn(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
        let margin = 2.0;
        let (loss, g) = loss_gradient(&head, &t[0], &t[1], &t[2], margin).unwrap();
        assert!(loss > 0.0);
        let h = 1e-6;
        for i in 0..4 {
            let mut plus = head.clone();
            plus.bias.as_mut().unwrap()[i] += h;
            let mut minus = head.clone();
            minus.bias.as_mut().unwrap()[i] -= h;
            let fd = (loss_at(&plus, &t, margin) - loss_at(&minus, &t, margin)) / (2.0 * h);
            assert!((fd - g.bias.as_ref().unwrap()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn input_scaling_leaves_gradient_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let head = init_head::<f64>(5, 3, 2, 0.5).unwrap();
        let t: [Vec<f64>; 3] = std::array::from_fn(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect());
        let (l1, g1) = loss_gradient(&head, &t[0], &t[1], &t[2], 2.0).unwrap();
        let d: Vec<Vec<f64>> = t.iter().map(|v| v.iter().map(|x| 2.0 * x).collect()).collect();
        let (l2, g2) = loss_gradient(&head, &d[0], &d[1], &d[2], 2.0).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.weight.as_slice().iter().zip(g2.weight.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Random head and triplet with an active hinge.
    fn active_instance(rng: &mut ChaCha8Rng, d: usize, k: usize) -> (HeadParameters<f64>, [Vec<f64>; 3], f64) {
        loop {
            let head = init_head::<f64>(d, k, rng.random(), 0.5).unwrap();
            let t: [Vec<f64>; 3] = std::array::from_fn(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
            let margin = rng.random_range(0.0..0.5);
            if loss_at(&head, &t, margin) > 1e-3 {
                return (head, t, margin);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let h = 1e-6;
        for _ in 0..20 {
            let (head, t, margin) = active_instance(&mut rng, 16, 8);
            let (_, g) = loss_gradient(&head, &t[0], &t[1], &t[2], margin).unwrap();
            let mut fd = Matrix::zeros(8, 16);
            for r in 0..8 {
                for c in 0..16 {
                    let mut plus = head.clone();
                    plus.weight[(r, c)] += h;
                    let mut minus = head.clone();
                    minus.weight[(r, c)] -= h;
                    fd[(r, c)] = (loss_at(&plus, &t, margin) - loss_at(&minus, &t, margin)) / (2.0 * h);
                }
            }
            let diff: Vec<f64> = g.weight.as_slice().iter().zip(fd.as_slice()).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(fd.as_slice()).max(1e-12);
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn swapping_positive_and_negative_flips_pre_hinge() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let t: [Vec<f64>; 3] = std::array::from_fn(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect());
            let forward = cosine(&t[0], &t[2]).unwrap() - cosine(&t[0], &t[1]).unwrap();
            let swapped = cosine(&t[0], &t[1]).unwrap() - cosine(&t[0], &t[2]).unwrap();
            assert_eq!(forward, -swapped);
            assert!(triplet_loss(&t[0], &t[1], &t[2], 0.3).unwrap() >= 0.0);
        }
    }
}
