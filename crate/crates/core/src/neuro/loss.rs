//! Softmax cross-entropy and contrastive loss with analytic gradients.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of one row against a target distribution; returns the loss
/// and the gradient with respect to the logits.
pub fn xent_row(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let logp = log_softmax(logits);
    let loss = -target.iter().zip(&logp).map(|(t, l)| t * l).sum::<f64>();
    let grad = logp
        .iter()
        .zip(target)
        .map(|(l, t)| l.exp() - t)
        .collect();
    (loss, grad)
}

/// Mean cross-entropy over `[N, C]` logits with hard labels.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = check_2d(logits)?;
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    let mut targets = vec![0.0; n * c];
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::LabelOutOfRange { index: y, classes: c });
        }
        targets[i * c + y] = 1.0;
    }
    softmax_xent_soft(logits, &Tensor::new(vec![n, c], targets)?)
}

/// Mean cross-entropy against per-row target distributions.
pub fn softmax_xent_soft(logits: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    let (n, c) = check_2d(logits)?;
    if targets.shape() != logits.shape() {
        return Err(Error::DimensionMismatch {
            expected: n * c,
            actual: targets.data().len(),
        });
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for i in 0..n {
        let (l, g) = xent_row(logits.row(i), targets.row(i));
        total += l;
        grad.extend(g.into_iter().map(|v| v / n as f64));
    }
    Ok((total / n as f64, Tensor::new(vec![n, c], grad)?))
}

fn check_2d(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [0, _] => Err(Error::EmptyBatch),
        [n, c] => Ok((*n, *c)),
        s => Err(Error::Shape {
            layer: "loss".into(),
            message: format!("expected [N, C] logits, got {s:?}"),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contrastive {
    pub loss: f64,
    pub distance: f64,
    pub grad_first: Vec<f64>,
    pub grad_second: Vec<f64>,
}

/// `d^2` for similar pairs, `max(0, margin - d)^2` for dissimilar ones, where
/// `d` is the Euclidean distance between the embeddings.
pub fn contrastive_loss(a: &[f64], b: &[f64], similar: bool, margin: f64) -> Result<Contrastive> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("zero-dimension embeddings".into()));
    }
    if margin.is_nan() || margin <= 0.0 {
        return Err(Error::InvalidArgument(format!("margin must be positive, got {margin}")));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let d2: f64 = diff.iter().map(|v| v * v).sum();
    let d = d2.sqrt();
    let (loss, coeff) = if similar {
        (d2, 2.0)
    } else if d < margin {
        let gap = margin - d;
        // d/d(diff) of gap^2 is -2 gap diff / d; the pair is pushed apart along diff.
        let c = if d > 1e-12 { -2.0 * gap / d } else { 0.0 };
        (gap * gap, c)
    } else {
        (0.0, 0.0)
    };
    let grad_first: Vec<f64> = diff.iter().map(|v| coeff * v).collect();
    let grad_second = grad_first.iter().map(|g| -g).collect();
    Ok(Contrastive {
        loss,
        distance: d,
        grad_first,
        grad_second,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_classes() {
        let logits = Tensor::zeros(vec![3, 6]);
        let (loss, grad) = softmax_xent(&logits, &[0, 3, 5]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        let row = grad.row(1);
        assert!((row[3] - (1.0 / 6.0 - 1.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_costs_nothing() {
        let logits = Tensor::new(vec![1, 3], vec![0.0, 800.0, 0.0]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[1]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = Tensor::new(vec![2, 4], vec![0.3, -1.2, 2.0, 0.1, 1.5, 0.2, -0.7, 0.0]).unwrap();
        let labels = [2, 0];
        let (_, grad) = softmax_xent(&logits, &labels).unwrap();
        let h = 1e-6;
        for k in 0..8 {
            let mut plus = logits.clone();
            plus.data_mut()[k] += h;
            let mut minus = logits.clone();
            minus.data_mut()[k] -= h;
            let numeric = (softmax_xent(&plus, &labels).unwrap().0
                - softmax_xent(&minus, &labels).unwrap().0)
                / (2.0 * h);
            assert!((numeric - grad.data()[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            softmax_xent(&Tensor::zeros(vec![1, 3]), &[3]),
            Err(Error::LabelOutOfRange { index: 3, classes: 3 })
        ));
        assert!(softmax_xent(&Tensor::zeros(vec![2, 3]), &[0]).is_err());
        assert!(contrastive_loss(&[0.0; 3], &[0.0; 4], true, 1.0).is_err());
        assert!(contrastive_loss(&[], &[], true, 1.0).is_err());
        assert!(contrastive_loss(&[0.0], &[1.0], false, 0.0).is_err());
    }

    #[test]
    fn contrastive_cases() {
        let same = contrastive_loss(&[1.0, 2.0], &[1.0, 2.0], true, 1.0).unwrap();
        assert_eq!(same.loss, 0.0);
        let far = contrastive_loss(&[0.0, 0.0], &[3.0, 4.0], false, 1.0).unwrap();
        assert_eq!(far.loss, 0.0);
        assert!(far.grad_first.iter().all(|&g| g == 0.0));
        let near = contrastive_loss(&[0.0, 0.0], &[0.3, 0.4], false, 1.0).unwrap();
        assert!((near.loss - 0.25).abs() < 1e-12);
        let sim = contrastive_loss(&[0.0, 0.0], &[0.3, 0.4], true, 1.0).unwrap();
        assert!((sim.loss - 0.25).abs() < 1e-12);
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let a = [0.2, -0.1, 0.4];
        let b = [0.1, 0.3, 0.0];
        for similar in [true, false] {
            let c = contrastive_loss(&a, &b, similar, 1.0).unwrap();
            let h = 1e-6;
            for k in 0..3 {
                let mut p = a;
                p[k] += h;
                let mut m = a;
                m[k] -= h;
                let num = (contrastive_loss(&p, &b, similar, 1.0).unwrap().loss
                    - contrastive_loss(&m, &b, similar, 1.0).unwrap().loss)
                    / (2.0 * h);
                assert!((num - c.grad_first[k]).abs() < 1e-8, "{similar} {k}");
                assert_eq!(c.grad_second[k], -c.grad_first[k]);
            }
        }
    }
}
