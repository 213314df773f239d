use super::{dim_err, Graph, NodeId, Tensor, TensorError};

/// Compares `backward()` gradients of a scalar function against central
/// finite differences.
///
/// `f` receives a fresh graph and one leaf per entry of `params` and must
/// return a scalar node. The result is the maximum over all parameter
/// elements of `|analytic − numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, TensorError>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(dim_err(
            "finite_diff_check",
            format!("step must be positive, got {h}"),
        ));
    }

    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| g.grad_tensor(id)).collect();

    let eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &ids)?;
        let v = g
            .value(out)
            .item()
            .ok_or_else(|| TensorError::NonScalarLoss(g.value(out).shape().to_vec()))?;
        if !v.is_finite() {
            return Err(TensorError::NonFinite(format!("f = {v}")));
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst = 0.0f64;
    for (p, grad) in analytic.iter().enumerate() {
        for e in 0..params[p].numel() {
            let original = params[p].data()[e];
            work[p].data_mut()[e] = original + h;
            let plus = eval(&work)?;
            work[p].data_mut()[e] = original - h;
            let minus = eval(&work)?;
            work[p].data_mut()[e] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[e];
            let rel = (a - numeric).abs() / f64::max(1e-12, a.abs() + numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let w = Tensor::vector(vec![0.3, -1.2, 2.5]);
        let x = Tensor::vector(vec![1.5, 0.25, -2.0]);
        let err = finite_diff_check(
            |g, ids| {
                let p = g.mul(ids[0], ids[1])?;
                Ok(g.sum(p))
            },
            &[w, x],
            1e-5,
        )
        .unwrap();
        // the product is bilinear, so central differences are exact per element
        assert!(err <= 1e-9, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let err =
            finite_diff_check(|g, _| Ok(g.constant(Tensor::scalar(4.0))), &[x], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn matmul_sum_matches_finite_differences() {
        let a = Tensor::new(vec![2, 3], vec![0.1, -0.4, 0.7, 1.2, 0.3, -0.9]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![0.5, -1.1, 0.2, 0.8, -0.6, 0.4]).unwrap();
        let err = finite_diff_check(
            |g, ids| {
                let p = g.matmul(ids[0], ids[1])?;
                let q = g.mul(p, p)?;
                Ok(g.sum(q))
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "err = {err}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::vector(vec![1.0]);
        assert!(finite_diff_check(|g, ids| Ok(g.sum(ids[0])), &[x], 0.0).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::vector(vec![1.0]);
        let r = finite_diff_check(|g, ids| Ok(g.scale(ids[0], f64::INFINITY)), &[x], 1e-5);
        assert!(r.is_err());
    }
}
