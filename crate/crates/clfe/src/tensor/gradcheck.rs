use super::{Tape, Tensor, TensorError, TensorId};

pub const DEFAULT_H: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Outcome of comparing tape gradients against central finite differences.
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, element index, ad gradient, fd gradient) of the worst
    /// checked element.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Elements skipped because the one-sided difference slopes disagree
    /// (a non-smooth point, e.g. relu evaluated exactly at zero).
    pub skipped: Vec<(usize, usize)>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Compares reverse-mode gradients of `f` with central finite differences
/// `(f(x+h·e) - f(x-h·e)) / 2h` at every element of every input. `f` must
/// build a scalar loss on the given tape from the given tensor handles and
/// must be deterministic.
pub fn grad_check<F>(
    mut f: F,
    inputs: &[Tensor],
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &[TensorId]) -> Result<TensorId, TensorError>,
{
    // Reverse-mode pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;
    let ad_grads: Vec<Tensor> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| tape.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
        .collect();

    let mut eval = |values: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let f0 = eval(&work)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
        skipped: Vec::new(),
        tol,
    };
    for (k, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let orig = input.data()[e];
            work[k].data_mut()[e] = orig + h;
            let fp = eval(&work)?;
            work[k].data_mut()[e] = orig - h;
            let fm = eval(&work)?;
            work[k].data_mut()[e] = orig;

            let fd = (fp - fm) / (2.0 * h);
            let s_plus = (fp - f0) / h;
            let s_minus = (f0 - fm) / h;
            if (s_plus - s_minus).abs() > 1e-2 * s_plus.abs().max(s_minus.abs()).max(1.0) {
                report.skipped.push((k, e));
                continue;
            }
            let ad = ad_grads[k].data()[e];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-3);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((k, e, ad, fd));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_negligible_error() {
        let x = Tensor::row(&[0.4, -1.2, 2.0, 0.7, -0.3]);
        let report = grad_check(|t, ids| Ok(t.sum_all(ids[0])), &[x], DEFAULT_H, DEFAULT_TOL).unwrap();
        assert!(report.max_rel_err < 1e-10, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn sum_of_sigmoid_passes_default_tolerance() {
        let x = Tensor::row(&[0.3]);
        let report = grad_check(
            |t, ids| {
                let y = t.sigmoid(ids[0]);
                Ok(t.sum_all(y))
            },
            &[x],
            DEFAULT_H,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "rel err {}", report.max_rel_err);
    }

    #[test]
    fn relu_at_zero_is_flagged_and_skipped() {
        let x = Tensor::row(&[0.0, 1.0]);
        let report = grad_check(
            |t, ids| {
                let y = t.relu(ids[0]);
                Ok(t.sum_all(y))
            },
            &[x],
            DEFAULT_H,
            DEFAULT_TOL,
        )
        .unwrap();
        assert_eq!(report.skipped, vec![(0, 0)]);
        assert_eq!(report.checked, 1);
        assert!(report.passed());
    }
}
