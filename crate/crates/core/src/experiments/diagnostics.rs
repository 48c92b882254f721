use serde::Serialize;

use crate::augment::SplitKnockoffCopy;
use crate::error::{Result, SkfError};
use crate::numerics::{pseudo_inverse_sym, Matrix, Tolerances, Vector};

/// Path-consistency quantities of the split LASSO at one `nu`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub nu: f64,
    /// `lambda_min(H^11)` on the support block.
    pub lambda_min_h11: f64,
    /// `|H^01 (H^11)^-1|_inf`, the maximum absolute row sum.
    pub incoherence_norm: f64,
    /// Agreement of `{W_i < 0}` with `{zeta_i r_i > 0}` over null `i` with
    /// `W_i != 0`; absent without the noise and knockoff copy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_lemma_agreement: Option<f64>,
}

/// What the sign check needs from a simulated run.
pub struct SignCheck<'a> {
    pub eps: &'a Vector,
    pub copy: &'a SplitKnockoffCopy,
    pub w: &'a Vector,
    pub r: &'a Vector,
}

/// `H_nu = I - D (X^T X / n + D^T D / nu)^+ D^T / nu`.
pub fn h_matrix(x: &Matrix, d: &Matrix, nu: f64) -> Result<Matrix> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(SkfError::invalid(format!("nu must be positive and finite, got {nu}")));
    }
    if d.ncols() != x.ncols() {
        return Err(SkfError::invalid("D and X have different column counts"));
    }
    let n = x.nrows() as f64;
    let sigma = x.tr_mul(x) / n + d.tr_mul(d) / nu;
    let (pinv, _) = pseudo_inverse_sym(&sigma, Tolerances::default().rank)?;
    let m = d.nrows();
    let h = Matrix::identity(m, m) - d * pinv * d.transpose() / nu;
    Ok((&h + h.transpose()) * 0.5)
}

pub fn diagnostics(
    x: &Matrix,
    d: &Matrix,
    nu: f64,
    support: &[usize],
    sign: Option<SignCheck<'_>>,
) -> Result<DiagnosticsReport> {
    let m = d.nrows();
    if support.is_empty() {
        return Err(SkfError::invalid("the support set is empty"));
    }
    if support.iter().any(|&i| i >= m) {
        return Err(SkfError::invalid(format!("support index out of range 0..{m}")));
    }
    let mut in_support = vec![false; m];
    for &i in support {
        in_support[i] = true;
    }
    let nulls: Vec<usize> = (0..m).filter(|&i| !in_support[i]).collect();

    let h = h_matrix(x, d, nu)?;
    let h11 = h.select_rows(support.iter()).select_columns(support.iter());
    let lambda_min_h11 = h11.symmetric_eigenvalues().min();
    let (h11_inv, _) = pseudo_inverse_sym(&h11, Tolerances::default().rank)?;
    let h01 = h.select_rows(nulls.iter()).select_columns(support.iter());
    let ratio = h01 * h11_inv;
    let incoherence_norm = (0..ratio.nrows())
        .map(|i| ratio.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);

    let sign_lemma_agreement = match sign {
        None => None,
        Some(check) => sign_agreement(&check, &nulls, x.nrows())?,
    };
    Ok(DiagnosticsReport { nu, lambda_min_h11, incoherence_norm, sign_lemma_agreement })
}

fn sign_agreement(check: &SignCheck<'_>, nulls: &[usize], n: usize) -> Result<Option<f64>> {
    let m = check.w.len();
    if check.eps.len() != n || check.r.len() != m || check.copy.a_gamma_tilde.ncols() != m {
        return Err(SkfError::invalid("sign check inputs have inconsistent dimensions"));
    }
    // zeta = A~_{gamma,1}^T eps / sqrt(n)
    let zeta = check.copy.upper_block(n).tr_mul(check.eps) / (n as f64).sqrt();
    let (mut agree, mut total) = (0usize, 0usize);
    for &i in nulls {
        if check.w[i] == 0.0 {
            continue;
        }
        total += 1;
        if (check.w[i] < 0.0) == (zeta[i] * check.r[i] > 0.0) {
            agree += 1;
        }
    }
    Ok((total > 0).then(|| agree as f64 / total as f64))
}
