//! Knockoff filter: `W` statistics, data-dependent thresholds and selection.

use serde::Serialize;

use crate::error::{Result, SkfError};
use crate::numerics::Vector;

/// `W_i = (-1)^{1(Z~_i > Z_i)} max(Z_i, Z~_i)` and its symmetrised variant
/// `W^s_i = Z_i sign(Z_i - Z~_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WStatistics {
    pub w: Vector,
    pub w_s: Vector,
}

pub fn compute_w_statistics(z: &Vector, z_tilde: &Vector) -> Result<WStatistics> {
    if z.len() != z_tilde.len() {
        return Err(SkfError::invalid(format!(
            "Z has length {} but Z~ has length {}",
            z.len(),
            z_tilde.len()
        )));
    }
    if z.iter().chain(z_tilde.iter()).any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(SkfError::invalid("significance statistics must be finite and >= 0"));
    }
    let m = z.len();
    let mut w = Vector::zeros(m);
    let mut w_s = Vector::zeros(m);
    for i in 0..m {
        let (a, b) = (z[i], z_tilde[i]);
        if a > b {
            w[i] = a;
            w_s[i] = a;
        } else if a < b {
            w[i] = -b;
            w_s[i] = -a;
        }
    }
    Ok(WStatistics { w, w_s })
}

/// Same combination rule applied to a difference statistic `Z - Z~`.
pub fn difference_statistics(z: &Vector, z_tilde: &Vector) -> Result<Vector> {
    if z.len() != z_tilde.len() {
        return Err(SkfError::invalid("Z and Z~ lengths differ"));
    }
    Ok(z - z_tilde)
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SkfError::invalid(format!("q must lie in (0, 1), got {q}")));
    }
    Ok(())
}

/// Data-dependent knockoff (or knockoff+) threshold. Returns `f64::INFINITY`
/// when no candidate `t` satisfies the estimated-FDP bound.
pub fn knockoff_threshold(w: &Vector, q: f64, plus: bool) -> Result<f64> {
    check_q(q)?;
    let offset = if plus { 1usize } else { 0 };
    let mut candidates: Vec<f64> = w.iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite W"));
    candidates.dedup();

    let mut neg: Vec<f64> = w.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    let mut pos: Vec<f64> = w.iter().filter(|v| **v > 0.0).copied().collect();
    neg.sort_by(|a, b| a.partial_cmp(b).expect("finite W"));
    pos.sort_by(|a, b| a.partial_cmp(b).expect("finite W"));

    // Ascending scan; counts of {W <= -t} and {W >= t} only shrink as t grows.
    let (mut ni, mut pi) = (0usize, 0usize);
    for &t in &candidates {
        while ni < neg.len() && neg[ni] < t {
            ni += 1;
        }
        while pi < pos.len() && pos[pi] < t {
            pi += 1;
        }
        let n_neg = neg.len() - ni;
        let n_pos = pos.len() - pi;
        let ratio = (n_neg + offset) as f64 / n_pos.max(1) as f64;
        if ratio <= q {
            return Ok(t);
        }
    }
    Ok(f64::INFINITY)
}

/// Selected set and, when the true support is known, FDP and power.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// 0-based selected indices, ascending.
    pub selected: Vec<usize>,
    pub fdp: Option<f64>,
    pub power: Option<f64>,
}

pub fn select(w: &Vector, threshold: f64) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] >= threshold).collect()
}

pub fn select_and_evaluate(
    w: &Vector,
    threshold: f64,
    truth: Option<&[usize]>,
    m: usize,
) -> Result<Evaluation> {
    if w.len() != m {
        return Err(SkfError::invalid(format!("W has length {} but m = {m}", w.len())));
    }
    let selected = select(w, threshold);
    let (fdp, power) = match truth {
        None => (None, None),
        Some(support) => {
            let mut is_signal = vec![false; m];
            for &i in support {
                if i >= m {
                    return Err(SkfError::invalid(format!("support index {i} out of range")));
                }
                is_signal[i] = true;
            }
            let true_hits = selected.iter().filter(|&&i| is_signal[i]).count();
            let false_hits = selected.len() - true_hits;
            let n_signal = is_signal.iter().filter(|&&s| s).count();
            (
                Some(false_hits as f64 / selected.len().max(1) as f64),
                Some(true_hits as f64 / n_signal.max(1) as f64),
            )
        }
    };
    Ok(Evaluation { selected, fdp, power })
}

/// `M_t(V) = #{V_i >= t} / (1 + #{V_i <= -t})`, optionally over `nulls` only.
pub fn m_ratio(v: &Vector, t: f64, nulls: Option<&[usize]>) -> f64 {
    let count = |pred: &dyn Fn(f64) -> bool| -> usize {
        match nulls {
            Some(idx) => idx.iter().filter(|&&i| pred(v[i])).count(),
            None => v.iter().filter(|&&x| pred(x)).count(),
        }
    };
    let pos = count(&|x| x >= t);
    let neg = count(&|x| x <= -t);
    pos as f64 / (1 + neg) as f64
}

/// `(M_t(W), M_t(W^s))` for each threshold.
pub fn ms_ratio_curve(
    stats: &WStatistics,
    thresholds: &[f64],
    nulls: Option<&[usize]>,
) -> Result<Vec<(f64, f64)>> {
    if thresholds.iter().any(|t| !(*t > 0.0)) {
        return Err(SkfError::invalid("thresholds must be positive"));
    }
    if let Some(idx) = nulls {
        if idx.iter().any(|&i| i >= stats.w.len()) {
            return Err(SkfError::invalid("null index out of range"));
        }
    }
    Ok(thresholds
        .iter()
        .map(|&t| (m_ratio(&stats.w, t, nulls), m_ratio(&stats.w_s, t, nulls)))
        .collect())
}
