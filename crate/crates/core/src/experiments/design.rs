use serde::{Deserialize, Serialize};

use crate::error::{Result, SkfError};
use crate::numerics::Matrix;

/// Structural transforms used in the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DKind {
    /// Identity: plain sparsity.
    #[default]
    #[serde(alias = "d1")]
    D1,
    /// First differences on a line: piecewise-constant signals.
    #[serde(alias = "d2")]
    D2,
    /// `[D1; D2]`, so `m = 2p - 1`.
    #[serde(alias = "d3")]
    D3,
    /// Read from `d_file`.
    #[serde(rename = "file")]
    File,
}

impl std::str::FromStr for DKind {
    type Err = SkfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d1" => Ok(DKind::D1),
            "d2" => Ok(DKind::D2),
            "d3" => Ok(DKind::D3),
            "file" => Ok(DKind::File),
            other => Err(SkfError::invalid(format!("unknown D kind '{other}'"))),
        }
    }
}

fn difference(p: usize) -> Matrix {
    let mut d = Matrix::zeros(p - 1, p);
    for i in 0..p - 1 {
        d[(i, i)] = 1.0;
        d[(i, i + 1)] = -1.0;
    }
    d
}

pub fn make_d(kind: DKind, p: usize) -> Result<Matrix> {
    match kind {
        DKind::D1 => {
            if p == 0 {
                return Err(SkfError::invalid("p must be positive"));
            }
            Ok(Matrix::identity(p, p))
        }
        DKind::D2 | DKind::D3 if p < 2 => Err(SkfError::invalid(format!(
            "difference operators need p >= 2, got p = {p}"
        ))),
        DKind::D2 => Ok(difference(p)),
        DKind::D3 => {
            let mut d = Matrix::zeros(2 * p - 1, p);
            d.view_mut((0, 0), (p, p)).fill_with_identity();
            d.view_mut((p, 0), (p - 1, p)).copy_from(&difference(p));
            Ok(d)
        }
        DKind::File => Err(SkfError::invalid("a file-based D has to be read, not generated")),
    }
}
