//! Least squares by streaming Householder QR.
//!
//! Rows are buffered in blocks and folded into an `n × n` triangular factor,
//! so memory stays `O(n²)` however many rows arrive. Rank is judged from the
//! singular values of the final factor, which equal those of the full design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const BLOCK_ROWS: usize = 2048;

#[derive(Clone, Debug)]
pub struct QrAccumulator {
    n: usize,
    k: usize,
    r: DMatrix<f64>,
    qtb: DMatrix<f64>,
    leftover_sse: DVector<f64>,
    rows: usize,
    started: bool,
    block_a: Vec<f64>,
    block_b: Vec<f64>,
}

/// Solution of `min ‖A X - B‖` for `k` right-hand sides.
#[derive(Clone, Debug)]
pub struct LstsqSolution {
    /// `n × k`.
    pub coefficients: DMatrix<f64>,
    pub rank: usize,
    pub rows: usize,
    /// Root-mean-square residual per right-hand side.
    pub residual_rms: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl LstsqSolution {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.coefficients.column(j).iter().copied().collect()
    }
}

impl QrAccumulator {
    pub fn new(n_unknowns: usize, n_rhs: usize) -> Self {
        Self {
            n: n_unknowns,
            k: n_rhs,
            r: DMatrix::zeros(n_unknowns, n_unknowns),
            qtb: DMatrix::zeros(n_unknowns, n_rhs),
            leftover_sse: DVector::zeros(n_rhs),
            rows: 0,
            started: false,
            block_a: Vec::with_capacity(BLOCK_ROWS * n_unknowns),
            block_b: Vec::with_capacity(BLOCK_ROWS * n_rhs),
        }
    }

    pub fn unknowns(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> usize {
        self.rows + self.block_a.len() / self.n.max(1)
    }

    pub fn push_row(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.n);
        debug_assert_eq!(b.len(), self.k);
        self.block_a.extend_from_slice(a);
        self.block_b.extend_from_slice(b);
        if self.block_a.len() >= BLOCK_ROWS * self.n {
            self.flush();
        }
    }

    /// Add `λ‖x‖²` to the objective (Tikhonov damping).
    pub fn add_ridge(&mut self, lambda: f64) {
        let s = lambda.sqrt();
        let zeros = vec![0.0; self.k];
        for i in 0..self.n {
            let mut row = vec![0.0; self.n];
            row[i] = s;
            self.push_row(&row, &zeros);
        }
    }

    fn flush(&mut self) {
        let m = self.block_a.len() / self.n.max(1);
        if m == 0 {
            return;
        }
        let top = if self.started { self.n } else { 0 };
        let mut a = DMatrix::zeros(top + m, self.n);
        let mut b = DMatrix::zeros(top + m, self.k);
        if self.started {
            a.view_mut((0, 0), (self.n, self.n)).copy_from(&self.r);
            b.view_mut((0, 0), (self.n, self.k)).copy_from(&self.qtb);
        }
        for i in 0..m {
            for j in 0..self.n {
                a[(top + i, j)] = self.block_a[i * self.n + j];
            }
            for j in 0..self.k {
                b[(top + i, j)] = self.block_b[i * self.k + j];
            }
        }
        self.rows += m;
        self.block_a.clear();
        self.block_b.clear();

        let total = top + m;
        let qr = a.qr();
        qr.q_tr_mul(&mut b);
        let r = qr.r();
        // `r` is min(total, n) × n
        let kept = total.min(self.n);
        self.r.fill(0.0);
        self.r.view_mut((0, 0), (kept, self.n)).copy_from(&r.view((0, 0), (kept, self.n)));
        self.qtb.fill(0.0);
        self.qtb.view_mut((0, 0), (kept, self.k)).copy_from(&b.view((0, 0), (kept, self.k)));
        for j in 0..self.k {
            self.leftover_sse[j] += b.view((kept, j), (total - kept, 1)).norm_squared();
        }
        self.started = true;
    }

    fn finish(&mut self) -> (DMatrix<f64>, Vec<f64>, nalgebra::linalg::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>) {
        self.flush();
        let svd = self.r.clone().svd(true, true);
        let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        (self.r.clone(), sv, svd)
    }

    fn tolerance(&self, sv: &[f64], rtol: Option<f64>) -> f64 {
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let rel = rtol.unwrap_or((self.rows.max(self.n) as f64 * f64::EPSILON).max(1e-12));
        smax * rel
    }

    /// Full-rank solve. Fails with [`Error::InsufficientData`] when there are
    /// fewer rows than unknowns and [`Error::RankDeficient`] (naming the null
    /// directions) when columns are linearly dependent.
    pub fn solve(mut self, names: &[String]) -> Result<LstsqSolution> {
        let rows = self.rows();
        if rows < self.n {
            return Err(Error::InsufficientData {
                rows,
                unknowns: self.n,
            });
        }
        let (r, sv, svd) = self.finish();
        let tol = self.tolerance(&sv, None);
        let rank = sv.iter().filter(|s| **s > tol).count();
        if rank < self.n {
            let v_t = svd.v_t.as_ref().expect("requested V");
            let null_space = sv
                .iter()
                .enumerate()
                .filter(|(_, s)| **s <= tol)
                .map(|(i, _)| describe_direction(v_t.row(i).iter().copied(), names))
                .collect();
            return Err(Error::RankDeficient {
                rank,
                unknowns: self.n,
                null_space,
            });
        }
        let x = r
            .solve_upper_triangular(&self.qtb)
            .expect("nonsingular triangular factor");
        let residual_rms = self.residuals(&r, &x, rows);
        Ok(LstsqSolution {
            coefficients: x,
            rank,
            rows,
            residual_rms,
            singular_values: sv,
        })
    }

    /// Minimum-norm solve that truncates singular values below
    /// `rtol · σ_max`. Rank-deficient designs are accepted; fewer rows than
    /// unknowns is still rejected.
    pub fn solve_min_norm(mut self, rtol: f64) -> Result<LstsqSolution> {
        let rows = self.rows();
        if rows < self.n {
            return Err(Error::RankDeficient {
                rank: rows,
                unknowns: self.n,
                null_space: vec![format!(
                    "{} samples cannot determine {} coefficients",
                    rows, self.n
                )],
            });
        }
        let (r, sv, svd) = self.finish();
        let tol = self.tolerance(&sv, Some(rtol));
        let rank = sv.iter().filter(|s| **s > tol).count();
        let u = svd.u.as_ref().expect("requested U");
        let v_t = svd.v_t.as_ref().expect("requested V");
        let mut x = DMatrix::zeros(self.n, self.k);
        for (i, s) in sv.iter().enumerate() {
            if *s > tol {
                let coef = u.column(i).transpose() * &self.qtb / *s;
                x += v_t.row(i).transpose() * coef;
            }
        }
        let residual_rms = self.residuals(&r, &x, rows);
        Ok(LstsqSolution {
            coefficients: x,
            rank,
            rows,
            residual_rms,
            singular_values: sv,
        })
    }

    fn residuals(&self, r: &DMatrix<f64>, x: &DMatrix<f64>, rows: usize) -> Vec<f64> {
        let fit = r * x - &self.qtb;
        (0..self.k)
            .map(|j| ((self.leftover_sse[j] + fit.column(j).norm_squared()) / rows.max(1) as f64).sqrt())
            .collect()
    }
}

fn describe_direction(v: impl Iterator<Item = f64>, names: &[String]) -> String {
    let parts: Vec<String> = v
        .enumerate()
        .filter(|(_, c)| c.abs() > 1e-3)
        .map(|(i, c)| {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
            format!("{c:+.3}·{name}")
        })
        .collect();
    if parts.is_empty() {
        "0".into()
    } else {
        parts.join(" ")
    }
}
