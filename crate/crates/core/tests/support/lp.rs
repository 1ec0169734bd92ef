//! Dense tableau simplex for
//!
//! ```text
//! minimize ||A g - f||_1 + lambda * sum(g),  g >= 0
//! ```
//!
//! written in standard form with `A g - p + q = f`, `g, p, q >= 0`.

const EPS: f64 = 1e-10;

pub struct LpSolution {
    pub objective: f64,
    pub g: Vec<f64>,
    pub pivots: usize,
}

/// `a` is row-major `m x n`.
pub fn l1_nonneg(a: &[f64], m: usize, n: usize, f: &[f64], lambda: f64) -> LpSolution {
    assert_eq!(a.len(), m * n);
    assert_eq!(f.len(), m);
    let cols = n + 2 * m;
    // Columns: g (n), p (m), q (m).
    let cost = |j: usize| if j < n { lambda } else { 1.0 };
    let mut t = vec![0.0; m * cols];
    let mut rhs = vec![0.0; m];
    let mut basis = vec![0usize; m];
    for i in 0..m {
        // Start from the slack with the right sign: q_i = f_i or p_i = -f_i.
        let s = if f[i] >= 0.0 { 1.0 } else { -1.0 };
        for j in 0..n {
            t[i * cols + j] = s * a[i * n + j];
        }
        t[i * cols + n + i] = -s;
        t[i * cols + n + m + i] = s;
        rhs[i] = s * f[i];
        basis[i] = if s > 0.0 { n + m + i } else { n + i };
    }
    let mut pivots = 0;
    let mut degenerate_run = 0;
    loop {
        // Reduced costs c_j - c_B^T T_j.
        let mut reduced = vec![0.0; cols];
        for (j, r) in reduced.iter_mut().enumerate() {
            *r = cost(j);
        }
        for i in 0..m {
            let cb = cost(basis[i]);
            let row = &t[i * cols..(i + 1) * cols];
            for (r, v) in reduced.iter_mut().zip(row) {
                *r -= cb * v;
            }
        }
        let bland = degenerate_run > 50;
        let entering = if bland {
            (0..cols).find(|&j| reduced[j] < -EPS)
        } else {
            (0..cols)
                .filter(|&j| reduced[j] < -EPS)
                .min_by(|&x, &y| reduced[x].partial_cmp(&reduced[y]).unwrap())
        };
        let Some(e) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let v = t[i * cols + e];
            if v > EPS {
                let ratio = rhs[i] / v;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - EPS || (ratio <= lr + EPS && bland && basis[i] < basis[li])
                    }
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        let (l, ratio) = leave.expect("objective is bounded below by zero");
        degenerate_run = if ratio <= EPS { degenerate_run + 1 } else { 0 };
        let piv = t[l * cols + e];
        for v in &mut t[l * cols..(l + 1) * cols] {
            *v /= piv;
        }
        rhs[l] /= piv;
        let prow: Vec<f64> = t[l * cols..(l + 1) * cols].to_vec();
        for i in 0..m {
            if i == l {
                continue;
            }
            let factor = t[i * cols + e];
            if factor != 0.0 {
                for (v, p) in t[i * cols..(i + 1) * cols].iter_mut().zip(&prow) {
                    *v -= factor * p;
                }
                rhs[i] -= factor * rhs[l];
            }
        }
        basis[l] = e;
        pivots += 1;
        assert!(pivots < 100_000, "simplex did not terminate");
    }
    let mut x = vec![0.0; cols];
    for i in 0..m {
        x[basis[i]] = rhs[i];
    }
    let objective = (0..cols).map(|j| cost(j) * x[j]).sum();
    LpSolution {
        objective,
        g: x[..n].to_vec(),
        pivots,
    }
}
