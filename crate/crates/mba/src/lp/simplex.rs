//! Small dense primal simplex, maximization form:
//!
//! ```text
//!     max c.x   s.t.   A x <= b,  x >= 0,  b >= 0
//! ```
//!
//! The non-negative right-hand side means the slack basis is feasible, so no
//! phase-1 is needed.  Pivoting uses Bland's rule (lowest eligible index for
//! both the entering and the leaving variable), which cannot cycle; an
//! iteration cap guards against numerical stalls anyway.  Problem sizes here
//! are tiny (tens of rows), so the dense tableau is the simplest thing that
//! is obviously correct.

use crate::{Error, Result};

/// Denominators smaller than this are treated as zero in the ratio test.
pub const FEAS_TOL: f64 = 1e-9;
/// Reduced costs below this are treated as optimal.
pub const OPT_TOL: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Values of the structural (non-slack) variables.
    pub x: Vec<f64>,
    pub objective: f64,
    /// One dual per constraint row, non-negative at optimality.
    pub duals: Vec<f64>,
    pub pivots: usize,
}

/// One pivot step, for the optional CSV trace.
#[derive(Debug, Clone, Copy)]
pub struct PivotRecord {
    pub pivot: usize,
    pub entering: usize,
    pub leaving: usize,
    pub objective: f64,
}

pub fn solve_max(c: &[f64], rows: &[Vec<f64>], b: &[f64]) -> Result<LpSolution> {
    solve_max_traced(c, rows, b, None)
}

pub fn solve_max_traced(
    c: &[f64],
    rows: &[Vec<f64>],
    b: &[f64],
    mut trace: Option<&mut Vec<PivotRecord>>,
) -> Result<LpSolution> {
    let m = rows.len();
    let n = c.len();
    assert_eq!(b.len(), m);
    for (r, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), n, "row {r} has wrong width");
        assert!(b[r] >= -FEAS_TOL, "rhs must be non-negative, b[{r}] = {}", b[r]);
    }

    // Tableau: m rows of [structural | slack | rhs], plus a reduced-cost row.
    let width = n + m + 1;
    let mut t: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut tr = vec![0.0; width];
            tr[..n].copy_from_slice(row);
            tr[n + r] = 1.0;
            tr[width - 1] = b[r].max(0.0);
            tr
        })
        .collect();
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c);
    let mut basis: Vec<usize> = (n..n + m).collect();

    let cap = 2000 + 200 * (n + m);
    let mut pivots = 0;
    loop {
        // Bland: entering = lowest index with positive reduced cost.
        let entering = (0..n + m).find(|&j| cost[j] > OPT_TOL);
        let Some(e) = entering else { break };

        // Ratio test; ties broken by lowest basis variable index (Bland).
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..m {
            let a = t[r][e];
            if a > FEAS_TOL {
                let ratio = t[r][width - 1] / a;
                let better = match leave {
                    None => true,
                    Some((lr, lratio)) => {
                        ratio < lratio - FEAS_TOL
                            || (ratio < lratio + FEAS_TOL && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((lr, _)) = leave else {
            return Err(Error::LpFailure(format!(
                "unbounded in direction of variable {e}"
            )));
        };

        // Pivot on (lr, e).
        let piv = t[lr][e];
        for v in t[lr].iter_mut() {
            *v /= piv;
        }
        for r in 0..m {
            if r != lr {
                let f = t[r][e];
                if f != 0.0 {
                    // Row operation in place; split borrow via index math.
                    let (pivot_row, row) = if r < lr {
                        let (a, bpart) = t.split_at_mut(lr);
                        (&bpart[0], &mut a[r])
                    } else {
                        let (a, bpart) = t.split_at_mut(r);
                        (&a[lr], &mut bpart[0])
                    };
                    for (rv, pv) in row.iter_mut().zip(pivot_row.iter()) {
                        *rv -= f * pv;
                    }
                }
            }
        }
        let f = cost[e];
        for (cv, pv) in cost.iter_mut().zip(t[lr].iter()) {
            *cv -= f * pv;
        }
        basis[lr] = e;
        pivots += 1;
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(PivotRecord {
                pivot: pivots,
                entering: e,
                leaving: lr,
                objective: -cost[width - 1],
            });
        }
        if pivots > cap {
            return Err(Error::SimplexCap {
                iterations: pivots,
                objective: -cost[width - 1],
            });
        }
    }

    let mut x = vec![0.0; n];
    for (r, &bv) in basis.iter().enumerate() {
        if bv < n {
            x[bv] = t[r][width - 1];
        }
    }
    // Reduced cost of slack k is -y_k at optimality.
    let duals = (0..m).map(|k| (-cost[n + k]).max(0.0)).collect();
    Ok(LpSolution {
        x,
        objective: -cost[width - 1],
        duals,
        pivots,
    })
}
