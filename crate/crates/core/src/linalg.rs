//! Dense balance-equation solver shared by the solar chain and the
//! threshold-policy chain.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("balance matrix is empty")]
    Empty,
    #[error("balance matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("chain has {} closed communicating classes {:?}; stationary distribution is not unique", classes.len(), classes)]
    Reducible { classes: Vec<Vec<usize>> },
    #[error("balance solve residual {residual:e} exceeds {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
}

/// Stationary distribution of a row-stochastic matrix `p[from][to]`.
pub fn stationary_rows(p: &[Vec<f64>]) -> Result<Vec<f64>, BalanceError> {
    let n = p.len();
    check_square(p)?;
    let t = DMatrix::from_fn(n, n, |r, c| p[c][r]);
    solve_column_balance(&t, &|_| reachability_rows(p))
}

/// Stationary distribution of a column-stochastic matrix, `phi[to][from]`,
/// i.e. the solution of `phi * nu = nu`, `sum(nu) = 1`.
pub fn stationary_columns(phi: &DMatrix<f64>) -> Result<Vec<f64>, BalanceError> {
    if phi.nrows() == 0 {
        return Err(BalanceError::Empty);
    }
    if phi.nrows() != phi.ncols() {
        return Err(BalanceError::NotSquare { rows: phi.nrows(), cols: phi.ncols() });
    }
    let n = phi.nrows();
    let rows = |_: ()| {
        let p: Vec<Vec<f64>> = (0..n).map(|from| (0..n).map(|to| phi[(to, from)]).collect()).collect();
        reachability_rows(&p)
    };
    solve_column_balance(phi, &rows)
}

/// Largest absolute entry of `phi * nu - nu`.
pub fn column_residual(phi: &DMatrix<f64>, nu: &[f64]) -> f64 {
    let v = DVector::from_column_slice(nu);
    let r = phi * &v - &v;
    r.amax()
}

/// Largest absolute entry of `nu^T p - nu^T` for row-stochastic `p`.
pub fn row_residual(p: &[Vec<f64>], nu: &[f64]) -> f64 {
    let n = p.len();
    (0..n).map(|j| ((0..n).map(|i| nu[i] * p[i][j]).sum::<f64>() - nu[j]).abs()).fold(0.0, f64::max)
}

fn check_square(p: &[Vec<f64>]) -> Result<(), BalanceError> {
    if p.is_empty() {
        return Err(BalanceError::Empty);
    }
    for row in p {
        if row.len() != p.len() {
            return Err(BalanceError::NotSquare { rows: p.len(), cols: row.len() });
        }
    }
    Ok(())
}

fn solve_column_balance(phi: &DMatrix<f64>, reach: &dyn Fn(()) -> Vec<Vec<bool>>) -> Result<Vec<f64>, BalanceError> {
    let n = phi.nrows();
    // Closed classes decide solvability; checking them up front keeps a
    // near-singular LU from returning garbage.
    let classes = closed_classes(&reach(()));
    if classes.len() != 1 {
        return Err(BalanceError::Reducible { classes });
    }
    let mut m = phi - DMatrix::identity(n, n);
    for c in 0..n {
        m[(n - 1, c)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let nu = m.lu().solve(&rhs).ok_or_else(|| BalanceError::Reducible { classes: classes.clone() })?;
    let mut nu: Vec<f64> = nu.iter().map(|&x| if x < 0.0 && x > -1e-13 { 0.0 } else { x }).collect();
    let s: f64 = nu.iter().sum();
    for x in nu.iter_mut() {
        *x /= s;
    }
    let residual = column_residual(phi, &nu);
    let tolerance = 1e-10;
    if !(residual <= tolerance) || nu.iter().any(|&x| x < 0.0) {
        return Err(BalanceError::Residual { residual, tolerance });
    }
    Ok(nu)
}

/// reach[i][j]: j reachable from i in zero or more steps.
fn reachability_rows(p: &[Vec<f64>]) -> Vec<Vec<bool>> {
    let n = p.len();
    let mut reach = vec![vec![false; n]; n];
    for s in 0..n {
        let mut stack = vec![s];
        reach[s][s] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if p[i][j] > 0.0 && !reach[s][j] {
                    reach[s][j] = true;
                    stack.push(j);
                }
            }
        }
    }
    reach
}

fn closed_classes(reach: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let n = reach.len();
    let mut assigned = vec![false; n];
    let mut out = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let class: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &class {
            assigned[j] = true;
        }
        let closed = (0..n).all(|j| !reach[i][j] || reach[j][i]);
        if closed {
            out.push(class);
        }
    }
    out
}
