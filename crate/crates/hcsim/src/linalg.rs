//! Minimal exact linear algebra: just enough to solve the small square
//! systems produced by basic-solution enumeration.

use num_traits::Zero;

use crate::ratio::Rat;

/// Solves `a * x = b` over the rationals by Gaussian elimination.
/// Returns `None` when `a` is singular. `a` is consumed as scratch space.
pub(crate) fn solve_square(mut a: Vec<Vec<Rat>>, mut b: Vec<Rat>) -> Option<Vec<Rat>> {
    let n = b.len();
    debug_assert!(a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        let inv = a[col][col].recip();
        for c in col..n {
            a[col][c] = &a[col][c] * &inv;
        }
        b[col] = &b[col] * &inv;
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let factor = a[r][col].clone();
                for c in col..n {
                    let delta = &factor * &a[col][c];
                    a[r][c] = &a[r][c] - delta;
                }
                let delta = &factor * &b[col];
                b[r] = &b[r] - delta;
            }
        }
    }
    Some(b)
}
