//! Small exact linear-algebra backend for the determining-equation solver:
//! null spaces of homogeneous systems over the rationals, a float fallback
//! with an explicit rank tolerance, and continued-fraction rationalization.

use num::traits::{One, Signed, Zero};
use num::BigInt;

use crate::expr::Rat;

/// Rank tolerance for the float elimination path.
pub const FLOAT_RANK_TOL: f64 = 1e-8;
/// Largest denominator continued-fraction snapping will produce.
pub const MAX_SNAP_DENOMINATOR: u64 = 1_000_000;

/// Null-space basis of the homogeneous system `rows * c = 0` over the exact
/// rationals, via reduced row echelon form with the first nonzero entry in
/// fixed column order as pivot. One basis vector per free column, with a 1
/// in the free position; fully deterministic.
pub fn rational_nullspace(rows: &[Vec<Rat>], n_cols: usize) -> Vec<Vec<Rat>> {
    let mut m: Vec<Vec<Rat>> = rows
        .iter()
        .inspect(|r| assert_eq!(r.len(), n_cols))
        .cloned()
        .collect();
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut row = 0usize;
    for col in 0..n_cols {
        let Some(p) = (row..m.len()).find(|&r| !m[r][col].is_zero()) else {
            continue;
        };
        m.swap(row, p);
        let inv = m[row][col].recip();
        for c in col..n_cols {
            let v = &m[row][c] * &inv;
            m[row][c] = v;
        }
        for r in 0..m.len() {
            if r != row && !m[r][col].is_zero() {
                let factor = m[r][col].clone();
                for c in col..n_cols {
                    let v = &m[r][c] - &factor * &m[row][c];
                    m[r][c] = v;
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
        if row == m.len() {
            break;
        }
    }
    let mut basis = Vec::new();
    for free in 0..n_cols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut v = vec![Rat::zero(); n_cols];
        v[free] = Rat::one();
        for (r, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -m[r][free].clone();
        }
        basis.push(v);
    }
    basis
}

/// Float counterpart with partial pivoting; a pivot below `tol` times the
/// largest matrix entry counts as zero.
pub fn float_nullspace(rows: &[Vec<f64>], n_cols: usize, tol: f64) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .inspect(|r| assert_eq!(r.len(), n_cols))
        .cloned()
        .collect();
    let scale = m
        .iter()
        .flat_map(|r| r.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max)
        .max(1.0);
    let threshold = tol * scale;
    let mut pivot_cols: Vec<usize> = Vec::new();
    let mut row = 0usize;
    for col in 0..n_cols {
        let Some(p) = (row..m.len())
            .filter(|&r| m[r][col].abs() > threshold)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
        else {
            continue;
        };
        m.swap(row, p);
        let inv = 1.0 / m[row][col];
        for c in col..n_cols {
            m[row][c] *= inv;
        }
        for r in 0..m.len() {
            if r != row && m[r][col] != 0.0 {
                let factor = m[r][col];
                for c in col..n_cols {
                    m[r][c] -= factor * m[row][c];
                }
            }
        }
        pivot_cols.push(col);
        row += 1;
        if row == m.len() {
            break;
        }
    }
    let mut basis = Vec::new();
    for free in 0..n_cols {
        if pivot_cols.contains(&free) {
            continue;
        }
        let mut v = vec![0.0; n_cols];
        v[free] = 1.0;
        for (r, &pc) in pivot_cols.iter().enumerate() {
            v[pc] = -m[r][free];
        }
        basis.push(v);
    }
    basis
}

/// Best rational approximation of `x` by continued fractions, stopping at
/// the denominator cap. Returns `None` unless the approximation reproduces
/// `x` to within `1e-9 * max(1, |x|)`.
pub fn snap_rational(x: f64, max_denominator: u64) -> Option<Rat> {
    if !x.is_finite() {
        return None;
    }
    let tolerance = 1e-9 * x.abs().max(1.0);
    let negative = x < 0.0;
    let mut remainder = x.abs();
    let (mut p0, mut q0) = (BigInt::zero(), BigInt::one());
    let (mut p1, mut q1) = (BigInt::one(), BigInt::zero());
    let cap = BigInt::from(max_denominator);
    for _ in 0..64 {
        let a = remainder.floor();
        if a > 1e18 {
            return None;
        }
        let a_int = BigInt::from(a as i64);
        let p2 = &a_int * &p1 + &p0;
        let q2 = &a_int * &q1 + &q0;
        if q2 > cap {
            break;
        }
        (p0, q0) = (p1, q1);
        (p1, q1) = (p2, q2);
        let frac = remainder - a;
        let approx = rat_value(&p1, &q1);
        if (approx - x.abs()).abs() <= tolerance {
            break;
        }
        if frac < 1e-15 {
            break;
        }
        remainder = 1.0 / frac;
    }
    if q1.is_zero() {
        return None;
    }
    let approx = rat_value(&p1, &q1);
    if (approx - x.abs()).abs() > tolerance {
        return None;
    }
    let sign = if negative { -BigInt::one() } else { BigInt::one() };
    Some(Rat::new(sign * p1, q1))
}

fn rat_value(p: &BigInt, q: &BigInt) -> f64 {
    use num::ToPrimitive;
    p.to_f64().unwrap_or(f64::INFINITY) / q.to_f64().unwrap_or(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rat {
        Rat::new(n.into(), d.into())
    }

    #[test]
    fn single_constraint_nullspace() {
        // c1 + c2 = 0 over two unknowns.
        let basis = rational_nullspace(&[vec![r(1, 1), r(1, 1)]], 2);
        assert_eq!(basis, vec![vec![r(-1, 1), r(1, 1)]]);
    }

    #[test]
    fn full_rank_system_has_empty_nullspace() {
        let rows = vec![
            vec![r(1, 1), r(0, 1)],
            vec![r(1, 1), r(1, 1)],
        ];
        assert!(rational_nullspace(&rows, 2).is_empty());
    }

    #[test]
    fn empty_system_nullspace_is_identity() {
        let basis = rational_nullspace(&[], 3);
        assert_eq!(basis.len(), 3);
        for (i, v) in basis.iter().enumerate() {
            assert_eq!(v[i], r(1, 1));
        }
    }

    #[test]
    fn zero_unknowns_zero_dimensional() {
        assert!(rational_nullspace(&[], 0).is_empty());
    }

    #[test]
    fn redundant_rows_do_not_change_dimension() {
        let rows = vec![
            vec![r(1, 1), r(2, 1), r(3, 1)],
            vec![r(2, 1), r(4, 1), r(6, 1)],
        ];
        let basis = rational_nullspace(&rows, 3);
        assert_eq!(basis.len(), 2);
        for v in &basis {
            let dot: Rat = v[0].clone() + r(2, 1) * v[1].clone() + r(3, 1) * v[2].clone();
            assert!(dot.is_zero());
        }
    }

    #[test]
    fn float_agrees_with_rational_on_rank() {
        let rational = vec![
            vec![r(1, 2), r(1, 3), r(0, 1)],
            vec![r(1, 1), r(2, 3), r(0, 1)],
        ];
        let float: Vec<Vec<f64>> = vec![vec![0.5, 1.0 / 3.0, 0.0], vec![1.0, 2.0 / 3.0, 0.0]];
        let exact = rational_nullspace(&rational, 3);
        let approx = float_nullspace(&float, 3, FLOAT_RANK_TOL);
        assert_eq!(exact.len(), approx.len());
    }

    #[test]
    fn float_nullspace_vectors_annihilate_rows() {
        let rows = vec![vec![1.0, -2.0, 1.0], vec![0.0, 1.0, -1.0]];
        let basis = float_nullspace(&rows, 3, FLOAT_RANK_TOL);
        assert_eq!(basis.len(), 1);
        for row in &rows {
            let dot: f64 = row.iter().zip(&basis[0]).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn snapping_recovers_small_rationals() {
        assert_eq!(snap_rational(0.5, MAX_SNAP_DENOMINATOR), Some(r(1, 2)));
        assert_eq!(snap_rational(-2.0 / 3.0, MAX_SNAP_DENOMINATOR), Some(r(-2, 3)));
        assert_eq!(snap_rational(7.0, MAX_SNAP_DENOMINATOR), Some(r(7, 1)));
        assert_eq!(snap_rational(0.0, MAX_SNAP_DENOMINATOR), Some(r(0, 1)));
    }

    #[test]
    fn snapping_rejects_irrationals() {
        assert_eq!(snap_rational(std::f64::consts::PI, 1000), None);
        assert_eq!(snap_rational(2f64.sqrt(), 1000), None);
    }

    #[test]
    fn snapping_respects_denominator_cap() {
        // 1/3000000 needs a denominator beyond the cap.
        assert_eq!(snap_rational(1.0 / 3_000_000.0, MAX_SNAP_DENOMINATOR), None);
        assert!(snap_rational(1.0 / 999_983.0, MAX_SNAP_DENOMINATOR).is_some());
    }
}
