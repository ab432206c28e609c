//! Small dense linear-algebra kernels used by the structural analysis.
//!
//! Everything here targets matrices of dimension at most a few dozen, so the
//! routines favour robustness and determinism over asymptotic speed.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Relative pivot threshold below which a matrix is treated as singular.
pub const PIVOT_RATIO_TOL: f64 = 1e-9;

/// Smallest over largest absolute pivot of Gaussian elimination with partial
/// pivoting. Zero for singular (or empty-pivot) matrices, one for the empty
/// matrix.
pub fn pivot_ratio(m: &DMatrix<f64>) -> f64 {
    assert!(m.is_square(), "pivot_ratio needs a square matrix");
    let n = m.nrows();
    if n == 0 {
        return 1.0;
    }
    let mut a = m.clone();
    let mut min_piv = f64::INFINITY;
    let mut max_piv = 0.0f64;
    for col in 0..n {
        let (best, val) = (col..n)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((col, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val == 0.0 {
            return 0.0;
        }
        a.swap_rows(col, best);
        min_piv = min_piv.min(val);
        max_piv = max_piv.max(val);
        let p = a[(col, col)];
        for r in col + 1..n {
            let f = a[(r, col)] / p;
            if f != 0.0 {
                for c in col..n {
                    a[(r, c)] -= f * a[(col, c)];
                }
            }
        }
    }
    min_piv / max_piv
}

pub fn is_nonsingular(m: &DMatrix<f64>) -> bool {
    pivot_ratio(m) >= PIVOT_RATIO_TOL
}

/// Row rank by elimination with partial pivoting; entries below `tol` times
/// the matrix max-norm count as zero.
pub fn rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, a[(i, c)].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol * scale {
            continue;
        }
        a.swap_rows(r, best);
        let p = a[(r, c)];
        for i in r + 1..rows {
            let f = a[(i, c)] / p;
            for j in c..cols {
                a[(i, j)] -= f * a[(r, j)];
            }
        }
        r += 1;
    }
    r
}

/// Basis of the left null space of `b` (row vectors `psi` with `psi * b = 0`),
/// computed from the reduced row echelon form of `b^T` with partial pivoting.
/// Basis vectors come out in increasing order of their free variable.
pub fn left_null_space(b: &DMatrix<f64>, tol: f64) -> Vec<DVector<f64>> {
    let mut a = b.transpose();
    let (rows, cols) = a.shape();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, a[(i, c)].abs()))
            .fold((r, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol * scale {
            continue;
        }
        a.swap_rows(r, best);
        let p = a[(r, c)];
        for j in 0..cols {
            a[(r, j)] /= p;
        }
        for i in 0..rows {
            if i != r {
                let f = a[(i, c)];
                if f != 0.0 {
                    for j in 0..cols {
                        a[(i, j)] -= f * a[(r, j)];
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    (0..cols)
        .filter(|c| !pivots.contains(c))
        .map(|free| {
            let mut v = DVector::zeros(cols);
            v[free] = 1.0;
            for (row, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[(row, free)];
            }
            v
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>, tol: f64) -> Vec<f64> {
    assert!(m.is_square(), "symmetric_eigenvalues needs a square matrix");
    let n = m.nrows();
    let mut a = m.clone();
    let off = |a: &DMatrix<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Coefficients of `det(sI - m)` in ascending powers, leading coefficient 1
/// (Faddeev–LeVerrier recursion).
pub fn char_poly(m: &DMatrix<f64>) -> Vec<f64> {
    assert!(m.is_square(), "char_poly needs a square matrix");
    let n = m.nrows();
    let mut coeffs = vec![0.0; n + 1];
    coeffs[n] = 1.0;
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{n-k+1} I, c_{n-k} = -tr(A M_k) / k
        let mut next = m * &mk;
        for i in 0..n {
            next[(i, i)] += coeffs[n - k + 1];
        }
        mk = next;
        coeffs[n - k] = -(m * &mk).trace() / k as f64;
    }
    coeffs
}

fn horner(coeffs: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = Complex64::new(0.0, 0.0);
    let mut dp = Complex64::new(0.0, 0.0);
    for &c in coeffs.iter().rev() {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

/// All complex roots of a polynomial given in ascending coefficients.
///
/// Durand–Kerner simultaneous iteration from points on a Cauchy-bound circle,
/// followed by a few Newton polishing steps on the original polynomial.
pub fn poly_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let monic: Vec<f64> = c.iter().map(|x| x / lead).collect();
    let radius = 1.0 + monic[..deg].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|k| seed.powu(k as u32) * radius / seed.norm().powi(k as i32))
        .collect();
    for _ in 0..2000 {
        let mut delta = 0.0f64;
        for i in 0..deg {
            let (p, _) = horner(&monic, roots[i]);
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex64::new(1e-12, 1e-12);
            }
            let step = p / denom;
            roots[i] -= step;
            delta = delta.max(step.norm());
        }
        if delta <= 1e-15 * radius {
            break;
        }
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = horner(&monic, *r);
            if dp.norm() == 0.0 {
                break;
            }
            let step = p / dp;
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    roots
}

/// Eigenvalues of a general (small) matrix via its characteristic polynomial.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    poly_roots(&char_poly(m))
}

/// Routh–Hurwitz test for a real polynomial in ascending coefficients.
/// Strict: any zero in the first column rejects.
pub fn is_hurwitz_poly(coeffs: &[f64]) -> bool {
    let mut c: Vec<f64> = coeffs.to_vec();
    while c.len() > 1 && *c.last().unwrap() == 0.0 {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return true;
    }
    let lead = c[deg];
    // descending, normalised to positive leading coefficient
    let desc: Vec<f64> = c.iter().rev().map(|x| x / lead).collect();
    if desc.iter().any(|&x| x <= 0.0) {
        return false;
    }
    let width = deg / 2 + 1;
    let mut prev: Vec<f64> = (0..width)
        .map(|k| *desc.get(2 * k).unwrap_or(&0.0))
        .collect();
    let mut cur: Vec<f64> = (0..width)
        .map(|k| *desc.get(2 * k + 1).unwrap_or(&0.0))
        .collect();
    for _ in 0..deg - 1 {
        if cur[0] <= 0.0 {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|k| {
                let a = prev.get(k + 1).copied().unwrap_or(0.0);
                let b = cur.get(k + 1).copied().unwrap_or(0.0);
                (cur[0] * a - prev[0] * b) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
    }
    cur[0] > 0.0
}

/// Companion matrix whose last row is `-coeffs[0..n]` for the monic
/// polynomial `s^n + sum coeffs[k] s^k`.
pub fn companion(coeffs: &[f64]) -> DMatrix<f64> {
    let n = coeffs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        a[(i, i + 1)] = 1.0;
    }
    for (k, c) in coeffs.iter().enumerate() {
        a[(n - 1, k)] = -c;
    }
    a
}
