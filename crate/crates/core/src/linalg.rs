//! Small dense linear algebra on fixed-size arrays and short vectors.

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn mat3_vec(a: &Mat3, x: &Vec3) -> Vec3 {
    [
        a[0][0] * x[0] + a[0][1] * x[1] + a[0][2] * x[2],
        a[1][0] * x[0] + a[1][1] * x[1] + a[1][2] * x[2],
        a[2][0] * x[0] + a[2][1] * x[1] + a[2][2] * x[2],
    ]
}

pub fn mat3_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] -= b[i][j];
        }
    }
    c
}

pub fn transpose3(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn det3(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

pub fn inverse3(a: &Mat3) -> Option<Mat3> {
    let rows: Vec<Vec<f64>> = a.iter().map(|r| r.to_vec()).collect();
    let inv = inverse(&rows)?;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = inv[i][j];
        }
    }
    Some(out)
}

pub fn norm3(x: &Vec3) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Max-abs entry norm.
pub fn max_abs3(a: &Mat3) -> f64 {
    a.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Gaussian elimination with partial pivoting; `None` if singular.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    let scale = a.iter().flatten().fold(0.0f64, |s, v| s.max(v.abs())).max(1e-300);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        x.swap(col, piv);
        for r in col + 1..n {
            let f = m[r][col] / m[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let s: f64 = (col + 1..n).map(|c| m[col][c] * x[c]).sum();
        x[col] = (x[col] - s) / m[col][col];
    }
    Some(x)
}

pub fn inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cols.push(solve(a, &e)?);
    }
    Some((0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect())
}

/// Solves `AᵀP + PA = -W` for a 3×3 `A` by vectorizing into a 9×9 system.
pub fn lyapunov3(a: &Mat3, w: &Mat3) -> Option<Mat3> {
    let idx = |r: usize, c: usize| r * 3 + c;
    let mut m = vec![vec![0.0; 9]; 9];
    let mut rhs = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            let row = idx(i, j);
            for k in 0..3 {
                // (AᵀP)_ij = Σ_k A_ki P_kj ; (PA)_ij = Σ_k P_ik A_kj
                m[row][idx(k, j)] += a[k][i];
                m[row][idx(i, k)] += a[k][j];
            }
            rhs[row] = -w[i][j];
        }
    }
    let x = solve(&m, &rhs)?;
    let mut p = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            p[i][j] = 0.5 * (x[idx(i, j)] + x[idx(j, i)]);
        }
    }
    Some(p)
}

/// Sylvester's criterion on leading principal minors.
pub fn is_positive_definite3(p: &Mat3) -> bool {
    let sym = (0..3).all(|i| (0..3).all(|j| (p[i][j] - p[j][i]).abs() <= 1e-12 * (1.0 + p[i][j].abs())));
    let m1 = p[0][0];
    let m2 = p[0][0] * p[1][1] - p[0][1] * p[1][0];
    sym && m1 > 0.0 && m2 > 0.0 && det3(p) > 0.0
}

/// Characteristic polynomial coefficients `[1, c1, ..., cn]` of `det(λI - A)`
/// via Faddeev-LeVerrier.
pub fn char_poly(a: &[Vec<f64>]) -> Vec<f64> {
    let n = a.len();
    let mut coeffs = vec![1.0];
    let mut m = vec![vec![0.0; n]; n];
    for k in 1..=n {
        // M_k = A M_{k-1} + c_{k-1} I
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                next[i][j] = (0..n).map(|l| a[i][l] * m[l][j]).sum::<f64>();
            }
            next[i][i] += coeffs[k - 1];
        }
        m = next;
        let trace: f64 = (0..n).map(|i| (0..n).map(|l| a[i][l] * m[l][i]).sum::<f64>()).sum();
        coeffs.push(-trace / k as f64);
    }
    coeffs
}

/// Routh-Hurwitz test: true iff every root of the polynomial (highest degree
/// first, positive leading coefficient) has negative real part.
pub fn routh_hurwitz(coeffs: &[f64]) -> bool {
    let n = coeffs.len();
    if n < 2 || coeffs[0] <= 0.0 || coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    let width = n.div_ceil(2);
    let mut prev: Vec<f64> = (0..width).map(|k| *coeffs.get(2 * k).unwrap_or(&0.0)).collect();
    let mut cur: Vec<f64> = (0..width).map(|k| *coeffs.get(2 * k + 1).unwrap_or(&0.0)).collect();
    for _ in 1..n {
        if cur[0] <= 0.0 {
            return false;
        }
        let mut next = vec![0.0; width];
        for k in 0..width - 1 {
            next[k] = (cur[0] * prev[k + 1] - prev[0] * cur[k + 1]) / cur[0];
        }
        prev = cur;
        cur = next;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_small_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let x = solve(&a, &[3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(solve(&[vec![1.0, 2.0], vec![2.0, 4.0]], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn lyapunov_residual() {
        let a = [[-1.0, 2.0, 0.0], [0.0, -3.0, 1.0], [0.5, 0.0, -2.0]];
        let w = [[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 4.0]];
        let p = lyapunov3(&a, &w).unwrap();
        let r = mat3_mul(&transpose3(&a), &p);
        let s = mat3_mul(&p, &a);
        for i in 0..3 {
            for j in 0..3 {
                assert!((r[i][j] + s[i][j] + w[i][j]).abs() < 1e-12);
            }
        }
        assert!(is_positive_definite3(&p));
    }

    #[test]
    fn char_poly_of_companion() {
        // roots -1, -2, -3
        let a = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![-6.0, -11.0, -6.0]];
        let c = char_poly(&a);
        for (x, y) in c.iter().zip([1.0, 6.0, 11.0, 6.0]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(routh_hurwitz(&c));
    }

    #[test]
    fn routh_rejects_unstable() {
        assert!(!routh_hurwitz(&[1.0, -1.0]));
        // (s-1)(s+2)(s+3)
        assert!(!routh_hurwitz(&[1.0, 4.0, 1.0, -6.0]));
        // s^3 + s^2 + s + 2: a1 a2 < a3
        assert!(!routh_hurwitz(&[1.0, 1.0, 1.0, 2.0]));
        assert!(routh_hurwitz(&[1.0, 3.0, 0.2, 0.01]));
        // purely imaginary pair is not strictly stable
        assert!(!routh_hurwitz(&[1.0, 0.0, 1.0]));
    }

    #[test]
    fn inverse_roundtrip() {
        let a = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0 / 0.15, 1.0 / 0.15]];
        let inv = inverse3(&a).unwrap();
        let id = mat3_mul(&a, &inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[i][j] - want).abs() < 1e-12);
            }
        }
    }
}
