//! Small dense symmetric solves used by the least-squares code paths.

/// Row-major square matrix stored in a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }
}

/// Cholesky factor `L` with `A = L Lᵀ`. Returns `None` when a pivot falls
/// below `rel_tol` times the largest diagonal entry.
pub(crate) fn cholesky(a: &SymMatrix, rel_tol: f64) -> Option<SymMatrix> {
    let n = a.n;
    let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
    let mut l = SymMatrix::zeros(n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > floor) {
            return None;
        }
        let d = d.sqrt();
        l.data[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.data[i * n + j] = s / d;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` in place.
pub(crate) fn cholesky_solve(l: &SymMatrix, b: &mut [f64]) {
    let n = l.n;
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = SymMatrix {
            n: 3,
            data: vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
        };
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a.get(i, j) * x[j]).sum()).collect();
        let l = cholesky(&a, 1e-12).unwrap();
        cholesky_solve(&l, &mut b);
        for (u, v) in b.iter().zip(x) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_singular() {
        let a = SymMatrix {
            n: 2,
            data: vec![1.0, 2.0, 2.0, 4.0],
        };
        assert!(cholesky(&a, 1e-12).is_none());
    }
}
