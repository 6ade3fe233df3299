use rand::Rng;
use rand_distr::StandardNormal;

use crate::seed::stream_rng;

/// `F(x) = 0.5 x'Ax - b'x + c` with `c` chosen so that `F(x*) = 0`,
/// evaluated as `0.5 (x - x*)'A(x - x*)` to keep rounding relative to the
/// loss rather than to `|b'x|`.
///
/// `A = Q diag(lambda) Q'` with a seeded random rotation `Q` and eigenvalues
/// log-spaced in `[eig_min, eig_max]`, so it is symmetric positive definite
/// and its smoothness constant is `eig_max` by construction.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub minimizer: Vec<f64>,
}

impl Quadratic {
    pub fn new(dim: usize, eig_min: f64, eig_max: f64, seed: u64) -> Self {
        let eigenvalues: Vec<f64> = if dim == 1 {
            vec![eig_max]
        } else {
            let (lo, hi) = (eig_min.ln(), eig_max.ln());
            (0..dim)
                .map(|i| {
                    if i + 1 == dim {
                        eig_max
                    } else if i == 0 {
                        eig_min
                    } else {
                        (lo + (hi - lo) * i as f64 / (dim - 1) as f64).exp()
                    }
                })
                .collect()
        };
        let q = random_rotation(dim, seed);
        let mut a = vec![vec![0.0; dim]; dim];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = (0..dim).map(|k| q[i][k] * eigenvalues[k] * q[j][k]).sum();
            }
        }
        // exact symmetry
        for i in 0..dim {
            for j in 0..i {
                let s = 0.5 * (a[i][j] + a[j][i]);
                a[i][j] = s;
                a[j][i] = s;
            }
        }
        let mut rng = stream_rng(seed, "quadratic-b", &[]);
        let b: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        // x* = Q diag(1/lambda) Q' b
        let qtb: Vec<f64> = (0..dim)
            .map(|k| (0..dim).map(|i| q[i][k] * b[i]).sum::<f64>() / eigenvalues[k])
            .collect();
        let minimizer: Vec<f64> = (0..dim)
            .map(|i| (0..dim).map(|k| q[i][k] * qtb[k]).sum())
            .collect();
        Self {
            a,
            b,
            eigenvalues,
            minimizer,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn smoothness(&self) -> f64 {
        *self.eigenvalues.last().expect("nonempty spectrum")
    }

    /// Loss and gradient with an additive linear noise term `-xi'x`.
    pub fn loss_and_grad(&self, x: &[f64], noise: Option<&[f64]>) -> (f64, Vec<f64>) {
        let d: Vec<f64> = x.iter().zip(&self.minimizer).map(|(x, m)| x - m).collect();
        // rows of A d kept as unevaluated pairs so the quadratic form
        // rounds once, not once per row
        let rows: Vec<(f64, f64)> = self.a.iter().map(|row| dot2_pair(row, &d)).collect();
        let mut acc = Compensated::default();
        for (di, &(hi, lo)) in d.iter().zip(&rows) {
            acc.add_product(0.5 * di, hi);
            acc.add_product(0.5 * di, lo);
        }
        let mut grad: Vec<f64> = rows.iter().map(|(hi, lo)| hi + lo).collect();
        if let Some(xi) = noise {
            for (n, xv) in xi.iter().zip(x) {
                acc.add_product(-n, *xv);
            }
            for (g, n) in grad.iter_mut().zip(xi) {
                *g -= n;
            }
        }
        (acc.value(), grad)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum of products accurate to about twice working precision
/// (fused multiply-add for the product error, two-sum for the addition).
#[derive(Debug, Default, Clone, Copy)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn add_product(&mut self, x: f64, y: f64) {
        let p = x * y;
        let p_err = x.mul_add(y, -p);
        let s = self.sum + p;
        let back = s - self.sum;
        let s_err = (self.sum - (s - back)) + (p - back);
        self.sum = s;
        self.comp += s_err + p_err;
    }

    /// Normalized `(hi, lo)` with `hi = fl(hi + lo)`.
    fn pair(self) -> (f64, f64) {
        let hi = self.sum + self.comp;
        (hi, self.comp - (hi - self.sum))
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

fn dot2_pair(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut acc = Compensated::default();
    for (x, y) in a.iter().zip(b) {
        acc.add_product(*x, *y);
    }
    acc.pair()
}


/// Columns of a seeded Gaussian matrix, orthonormalized by modified
/// Gram-Schmidt (run twice for numerical orthogonality).
fn random_rotation(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, "quadratic-rotation", &[]);
    let mut cols: Vec<Vec<f64>> = (0..dim)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for _ in 0..2 {
        for k in 0..dim {
            for j in 0..k {
                let proj = dot(&cols[k], &cols[j]);
                let cj = cols[j].clone();
                for (x, y) in cols[k].iter_mut().zip(&cj) {
                    *x -= proj * y;
                }
            }
            let norm = dot(&cols[k], &cols[k]).sqrt();
            cols[k].iter_mut().for_each(|x| *x /= norm);
        }
    }
    // q[i][k] = i-th entry of column k
    (0..dim)
        .map(|i| (0..dim).map(|k| cols[k][i]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_vanishes_at_minimizer() {
        let q = Quadratic::new(12, 0.05, 2.0, 3);
        let (loss, grad) = q.loss_and_grad(&q.minimizer, None);
        assert!(loss.abs() < 1e-12);
        assert!(grad.iter().all(|g| g.abs() < 1e-10), "{grad:?}");
    }

    #[test]
    fn suboptimality_is_the_a_norm() {
        let q = Quadratic::new(8, 0.1, 4.0, 11);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let (loss, _) = q.loss_and_grad(&x, None);
        let d: Vec<f64> = x.iter().zip(&q.minimizer).map(|(a, b)| a - b).collect();
        let ad: Vec<f64> = q.a.iter().map(|r| dot(r, &d)).collect();
        let expected = 0.5 * dot(&d, &ad);
        assert!((loss - expected).abs() < 1e-10 * (1.0 + expected));
    }

    #[test]
    fn spectrum_and_smoothness() {
        let q = Quadratic::new(6, 0.01, 3.0, 5);
        assert_eq!(q.smoothness(), 3.0);
        assert_eq!(q.eigenvalues[0], 0.01);
        assert!(q.eigenvalues.iter().all(|&l| l > 0.0));
        // A v = lambda v recovered through the Rayleigh quotient bounds
        for i in 0..6 {
            assert!(q.a[i][i] > 0.0 && q.a[i][i] <= 3.0 + 1e-12);
            for j in 0..6 {
                assert_eq!(q.a[i][j], q.a[j][i]);
            }
        }
    }
}
