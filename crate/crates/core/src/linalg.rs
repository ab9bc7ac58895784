//! Small dense complex matrices and Haar-random unitaries.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    dim: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![Complex64::default(); dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::LengthMismatch {
                expected: dim * dim,
                actual: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn adjoint(&self) -> Self {
        let mut m = Self::zeros(self.dim);
        for r in 0..self.dim {
            for c in 0..self.dim {
                m[(c, r)] = self[(r, c)].conj();
            }
        }
        m
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut m = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self[(r, k)];
                for c in 0..n {
                    m[(r, c)] += a * other[(k, c)];
                }
            }
        }
        m
    }

    /// `self * v`.
    pub fn apply(&self, v: &[Complex64], out: &mut [Complex64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = (0..self.dim).map(|c| self[(r, c)] * v[c]).sum();
        }
    }

    /// Largest entry-wise deviation of `self * self^H` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let p = self.matmul(&self.adjoint());
        let id = Self::identity(self.dim);
        p.data
            .iter()
            .zip(&id.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;

    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.dim + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.dim + c]
    }
}

/// Haar-distributed unitary: Gram-Schmidt QR of a complex Gaussian matrix.
/// Gram-Schmidt leaves R with a positive real diagonal, which is the phase
/// normalization that makes Q Haar.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<CMatrix> {
    if dim == 0 {
        return Err(Error::InvalidParameter("unitary dimension must be >= 1".into()));
    }
    let mut cols: Vec<Vec<Complex64>> = (0..dim)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(rng);
                    let im: f64 = StandardNormal.sample(rng);
                    Complex64::new(re, im)
                })
                .collect()
        })
        .collect();
    for j in 0..dim {
        // Two passes of modified Gram-Schmidt for orthogonality to 1e-15.
        for _ in 0..2 {
            for i in 0..j {
                let (done, rest) = cols.split_at_mut(j);
                let q = &done[i];
                let proj: Complex64 = q.iter().zip(rest[0].iter()).map(|(a, b)| a.conj() * b).sum();
                for (v, a) in rest[0].iter_mut().zip(q) {
                    *v -= proj * a;
                }
            }
        }
        let norm = cols[j].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for v in cols[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut m = CMatrix::zeros(dim);
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_unitary_has_unit_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_unitary(1, &mut rng).unwrap();
        assert!((u[(0, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unitarity_dims_2_and_6() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for dim in [2, 6] {
            let u = random_unitary(dim, &mut rng).unwrap();
            assert!(u.unitarity_error() < 1e-10);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = random_unitary(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_unitary(4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(random_unitary(0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn haar_diagonal_phase_is_uniform() {
        // For Haar 2x2, E[u_00] = 0 and E[|u_00|^2] = 1/2.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 20_000;
        let mut mean = Complex64::default();
        let mut pow = 0.0;
        for _ in 0..n {
            let u = random_unitary(2, &mut rng).unwrap();
            mean += u[(0, 0)];
            pow += u[(0, 0)].norm_sqr();
        }
        mean /= n as f64;
        pow /= n as f64;
        assert!(mean.norm() < 0.02, "{mean}");
        assert!((pow - 0.5).abs() < 0.01, "{pow}");
    }
}
