//! Dense operator algebra: construction, composition, matrix exponentials,
//! Fréchet derivatives, vectorization and Pauli/basis utilities.
//!
//! Conventions fixed here and relied on everywhere else:
//! * two-level basis order: index 0 = ground |0>, index 1 = excited |1>,
//!   so `sigma_minus` maps |1> -> |0>;
//! * vectorization stacks columns (`vec(rho)` in column-major order), so
//!   `vec(A X B) = (B^T ⊗ A) vec(X)`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

pub const I_C: C64 = C64::new(0.0, 1.0);

/// Default absolute tolerance for hermiticity/unitarity predicates.
pub const OPERATOR_TOL: f64 = 1e-10;

/// Dense complex square matrix. Hamiltonians carry units of angular
/// frequency; propagators and gates are dimensionless.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    data: DMatrix<C64>,
}

/// Algorithm used for `exp(scale * A)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpAlgorithm {
    /// Scaling-and-squaring with diagonal Padé approximants. Works for any
    /// square matrix, including non-Hermitian Lindblad generators.
    Pade,
    /// Eigendecomposition path; requires a Hermitian input.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    X,
    Y,
    Z,
    Plus,
    Minus,
    Identity,
}

impl Operator {
    pub fn new(data: DMatrix<C64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::ShapeMismatch {
                context: "Operator::new",
                expected_rows: data.nrows(),
                expected_cols: data.nrows(),
                rows: data.nrows(),
                cols: data.ncols(),
            });
        }
        Ok(Operator { data })
    }

    /// Row-major construction helper.
    pub fn from_row_slice(dim: usize, entries: &[C64]) -> Self {
        assert_eq!(entries.len(), dim * dim, "entry count must be dim^2");
        Operator {
            data: DMatrix::from_row_slice(dim, dim, entries),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Operator {
            data: DMatrix::zeros(dim, dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Operator {
            data: DMatrix::identity(dim, dim),
        }
    }

    pub fn pauli(which: Pauli) -> Self {
        let c = C64::new;
        let entries: [C64; 4] = match which {
            Pauli::X => [c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)],
            Pauli::Y => [c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)],
            Pauli::Z => [c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)],
            // |1><0|: populates the excited state.
            Pauli::Plus => [c(0., 0.), c(0., 0.), c(1., 0.), c(0., 0.)],
            // |0><1|: de-excites, see the basis-order convention above.
            Pauli::Minus => [c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)],
            Pauli::Identity => [c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)],
        };
        Operator::from_row_slice(2, &entries)
    }

    pub fn pauli_x() -> Self {
        Self::pauli(Pauli::X)
    }

    pub fn pauli_y() -> Self {
        Self::pauli(Pauli::Y)
    }

    pub fn pauli_z() -> Self {
        Self::pauli(Pauli::Z)
    }

    pub fn sigma_plus() -> Self {
        Self::pauli(Pauli::Plus)
    }

    pub fn sigma_minus() -> Self {
        Self::pauli(Pauli::Minus)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &DMatrix<C64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<C64> {
        self.data
    }

    pub fn dagger(&self) -> Self {
        Operator {
            data: self.data.adjoint(),
        }
    }

    pub fn transpose(&self) -> Self {
        Operator {
            data: self.data.transpose(),
        }
    }

    pub fn conjugate(&self) -> Self {
        Operator {
            data: self.data.map(|z| z.conj()),
        }
    }

    pub fn trace(&self) -> C64 {
        self.data.diagonal().sum()
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Operator {
            data: self.data.map(|z| z * factor),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest entry magnitude.
    pub fn max_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        (0..self.data.ncols())
            .map(|j| self.data.column(j).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim();
        for i in 0..d {
            for j in i..d {
                if (self.data[(i, j)] - self.data[(j, i)].conj()).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        let residual = self.data.adjoint() * &self.data - DMatrix::<C64>::identity(self.dim(), self.dim());
        residual.iter().all(|z| z.norm() <= tol)
    }

    /// `exp(scale * self)` with the default Padé scaling-and-squaring.
    pub fn matexp(&self, scale: C64) -> Result<Operator> {
        self.matexp_with(scale, ExpAlgorithm::Pade)
    }

    pub fn matexp_with(&self, scale: C64, algorithm: ExpAlgorithm) -> Result<Operator> {
        if !self.is_finite() || !(scale.re.is_finite() && scale.im.is_finite()) {
            return Err(Error::NonFinite("matexp input"));
        }
        match algorithm {
            ExpAlgorithm::Pade => Ok(Operator {
                data: expm_pade(&self.data.map(|z| z * scale)),
            }),
            ExpAlgorithm::Spectral => self.matexp_spectral(scale),
        }
    }

    /// Spectral path: `exp(scale * A) = W exp(scale * diag(w)) W^dag` for
    /// Hermitian `A = W diag(w) W^dag`.
    pub fn matexp_spectral(&self, scale: C64) -> Result<Operator> {
        if !self.is_finite() {
            return Err(Error::NonFinite("matexp input"));
        }
        if !self.is_hermitian(OPERATOR_TOL.max(1e-12 * self.max_norm())) {
            return Err(Error::invalid(
                "spectral matrix exponential requires a Hermitian input".to_string(),
            ));
        }
        let (vals, vecs) = self.eigh_hermitian();
        let phases = DVector::from_iterator(vals.len(), vals.iter().map(|&w| (scale * w).exp()));
        let d = DMatrix::from_diagonal(&phases);
        Ok(Operator {
            data: &vecs * d * vecs.adjoint(),
        })
    }

    /// Eigendecomposition of a Hermitian operator: real eigenvalues and a
    /// unitary eigenvector matrix (columns).
    pub fn eigh(&self) -> (Vec<f64>, Operator) {
        let (vals, vecs) = self.eigh_hermitian();
        (vals.iter().copied().collect(), Operator { data: vecs })
    }

    fn eigh_hermitian(&self) -> (DVector<f64>, DMatrix<C64>) {
        let se = self.data.clone().symmetric_eigen();
        (se.eigenvalues, se.eigenvectors)
    }

    /// Fréchet derivative of the exponential map via the block embedding
    /// `exp([[A, E], [0, A]]) = [[exp(A), L], [0, exp(A)]]` with
    /// `A -> scale*A`, `E -> scale*E`. Returns `(exp(scale*A), L)` where `L`
    /// is the directional derivative of `X -> exp(scale*X)` at `A` along `E`.
    pub fn matexp_frechet(&self, direction: &Operator, scale: C64) -> Result<(Operator, Operator)> {
        let d = self.dim();
        if direction.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "matexp_frechet direction",
                expected: d,
                got: direction.dim(),
            });
        }
        if !self.is_finite() || !direction.is_finite() {
            return Err(Error::NonFinite("matexp_frechet input"));
        }
        let mut block = DMatrix::<C64>::zeros(2 * d, 2 * d);
        for i in 0..d {
            for j in 0..d {
                let a = self.data[(i, j)] * scale;
                block[(i, j)] = a;
                block[(d + i, d + j)] = a;
                block[(i, d + j)] = direction.data[(i, j)] * scale;
            }
        }
        let e = expm_pade(&block);
        let mut value = DMatrix::<C64>::zeros(d, d);
        let mut frechet = DMatrix::<C64>::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                value[(i, j)] = e[(i, j)];
                frechet[(i, j)] = e[(i, d + j)];
            }
        }
        Ok((Operator { data: value }, Operator { data: frechet }))
    }

    pub fn kron(&self, other: &Operator) -> Operator {
        Operator {
            data: self.data.kronecker(&other.data),
        }
    }

    /// Column-stacking vectorization.
    pub fn vectorize(&self) -> VectorizedState {
        VectorizedState {
            data: DVector::from_column_slice(self.data.as_slice()),
            dim: self.dim(),
        }
    }

    pub fn apply_to_vec(&self, v: &VectorizedState) -> Result<VectorizedState> {
        if self.dim() != v.data.len() {
            return Err(Error::DimensionMismatch {
                context: "apply_to_vec",
                expected: self.dim(),
                got: v.data.len(),
            });
        }
        Ok(VectorizedState {
            data: &self.data * &v.data,
            dim: v.dim,
        })
    }

    /// Gaussian-random Hermitian matrix, entries O(1).
    pub fn random_hermitian<R: Rng>(dim: usize, rng: &mut R) -> Operator {
        let mut m = DMatrix::<C64>::zeros(dim, dim);
        for i in 0..dim {
            let re: f64 = StandardNormal.sample(rng);
            m[(i, i)] = C64::new(re, 0.0);
            for j in (i + 1)..dim {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let z = C64::new(re * 0.5, im * 0.5);
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        Operator { data: m }
    }

    /// Haar-ish random unitary via the exponential of a random Hermitian.
    pub fn random_unitary<R: Rng>(dim: usize, rng: &mut R) -> Operator {
        Operator::random_hermitian(dim, rng)
            .matexp(-I_C)
            .expect("finite input")
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        Operator {
            data: &self.data + &rhs.data,
        }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        Operator {
            data: &self.data - &rhs.data,
        }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        Operator {
            data: &self.data * &rhs.data,
        }
    }
}

impl std::ops::Neg for &Operator {
    type Output = Operator;
    fn neg(self) -> Operator {
        Operator {
            data: -&self.data,
        }
    }
}

/// Density matrix stacked column-wise into a length d^2 vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorizedState {
    data: DVector<C64>,
    dim: usize,
}

impl VectorizedState {
    pub fn new(data: DVector<C64>) -> Result<Self> {
        let len = data.len();
        let dim = (len as f64).sqrt().round() as usize;
        if dim * dim != len {
            return Err(Error::invalid(format!(
                "vectorized state length {len} is not a perfect square"
            )));
        }
        Ok(VectorizedState { data, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &DVector<C64> {
        &self.data
    }

    /// Inverse of `Operator::vectorize`.
    pub fn devectorize(&self) -> Operator {
        Operator {
            data: DMatrix::from_column_slice(self.dim, self.dim, self.data.as_slice()),
        }
    }
}

/// Orthogonal Hermitian operator basis with `tr(s_i s_j) = d * delta_ij`;
/// element 0 is the identity, the rest are traceless. For d = 2 this is
/// exactly {I, sigma_x, sigma_y, sigma_z}.
pub fn hermitian_basis(dim: usize) -> Vec<Operator> {
    let mut basis = Vec::with_capacity(dim * dim);
    basis.push(Operator::identity(dim));
    let scale = (dim as f64 / 2.0).sqrt();
    for k in 0..dim {
        for j in 0..k {
            let mut sym = DMatrix::<C64>::zeros(dim, dim);
            sym[(j, k)] = C64::new(scale, 0.0);
            sym[(k, j)] = C64::new(scale, 0.0);
            basis.push(Operator { data: sym });
            let mut asym = DMatrix::<C64>::zeros(dim, dim);
            asym[(j, k)] = C64::new(0.0, -scale);
            asym[(k, j)] = C64::new(0.0, scale);
            basis.push(Operator { data: asym });
        }
    }
    for l in 1..dim {
        let norm = scale * (2.0 / (l as f64 * (l as f64 + 1.0))).sqrt();
        let mut diag = DMatrix::<C64>::zeros(dim, dim);
        for m in 0..l {
            diag[(m, m)] = C64::new(norm, 0.0);
        }
        diag[(l, l)] = C64::new(-norm * l as f64, 0.0);
        basis.push(Operator { data: diag });
    }
    basis
}

// --- Padé scaling-and-squaring (Higham 2005) ---------------------------------

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120., 60., 12., 1.];
const PADE_5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const PADE_7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const PADE_9: [f64; 10] = [
    17643225600.,
    8821612800.,
    2075673600.,
    302702400.,
    30270240.,
    2162160.,
    110880.,
    3960.,
    90.,
    1.,
];
const PADE_13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

fn one_norm(m: &DMatrix<C64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(A)` for an arbitrary square complex matrix.
fn expm_pade(a: &DMatrix<C64>) -> DMatrix<C64> {
    let norm = one_norm(a);
    let eye = DMatrix::<C64>::identity(a.nrows(), a.ncols());
    if norm <= THETA_9 {
        let coeffs: &[f64] = if norm <= THETA_3 {
            &PADE_3
        } else if norm <= THETA_5 {
            &PADE_5
        } else if norm <= THETA_7 {
            &PADE_7
        } else {
            &PADE_9
        };
        return pade_low_order(a, &eye, coeffs);
    }
    let s = ((norm / THETA_13).log2().ceil() as i32).max(0);
    let scaled = a.map(|z| z / C64::new(2f64.powi(s), 0.0));
    let mut r = pade_13(&scaled, &eye);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Evaluate the [m/m] Padé approximant for m in {3, 5, 7, 9} where the full
/// even power table fits comfortably.
fn pade_low_order(a: &DMatrix<C64>, eye: &DMatrix<C64>, coeffs: &[f64]) -> DMatrix<C64> {
    let a2 = a * a;
    // even_powers[k] = A^{2k}
    let mut even_powers = vec![eye.clone(), a2.clone()];
    let n_pairs = coeffs.len() / 2;
    while even_powers.len() < n_pairs {
        let next = even_powers.last().unwrap() * &a2;
        even_powers.push(next);
    }
    let mut u_inner = DMatrix::<C64>::zeros(a.nrows(), a.ncols());
    let mut v = DMatrix::<C64>::zeros(a.nrows(), a.ncols());
    for (k, pow) in even_powers.iter().enumerate() {
        u_inner += pow.map(|z| z * C64::new(coeffs[2 * k + 1], 0.0));
        v += pow.map(|z| z * C64::new(coeffs[2 * k], 0.0));
    }
    let u = a * u_inner;
    solve_pade(u, v)
}

fn pade_13(a: &DMatrix<C64>, eye: &DMatrix<C64>) -> DMatrix<C64> {
    let b = &PADE_13;
    let c = |x: f64| C64::new(x, 0.0);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_high = &a6 * (a6.map(|z| z * c(b[13])) + a4.map(|z| z * c(b[11])) + a2.map(|z| z * c(b[9])));
    let u_low = a6.map(|z| z * c(b[7]))
        + a4.map(|z| z * c(b[5]))
        + a2.map(|z| z * c(b[3]))
        + eye.map(|z| z * c(b[1]));
    let u = a * (u_high + u_low);
    let v_high = &a6 * (a6.map(|z| z * c(b[12])) + a4.map(|z| z * c(b[10])) + a2.map(|z| z * c(b[8])));
    let v = v_high
        + a6.map(|z| z * c(b[6]))
        + a4.map(|z| z * c(b[4]))
        + a2.map(|z| z * c(b[2]))
        + eye.map(|z| z * c(b[0]));
    solve_pade(u, v)
}

/// Solve (V - U) X = (V + U).
fn solve_pade(u: DMatrix<C64>, v: DMatrix<C64>) -> DMatrix<C64> {
    let p = &v + &u;
    let q = &v - &u;
    q.lu().solve(&p).expect("Padé denominator is singular")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn matexp_of_zero_is_identity() {
        let z = Operator::zeros(2);
        let e = z.matexp(c(1.0, 0.0)).unwrap();
        assert!((&e - &Operator::identity(2)).max_norm() < 1e-15);
    }

    #[test]
    fn matexp_sigma_x_quarter_turn() {
        // exp(-i pi/2 sigma_x) = -i sigma_x
        let sx = Operator::pauli_x();
        let e = sx.matexp(c(0.0, -std::f64::consts::FRAC_PI_2)).unwrap();
        let expected = sx.scaled(c(0.0, -1.0));
        assert!((&e - &expected).max_norm() < 1e-14);
    }

    /// Independent oracle: norm-scaled 30-term Taylor sum.
    fn taylor_exp(a: &Operator, scale: C64) -> Operator {
        let b = a.scaled(scale);
        // scale down so the series converges fast, square back up
        let mut s = 0u32;
        while b.one_norm() / 2f64.powi(s as i32) > 0.25 {
            s += 1;
        }
        let small = b.scaled(c(1.0 / 2f64.powi(s as i32), 0.0));
        let mut term = Operator::identity(a.dim());
        let mut acc = Operator::identity(a.dim());
        for k in 1..=30 {
            term = &term * &small;
            term = term.scaled(c(1.0 / k as f64, 0.0));
            acc = &acc + &term;
        }
        let mut out = acc;
        for _ in 0..s {
            out = &out * &out;
        }
        out
    }

    #[test]
    fn matexp_matches_taylor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = Operator::random_hermitian(4, &mut rng);
        let got = h.matexp(c(0.0, -0.3)).unwrap();
        let want = taylor_exp(&h, c(0.0, -0.3));
        assert!((&got - &want).max_norm() < 1e-10);
    }

    #[test]
    fn spectral_and_pade_agree_on_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for dim in [2usize, 4, 6] {
            let h = Operator::random_hermitian(dim, &mut rng);
            let scale = c(0.0, -0.8);
            let a = h.matexp(scale).unwrap();
            let b = h.matexp_spectral(scale).unwrap();
            assert!((&a - &b).max_norm() < 1e-10, "dim {dim}");
        }
    }

    #[test]
    fn matexp_large_norm_uses_squaring() {
        // big Hermitian: spectral answer is exact reference
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let h = Operator::random_hermitian(3, &mut rng).scaled(c(40.0, 0.0));
        let a = h.matexp(c(0.0, -1.0)).unwrap();
        let b = h.matexp_spectral(c(0.0, -1.0)).unwrap();
        assert!((&a - &b).max_norm() < 1e-9);
        assert!(a.is_unitary(1e-9));
    }

    #[test]
    fn matexp_rejects_non_finite() {
        let m = Operator::from_row_slice(2, &[c(f64::NAN, 0.), c(0., 0.), c(0., 0.), c(0., 0.)]);
        assert!(m.matexp(c(1.0, 0.0)).is_err());
    }

    #[test]
    fn unitarity_of_hermitian_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let h = Operator::random_hermitian(4, &mut rng);
            let u = h.matexp(c(0.0, -0.7)).unwrap();
            let residual = &u.dagger() * &u;
            assert!((&residual - &Operator::identity(4)).max_norm() < 1e-12);
        }
    }

    #[test]
    fn frechet_at_zero_is_direction() {
        let (value, frechet) = Operator::zeros(2)
            .matexp_frechet(&Operator::pauli_z(), c(1.0, 0.0))
            .unwrap();
        assert!((&value - &Operator::identity(2)).max_norm() < 1e-14);
        assert!((&frechet - &Operator::pauli_z()).max_norm() < 1e-14);
    }

    #[test]
    fn frechet_zero_direction_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Operator::random_hermitian(3, &mut rng);
        let (_, frechet) = a.matexp_frechet(&Operator::zeros(3), c(0.0, -0.4)).unwrap();
        assert!(frechet.max_norm() < 1e-14);
    }

    #[test]
    fn frechet_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for dim in [2usize, 4] {
            let a = Operator::random_hermitian(dim, &mut rng);
            let e = Operator::random_hermitian(dim, &mut rng);
            let scale = c(0.0, -0.7);
            let (_, l) = a.matexp_frechet(&e, scale).unwrap();
            let h = 1e-6;
            let plus = (&a + &e.scaled(c(h, 0.0))).matexp(scale).unwrap();
            let minus = (&a - &e.scaled(c(h, 0.0))).matexp(scale).unwrap();
            let fd = (&plus - &minus).scaled(c(0.5 / h, 0.0));
            let rel = (&l - &fd).max_norm() / fd.max_norm();
            assert!(rel < 1e-7, "relative error {rel} at dim {dim}");
        }
    }

    #[test]
    fn frechet_dimension_mismatch_rejected() {
        let a = Operator::zeros(2);
        let e = Operator::zeros(3);
        assert!(a.matexp_frechet(&e, c(1.0, 0.0)).is_err());
    }

    #[test]
    fn kron_of_paulis() {
        let sx = Operator::pauli_x();
        let id = Operator::identity(2);
        let k = sx.kron(&id);
        assert_eq!(k.dim(), 4);
        // antidiagonal identity blocks
        assert_abs_diff_eq!(k.data()[(0, 2)].re, 1.0);
        assert_abs_diff_eq!(k.data()[(1, 3)].re, 1.0);
        assert_abs_diff_eq!(k.data()[(2, 0)].re, 1.0);
        assert_abs_diff_eq!(k.data()[(3, 1)].re, 1.0);
        assert_abs_diff_eq!(k.data()[(0, 0)].re, 0.0);
        let i4 = id.kron(&id);
        assert!((&i4 - &Operator::identity(4)).max_norm() < 1e-15);
    }

    #[test]
    fn kron_mixed_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = Operator::random_hermitian(2, &mut rng);
        let b = Operator::random_hermitian(2, &mut rng);
        let c_ = Operator::random_hermitian(2, &mut rng);
        let d = Operator::random_hermitian(2, &mut rng);
        let lhs = &a.kron(&b) * &c_.kron(&d);
        let rhs = (&a * &c_).kron(&(&b * &d));
        assert!((&lhs - &rhs).max_norm() < 1e-12);
    }

    #[test]
    fn vectorize_is_column_stacking() {
        let m = Operator::from_row_slice(2, &[c(1., 0.), c(2., 0.), c(3., 0.), c(4., 0.)]);
        let v = m.vectorize();
        let got: Vec<f64> = v.data().iter().map(|z| z.re).collect();
        // [[a,b],[c,d]] -> (a, c, b, d)
        assert_eq!(got, vec![1., 3., 2., 4.]);
        let id = Operator::identity(2).vectorize();
        let got: Vec<f64> = id.data().iter().map(|z| z.re).collect();
        assert_eq!(got, vec![1., 0., 0., 1.]);
    }

    #[test]
    fn vec_of_sandwich_identity() {
        // vec(A X B) = (B^T kron A) vec(X)
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = Operator::random_hermitian(2, &mut rng);
        let x = Operator::random_hermitian(2, &mut rng);
        let b = Operator::random_hermitian(2, &mut rng);
        let lhs = (&(&a * &x) * &b).vectorize();
        let sandwich = b.transpose().kron(&a);
        let rhs = sandwich.apply_to_vec(&x.vectorize()).unwrap();
        let err = (lhs.data() - rhs.data()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn pauli_matrices() {
        let sx = Operator::pauli_x();
        assert_abs_diff_eq!(sx.data()[(0, 1)].re, 1.0);
        assert_abs_diff_eq!(sx.data()[(1, 0)].re, 1.0);
        let sz = Operator::pauli_z();
        assert_abs_diff_eq!(sz.data()[(0, 0)].re, 1.0);
        assert_abs_diff_eq!(sz.data()[(1, 1)].re, -1.0);
        // lowering: |1> -> |0>
        let sm = Operator::sigma_minus();
        assert_abs_diff_eq!(sm.data()[(0, 1)].re, 1.0);
        assert_abs_diff_eq!(sm.data()[(1, 0)].re, 0.0);
        // (sigma_x + i sigma_y)/2 reproduces it
        let sy = Operator::pauli_y();
        let combo = (&sx + &sy.scaled(I_C)).scaled(c(0.5, 0.0));
        assert!((&combo - &sm).max_norm() < 1e-15);
    }

    #[test]
    fn hermitian_basis_orthogonality() {
        for dim in [2usize, 3, 4] {
            let basis = hermitian_basis(dim);
            assert_eq!(basis.len(), dim * dim);
            for (i, bi) in basis.iter().enumerate() {
                assert!(bi.is_hermitian(1e-14));
                if i > 0 {
                    assert!(bi.trace().norm() < 1e-14, "traceless for i > 0");
                }
                for (j, bj) in basis.iter().enumerate() {
                    let t = (bi * bj).trace();
                    let want = if i == j { dim as f64 } else { 0.0 };
                    assert!((t - c(want, 0.0)).norm() < 1e-12, "tr(b{i} b{j})");
                }
            }
        }
    }

    #[test]
    fn eigh_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = Operator::random_hermitian(5, &mut rng);
        let (vals, vecs) = h.eigh();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&v| c(v, 0.0)),
        ));
        let rec = Operator {
            data: vecs.data() * d * vecs.data().adjoint(),
        };
        assert!((&rec - &h).max_norm() < 1e-12);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn small_matrix(dim: usize) -> impl Strategy<Value = Operator> {
        prop::collection::vec(-5.0f64..5.0, 2 * dim * dim).prop_map(move |xs| {
            let entries: Vec<C64> = xs
                .chunks(2)
                .map(|p| C64::new(p[0], p[1]))
                .collect();
            Operator::from_row_slice(dim, &entries)
        })
    }

    proptest! {
        #[test]
        fn vectorize_round_trip(m in small_matrix(3)) {
            let back = m.vectorize().devectorize();
            prop_assert!((&back - &m).max_norm() == 0.0);
        }

        #[test]
        fn kron_dims_multiply(a in small_matrix(2), b in small_matrix(3)) {
            prop_assert_eq!(a.kron(&b).dim(), 6);
        }
    }
}
