//! Two-qubit polarization states and measurement statistics.
//!
//! Each link of the network carries one polarization-entangled photon pair.
//! States are 4x4 density operators over the product basis
//! {HH, HV, VH, VV}; imperfect links are modeled as Werner (isotropic noise)
//! mixtures of the target Bell state.

// Index loops read better than iterator chains for small fixed matrices.
#![allow(clippy::needless_range_loop)]

use num_complex::Complex64;
use thiserror::Error;

type Mat2 = [[Complex64; 2]; 2];
type Mat4 = [[Complex64; 4]; 4];

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error, PartialEq)]
pub enum QuantumError {
    #[error("density matrix trace is {trace}, expected 1")]
    NotNormalized { trace: f64 },
    #[error("density matrix is not Hermitian (max asymmetry {max_asymmetry:.3e})")]
    NotHermitian { max_asymmetry: f64 },
    #[error("density matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },
    #[error("Werner fidelity {0} outside [0.25, 1]")]
    FidelityOutOfRange(f64),
}

/// Polarization measurement basis.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
pub enum Basis {
    /// Horizontal / vertical.
    HV,
    /// Diagonal / anti-diagonal (+-45 degrees).
    DA,
}

impl Basis {
    /// Projector onto one of the two orthogonal outputs of this basis.
    pub fn projector(&self, output: u8) -> Mat2 {
        let h = Complex64::new(0.5, 0.0);
        let one = Complex64::new(1.0, 0.0);
        match (self, output) {
            (Basis::HV, 0) => [[one, ZERO], [ZERO, ZERO]],
            (Basis::HV, _) => [[ZERO, ZERO], [ZERO, one]],
            // D and A are the +-45 degree rotations of H and V.
            (Basis::DA, 0) => [[h, h], [h, h]],
            (Basis::DA, _) => [[h, -h], [-h, h]],
        }
    }

    /// Single-character label for an outcome in this basis.
    pub fn outcome_label(&self, output: u8) -> char {
        match (self, output) {
            (Basis::HV, 0) => 'H',
            (Basis::HV, _) => 'V',
            (Basis::DA, 0) => 'D',
            (Basis::DA, _) => 'A',
        }
    }
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Basis::HV => write!(f, "HV"),
            Basis::DA => write!(f, "DA"),
        }
    }
}

/// One analyzer projector: a basis plus the selected output port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnalyzerSetting {
    pub basis: Basis,
    pub output: u8,
}

impl AnalyzerSetting {
    pub fn projector(&self) -> Mat2 {
        self.basis.projector(self.output)
    }
}

/// Joint outcome probabilities for a pair of analyzer bases.
///
/// `p[a][b]` is the probability that the first photon exits output `a` and
/// the second output `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeTable {
    pub p: [[f64; 2]; 2],
}

impl OutcomeTable {
    /// Probability of equal outputs (00 or 11).
    pub fn same(&self) -> f64 {
        self.p[0][0] + self.p[1][1]
    }

    /// Probability of opposite outputs (01 or 10).
    pub fn diff(&self) -> f64 {
        self.p[0][1] + self.p[1][0]
    }

    /// Marginal probability of output `o` on the first photon.
    pub fn marginal_a(&self, o: usize) -> f64 {
        self.p[o][0] + self.p[o][1]
    }

    /// Marginal probability of output `o` on the second photon.
    pub fn marginal_b(&self, o: usize) -> f64 {
        self.p[0][o] + self.p[1][o]
    }
}

/// Density operator of one two-photon polarization state.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoQubitState {
    rho: Mat4,
}

/// The (|HH> + |VV>)/sqrt(2) Bell state as a ket.
pub fn phi_plus_ket() -> [Complex64; 4] {
    let a = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [a, ZERO, ZERO, a]
}

impl TwoQubitState {
    /// Validates trace, Hermiticity and positivity before accepting a raw
    /// matrix.
    pub fn from_matrix(rho: Mat4) -> Result<Self, QuantumError> {
        let tr = trace(&rho);
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(QuantumError::NotNormalized { trace: tr.re });
        }
        let mut max_asym = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                max_asym = max_asym.max((rho[i][j] - rho[j][i].conj()).norm());
            }
        }
        if max_asym > 1e-12 {
            return Err(QuantumError::NotHermitian {
                max_asymmetry: max_asym,
            });
        }
        let min_eig = hermitian_eigenvalues(&rho)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(QuantumError::NotPositive {
                min_eigenvalue: min_eig,
            });
        }
        Ok(Self { rho })
    }

    /// The maximally entangled target state (|HH> + |VV>)/sqrt(2).
    pub fn phi_plus() -> Self {
        let ket = phi_plus_ket();
        Self {
            rho: outer(&ket, &ket),
        }
    }

    /// Identity / 4.
    pub fn maximally_mixed() -> Self {
        let q = Complex64::new(0.25, 0.0);
        let mut rho = [[ZERO; 4]; 4];
        for (i, row) in rho.iter_mut().enumerate() {
            row[i] = q;
        }
        Self { rho }
    }

    /// Isotropic mixture `f |phi+><phi+| + (1-f)/3 (I - |phi+><phi+|)`.
    ///
    /// Its fidelity to the Bell state equals `f`; its visibility in any
    /// basis is `(4f - 1)/3`.
    pub fn werner(f: f64) -> Result<Self, QuantumError> {
        if !(0.25..=1.0).contains(&f) {
            return Err(QuantumError::FidelityOutOfRange(f));
        }
        let ket = phi_plus_ket();
        let proj = outer(&ket, &ket);
        let rest = (1.0 - f) / 3.0;
        let mut rho = [[ZERO; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let id = if i == j { 1.0 } else { 0.0 };
                rho[i][j] = proj[i][j] * (f - rest) + Complex64::new(id * rest, 0.0);
            }
        }
        Ok(Self { rho })
    }

    /// Werner state whose two-basis fidelity estimate `(V_HV + V_DA)/2`
    /// equals `estimate`.
    ///
    /// The two-basis estimator under-reports the true fidelity of a Werner
    /// state, so the underlying state has fidelity `(3*estimate + 1)/4`.
    pub fn werner_from_fidelity_estimate(estimate: f64) -> Result<Self, QuantumError> {
        Self::werner((3.0 * estimate + 1.0) / 4.0)
    }

    pub fn matrix(&self) -> &Mat4 {
        &self.rho
    }

    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        self.rho[row][col]
    }

    pub fn trace(&self) -> f64 {
        trace(&self.rho).re
    }

    /// Overlap `<psi| rho |psi>` with a pure state.
    pub fn fidelity_to_pure(&self, ket: &[Complex64; 4]) -> f64 {
        let mut acc = ZERO;
        for i in 0..4 {
            for j in 0..4 {
                acc += ket[i].conj() * self.rho[i][j] * ket[j];
            }
        }
        acc.re
    }

    /// Fidelity to the phi+ Bell state.
    pub fn phi_plus_fidelity(&self) -> f64 {
        self.fidelity_to_pure(&phi_plus_ket())
    }
}

/// Joint outcome probabilities `Tr(rho (Pa x Pb))` for the two analyzers.
pub fn outcome_probs(state: &TwoQubitState, a: Basis, b: Basis) -> OutcomeTable {
    let mut p = [[0.0f64; 2]; 2];
    for (oa, row) in p.iter_mut().enumerate() {
        for (ob, cell) in row.iter_mut().enumerate() {
            let proj = kron(&a.projector(oa as u8), &b.projector(ob as u8));
            let prob = mul_trace(state.matrix(), &proj).re;
            // Round-off can leave tiny negatives on exact zeros.
            *cell = prob.max(0.0);
        }
    }
    OutcomeTable { p }
}

/// Correlation visibility `(P_same - P_diff) / (P_same + P_diff)` with both
/// analyzers in the given basis.
pub fn visibility(state: &TwoQubitState, basis: Basis) -> f64 {
    let t = outcome_probs(state, basis, basis);
    let same = t.same();
    let diff = t.diff();
    (same - diff) / (same + diff)
}

fn outer(ket: &[Complex64; 4], bra: &[Complex64; 4]) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = ket[i] * bra[j].conj();
        }
    }
    m
}

fn trace(m: &Mat4) -> Complex64 {
    m[0][0] + m[1][1] + m[2][2] + m[3][3]
}

/// Tr(a * b) without materializing the product.
fn mul_trace(a: &Mat4, b: &Mat4) -> Complex64 {
    let mut acc = ZERO;
    for i in 0..4 {
        for k in 0..4 {
            acc += a[i][k] * b[k][i];
        }
    }
    acc
}

/// Kronecker product of two single-qubit operators, basis order
/// {HH, HV, VH, VV}.
fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for ia in 0..2 {
        for ja in 0..2 {
            for ib in 0..2 {
                for jb in 0..2 {
                    m[2 * ia + ib][2 * ja + jb] = a[ia][ja] * b[ib][jb];
                }
            }
        }
    }
    m
}

fn matmul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut acc = ZERO;
            for (k, bk) in b.iter().enumerate() {
                acc += a[i][k] * bk[j];
            }
            m[i][j] = acc;
        }
    }
    m
}

fn dagger(a: &Mat4) -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = a[j][i].conj();
        }
    }
    m
}

fn off_diagonal_norm(a: &Mat4) -> f64 {
    let mut acc = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                acc += a[i][j].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Eigenvalues of a Hermitian 4x4 matrix via cyclic complex Jacobi
/// rotations.
pub fn hermitian_eigenvalues(m: &Mat4) -> [f64; 4] {
    let mut a = *m;
    for _ in 0..60 {
        if off_diagonal_norm(&a) < 1e-14 {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                let apq = a[p][q];
                let r = apq.norm();
                if r < 1e-300 {
                    continue;
                }
                let phase = apq / r;
                let tau = (a[q][q].re - a[p][p].re) / (2.0 * r);
                let sign = if tau >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let mut j = [[ZERO; 4]; 4];
                for (i, row) in j.iter_mut().enumerate() {
                    row[i] = Complex64::new(1.0, 0.0);
                }
                j[p][p] = Complex64::new(c, 0.0);
                j[q][q] = Complex64::new(c, 0.0);
                j[p][q] = -phase * s;
                j[q][p] = phase.conj() * s;
                a = matmul(&dagger(&j), &matmul(&a, &j));
            }
        }
    }
    [a[0][0].re, a[1][1].re, a[2][2].re, a[3][3].re]
}
