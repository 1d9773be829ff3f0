use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the simplex: strictly positive parts summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Composition(Vec<f64>);

impl Composition {
    /// Closes `parts` to unit sum. Every part must be finite and positive.
    pub fn new(parts: &[f64]) -> Result<Self> {
        if parts.len() < 2 {
            return Err(Error::InvalidInput(format!("composition with {} parts", parts.len())));
        }
        for (k, &v) in parts.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("part {k} is {v}, parts must be strictly positive")));
            }
        }
        let s: f64 = parts.iter().sum();
        Ok(Self(parts.iter().map(|v| v / s).collect()))
    }

    pub fn uniform(p: usize) -> Result<Self> {
        Self::new(&vec![1.0; p])
    }

    pub fn parts(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn closure(parts: &[f64]) -> Result<Composition> {
    Composition::new(parts)
}

/// `ln(x_k / g(x))` with `g` the geometric mean.
pub fn clr(x: &Composition) -> Vec<f64> {
    let logs: Vec<f64> = x.0.iter().map(|v| v.ln()).collect();
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    logs.into_iter().map(|l| l - mean).collect()
}

fn from_clr(c: &[f64]) -> Result<Composition> {
    // shifting by the max keeps exp in range; closure removes the shift
    let top = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Composition::new(&c.iter().map(|v| (v - top).exp()).collect::<Vec<_>>())
}

/// Perturbation `x (+) y`: closure of the componentwise product.
pub fn perturb(x: &Composition, y: &Composition) -> Result<Composition> {
    check_len(x.len(), y.len())?;
    Composition::new(&x.0.iter().zip(&y.0).map(|(a, b)| a * b).collect::<Vec<_>>())
}

/// Powering `alpha (.) x`: closure of the componentwise power.
pub fn power(x: &Composition, alpha: f64) -> Result<Composition> {
    from_clr(&clr(x).iter().map(|c| alpha * c).collect::<Vec<_>>())
}

/// `(x (+) y, alpha (.) x)`.
pub fn aitchison_ops(x: &Composition, y: &Composition, alpha: f64) -> Result<(Composition, Composition)> {
    Ok((perturb(x, y)?, power(x, alpha)?))
}

/// `1/(2p) sum_{k,l} ln(x_k/x_l) ln(y_k/y_l)`.
pub fn aitchison_inner(x: &Composition, y: &Composition) -> Result<f64> {
    check_len(x.len(), y.len())?;
    let p = x.len();
    let mut acc = 0.0;
    for k in 0..p {
        for l in 0..p {
            acc += (x.0[k] / x.0[l]).ln() * (y.0[k] / y.0[l]).ln();
        }
    }
    Ok(acc / (2 * p) as f64)
}

pub fn aitchison_distance(x: &Composition, y: &Composition) -> Result<f64> {
    let inv = power(y, -1.0)?;
    let d = perturb(x, &inv)?;
    Ok(aitchison_inner(&d, &d)?.sqrt())
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!("compositions with {a} and {b} parts")));
    }
    Ok(())
}

/// `p x (p-1)` orthonormal basis of the zero-sum subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    v: DMatrix<f64>,
}

impl ContrastMatrix {
    const TOL: f64 = 1e-10;

    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        let p = v.nrows();
        if p < 2 || v.ncols() != p - 1 {
            return Err(Error::DimensionMismatch(format!(
                "contrast matrix is {}x{}, expected p x (p-1)",
                v.nrows(),
                v.ncols()
            )));
        }
        let gram_err = (v.transpose() * &v - DMatrix::identity(p - 1, p - 1)).abs().max();
        let sum_err = v.row_sum().abs().max();
        if gram_err > Self::TOL || sum_err > Self::TOL {
            return Err(Error::InvalidInput(format!(
                "contrast matrix: |V'V - I| = {gram_err:e}, |1'V| = {sum_err:e}"
            )));
        }
        Ok(Self { v })
    }

    /// Helmert basis: column `k` is `(1, .., 1, -k, 0, .., 0) / sqrt(k (k+1))`.
    pub fn helmert(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidInput(format!("contrast matrix for p = {p}")));
        }
        let v = DMatrix::from_fn(p, p - 1, |r, c| {
            let k = (c + 1) as f64;
            let norm = (k * (k + 1.0)).sqrt();
            match r.cmp(&(c + 1)) {
                std::cmp::Ordering::Less => 1.0 / norm,
                std::cmp::Ordering::Equal => -k / norm,
                std::cmp::Ordering::Greater => 0.0,
            }
        });
        Self::new(v)
    }

    /// The Helmert basis rotated by the Q factor of a Gaussian matrix.
    pub fn random<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Self> {
        let h = Self::helmert(p)?;
        let g = DMatrix::from_fn(p - 1, p - 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        Self::new(h.v * q)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn p(&self) -> usize {
        self.v.nrows()
    }

    pub fn ilr(&self, x: &Composition) -> Result<Vec<f64>> {
        check_len(x.len(), self.p())?;
        let c = DVector::from_vec(clr(x));
        Ok((self.v.transpose() * c).iter().cloned().collect())
    }

    /// Back to the simplex through `clr = V u`.
    pub fn ilr_inv(&self, u: &[f64]) -> Result<Composition> {
        check_len(u.len(), self.p() - 1)?;
        let c = &self.v * DVector::from_column_slice(u);
        from_clr(c.as_slice())
    }
}

pub fn ilr(x: &Composition, v: &ContrastMatrix) -> Result<Vec<f64>> {
    v.ilr(x)
}

pub fn ilr_inv(u: &[f64], v: &ContrastMatrix) -> Result<Composition> {
    v.ilr_inv(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn comp(p: usize) -> impl Strategy<Value = Composition> {
        prop::collection::vec(1e-3..10.0f64, p).prop_map(|v| Composition::new(&v).unwrap())
    }

    #[test]
    fn uniform_is_origin() {
        let u = Composition::uniform(5).unwrap();
        assert!(clr(&u).iter().all(|c| c.abs() < 1e-15));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = ContrastMatrix::random(5, &mut rng).unwrap();
        assert!(v.ilr(&u).unwrap().iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn two_part_log_ratio() {
        let e = std::f64::consts::E;
        let x = Composition::new(&[e / (1.0 + e), 1.0 / (1.0 + e)]).unwrap();
        let c = clr(&x);
        assert!((c[0] - 0.5).abs() < 1e-14 && (c[1] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_parts() {
        assert!(matches!(Composition::new(&[0.2, 0.0, 0.8]), Err(Error::Domain(_))));
        assert!(matches!(Composition::new(&[0.2, -0.1, 0.9]), Err(Error::Domain(_))));
    }

    #[test]
    fn helmert_columns() {
        for p in 2..8 {
            let h = ContrastMatrix::helmert(p).unwrap();
            assert_eq!(h.matrix().ncols(), p - 1);
        }
        let h = ContrastMatrix::helmert(3).unwrap();
        let s2 = 2.0f64.sqrt();
        assert!((h.matrix()[(0, 0)] - 1.0 / s2).abs() < 1e-15);
        assert!((h.matrix()[(1, 0)] + 1.0 / s2).abs() < 1e-15);
    }

    #[test]
    fn invalid_contrast_rejected() {
        let v = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(ContrastMatrix::new(v).is_err());
    }

    #[test]
    fn neutral_and_inverse_elements() {
        let x = Composition::new(&[0.1, 0.3, 0.6]).unwrap();
        let u = Composition::uniform(3).unwrap();
        let xu = perturb(&x, &u).unwrap();
        assert!(xu.parts().iter().zip(x.parts()).all(|(a, b)| (a - b).abs() < 1e-15));
        let zero = power(&x, 0.0).unwrap();
        assert!(zero.parts().iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        let back = perturb(&x, &power(&x, -1.0).unwrap()).unwrap();
        assert!(back.parts().iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
    }

    proptest! {
        #[test]
        fn clr_sums_to_zero(x in comp(6)) {
            prop_assert!(clr(&x).iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn clr_of_perturbation_adds(x in comp(4), y in comp(4)) {
            let lhs = clr(&perturb(&x, &y).unwrap());
            let (cx, cy) = (clr(&x), clr(&y));
            for k in 0..4 {
                prop_assert!((lhs[k] - cx[k] - cy[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn ilr_round_trip(x in comp(5), seed in 0u64..1000) {
            let v = ContrastMatrix::random(5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let back = v.ilr_inv(&v.ilr(&x).unwrap()).unwrap();
            for (a, b) in back.parts().iter().zip(x.parts()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn ilr_preserves_inner_product(x in comp(4), y in comp(4), seed in 0u64..1000) {
            let v = ContrastMatrix::random(4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let (u, w) = (v.ilr(&x).unwrap(), v.ilr(&y).unwrap());
            let euclid: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
            let a = aitchison_inner(&x, &y).unwrap();
            prop_assert!((euclid - a).abs() < 1e-9 * (1.0 + a.abs()));
        }

        #[test]
        fn ilr_is_isometry(x in comp(4), y in comp(4)) {
            let v = ContrastMatrix::helmert(4).unwrap();
            let (u, w) = (v.ilr(&x).unwrap(), v.ilr(&y).unwrap());
            let d: f64 = u.iter().zip(&w).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!((d - aitchison_distance(&x, &y).unwrap()).abs() < 1e-9);
        }
    }
}
