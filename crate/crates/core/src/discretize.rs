//! Zero-order-hold sampling of a continuous plant and the controllability and
//! observability indices that fix the input/output transmission rates.

use crate::error::{Error, Result};
use crate::matrix::{Matrix, RANK_TOL};

/// `dx/dt = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPlant {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl ContinuousPlant {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() || b.rows() != n || c.cols() != n {
            return Err(Error::Dimension(format!(
                "A {:?}, B {:?}, C {:?}",
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn nx(&self) -> usize {
        self.a.rows()
    }

    pub fn nu(&self) -> usize {
        self.b.cols()
    }

    pub fn ny(&self) -> usize {
        self.c.rows()
    }
}

/// The plant sampled with input period `delta`; outputs are sent every
/// `big_delta = eta * delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub a_d: Matrix,
    pub b_d: Matrix,
    pub c: Matrix,
    pub delta: f64,
    pub big_delta: f64,
    pub eta: usize,
    pub mu: usize,
}

impl DiscretePlant {
    /// Samples `plant` for output period `big_delta`. The input period is
    /// `big_delta / b` for the smallest `b` in `1..=n_x` whose sampled pair has
    /// controllability index exactly `b`.
    pub fn sample(plant: &ContinuousPlant, big_delta: f64) -> Result<Self> {
        if !(big_delta > 0.0 && big_delta.is_finite()) {
            return Err(Error::Domain(format!(
                "output period must be positive, got {big_delta}"
            )));
        }
        for b in 1..=plant.nx() {
            let delta = big_delta / b as f64;
            let (a_d, b_d) = discretize(plant, delta)?;
            match controllability_index(&a_d, &b_d) {
                Ok(eta) if eta == b => {
                    let a_lift = a_d.pow(eta as u32)?;
                    let mu = observability_index(&plant.c, &a_lift)?;
                    return Ok(Self {
                        a_d,
                        b_d,
                        c: plant.c.clone(),
                        delta,
                        big_delta,
                        eta,
                        mu,
                    });
                }
                Ok(_) => {}
                Err(Error::Uncontrollable { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Err(Error::NoSamplingPeriod(big_delta))
    }

    /// `A_d^eta`, the state map over one output period with zero input.
    pub fn a_lift(&self) -> Matrix {
        self.a_d.pow(self.eta as u32).expect("a_d is square")
    }

    pub fn nx(&self) -> usize {
        self.a_d.rows()
    }
}

/// `(A_d, B_d)` for input period `delta`, read off one exponential of the
/// augmented matrix `[[A, B], [0, 0]]`.
pub fn discretize(plant: &ContinuousPlant, delta: f64) -> Result<(Matrix, Matrix)> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!(
            "sampling period must be positive, got {delta}"
        )));
    }
    let (n, m) = (plant.nx(), plant.nu());
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.set_block(0, 0, &plant.a);
    aug.set_block(0, n, &plant.b);
    let e = aug.exp(delta)?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, m)))
}

/// Smallest `eta` with `rank [B_d, A_d B_d, .., A_d^(eta-1) B_d] = n_x`.
pub fn controllability_index(a_d: &Matrix, b_d: &Matrix) -> Result<usize> {
    let n = a_d.rows();
    if !a_d.is_square() || b_d.rows() != n {
        return Err(Error::Dimension(format!(
            "A_d {:?}, B_d {:?}",
            a_d.shape(),
            b_d.shape()
        )));
    }
    let mut block = b_d.clone();
    let mut stacked = b_d.clone();
    let mut rank = 0;
    for eta in 1..=n {
        rank = stacked.rank(RANK_TOL);
        if rank == n {
            return Ok(eta);
        }
        block = a_d * &block;
        stacked = Matrix::hstack(&[&stacked, &block])?;
    }
    Err(Error::Uncontrollable { rank, n })
}

/// Smallest `mu` with `rank [C; C a_lift; ..; C a_lift^(mu-1)] = n_x`.
pub fn observability_index(c: &Matrix, a_lift: &Matrix) -> Result<usize> {
    let n = a_lift.rows();
    if !a_lift.is_square() || c.cols() != n {
        return Err(Error::Dimension(format!(
            "C {:?}, A {:?}",
            c.shape(),
            a_lift.shape()
        )));
    }
    match controllability_index(&a_lift.transpose(), &c.transpose()) {
        Err(Error::Uncontrollable { rank, n }) => Err(Error::Unobservable { rank, n }),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn pure_integrator() {
        let p = ContinuousPlant::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            Matrix::identity(2),
        )
        .unwrap();
        let (a_d, b_d) = discretize(&p, 0.3).unwrap();
        assert!((&a_d - &Matrix::identity(2)).inf_norm() < 1e-15);
        assert!((&b_d - &Matrix::identity(2).scale(0.3)).inf_norm() < 1e-15);
    }

    #[test]
    fn scalar_closed_form() {
        let p = ContinuousPlant::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        let (a_d, b_d) = discretize(&p, 2f64.ln()).unwrap();
        assert!((a_d[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((b_d[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn stable_scalar_lands_in_unit_interval() {
        let p = ContinuousPlant::new(scalar(-3.0), scalar(1.0), scalar(1.0)).unwrap();
        let (a_d, _) = discretize(&p, 0.2).unwrap();
        assert!(a_d[(0, 0)] > 0.0 && a_d[(0, 0)] < 1.0);
    }

    #[test]
    fn indices_of_integrator_chain() {
        let n = 4;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n - 1 {
            a[(i, i + 1)] = 1.0;
        }
        let mut b = Matrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        let mut c = Matrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        let p = ContinuousPlant::new(a, b, c.clone()).unwrap();
        let (a_d, b_d) = discretize(&p, 1.0).unwrap();
        assert_eq!(controllability_index(&a_d, &b_d).unwrap(), n);
        assert_eq!(observability_index(&c, &a_d).unwrap(), n);
        assert_eq!(
            controllability_index(&a_d, &Matrix::identity(n)).unwrap(),
            1
        );
        assert_eq!(observability_index(&Matrix::identity(n), &a_d).unwrap(), 1);
    }

    #[test]
    fn uncontrollable_pair_is_reported() {
        let a = Matrix::diag(&[0.5, 0.7]);
        let b = Matrix::column(&[1.0, 0.0]);
        assert!(matches!(
            controllability_index(&a, &b),
            Err(Error::Uncontrollable { rank: 1, n: 2 })
        ));
        assert!(matches!(
            observability_index(&b.transpose(), &a),
            Err(Error::Unobservable { rank: 1, n: 2 })
        ));
    }

    #[test]
    fn sample_rejects_bad_period() {
        let p = ContinuousPlant::new(scalar(1.0), scalar(1.0), scalar(1.0)).unwrap();
        assert!(DiscretePlant::sample(&p, 0.0).is_err());
        let dp = DiscretePlant::sample(&p, 0.5).unwrap();
        assert_eq!((dp.eta, dp.mu), (1, 1));
        assert_eq!(dp.delta, 0.5);
    }
}
