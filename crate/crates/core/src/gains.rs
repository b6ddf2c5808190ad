//! Gain synthesis and the exponential decay constants of the closed loops.
//!
//! The deadbeat gain uses the Luenberger column ordering of the
//! controllability matrix: each input contributes a chain `b_j, A b_j, ..`
//! of length `mu_j`, the last row of each chain block of `T^-1` spans the
//! companion coordinates, and placing every closed-loop eigenvalue at the
//! origin reduces to one linear solve.

use crate::discretize::DiscretePlant;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, RANK_TOL};

/// Reciprocal condition number below which a basis change is rejected.
pub const RCOND_MIN: f64 = 1e-10;

/// Largest power used by the Gelfand stability certificate.
pub const CERT_POWER: u32 = 512;

/// Convergence threshold on the max-norm change of the Riccati iterate.
pub const RICCATI_TOL: f64 = 1e-12;

pub const RICCATI_MAX_ITER: usize = 100_000;

/// Hard cap on decay-constant scans.
pub const SCAN_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    pub k: Matrix,
    pub m: Matrix,
    /// `A_d^eta (I - M C)`
    pub r: Matrix,
    /// `A_d + B_d K`
    pub r_bar: Matrix,
    pub deadbeat_observer: bool,
}

impl GainSet {
    pub fn new(dp: &DiscretePlant, k: Matrix, m: Matrix, deadbeat_observer: bool) -> Result<Self> {
        let n = dp.nx();
        if k.shape() != (dp.b_d.cols(), n) || m.shape() != (n, dp.c.rows()) {
            return Err(Error::Dimension(format!(
                "K {:?}, M {:?}",
                k.shape(),
                m.shape()
            )));
        }
        let r = &dp.a_lift() * &(&Matrix::identity(n) - &(&m * &dp.c));
        let r_bar = &dp.a_d + &(&dp.b_d * &k);
        Ok(Self {
            k,
            m,
            r,
            r_bar,
            deadbeat_observer,
        })
    }

    /// Synthesizes a deadbeat `K` and either a steady-state filter gain or a
    /// deadbeat observer gain.
    pub fn synthesize(dp: &DiscretePlant, deadbeat_observer: bool) -> Result<Self> {
        let k = design_deadbeat_gain(&dp.a_d, &dp.b_d)?;
        let a_lift = dp.a_lift();
        let m = if deadbeat_observer {
            design_deadbeat_observer(&a_lift, &dp.c, dp.mu)?
        } else {
            design_observer_gain(&a_lift, &dp.c)?
        };
        Self::new(dp, k, m, deadbeat_observer)
    }

    /// `||K R_bar^k M||` for `k = 0..eta`.
    pub fn input_gain_norms(&self, eta: usize) -> Vec<f64> {
        let mut p = self.m.clone();
        (0..eta)
            .map(|_| {
                let v = (&self.k * &p).inf_norm();
                p = &self.r_bar * &p;
                v
            })
            .collect()
    }
}

/// Deadbeat state feedback: `(A_d + B_d K)^eta = 0` with `eta` the
/// controllability index.
pub fn design_deadbeat_gain(a_d: &Matrix, b_d: &Matrix) -> Result<Matrix> {
    let n = a_d.rows();
    let m = b_d.cols();
    if !a_d.is_square() || b_d.rows() != n {
        return Err(Error::Dimension(format!(
            "A_d {:?}, B_d {:?}",
            a_d.shape(),
            b_d.shape()
        )));
    }
    let cols: Vec<Matrix> = (0..m).map(|j| b_d.block(0, j, n, 1)).collect();

    // Chain lengths from the ordering b_1..b_m, A b_1..A b_m, ..
    let mut chain = vec![0usize; m];
    let mut alive = vec![true; m];
    let mut picked: Option<Matrix> = None;
    let mut powers: Vec<Matrix> = cols.clone();
    for _ in 0..n {
        for j in 0..m {
            if !alive[j] {
                continue;
            }
            let candidate = match &picked {
                None => powers[j].clone(),
                Some(p) => Matrix::hstack(&[p, &powers[j]])?,
            };
            if candidate.rank(RANK_TOL) == candidate.cols() {
                picked = Some(candidate);
                chain[j] += 1;
            } else {
                alive[j] = false;
            }
        }
        for p in powers.iter_mut() {
            *p = a_d * &*p;
        }
    }
    let found = picked.as_ref().map_or(0, Matrix::cols);
    if found < n {
        return Err(Error::Uncontrollable { rank: found, n });
    }

    let mut blocks = Vec::with_capacity(n);
    for (j, col) in cols.iter().enumerate() {
        let mut v = col.clone();
        for _ in 0..chain[j] {
            blocks.push(v.clone());
            v = a_d * &v;
        }
    }
    let t = Matrix::hstack(&blocks.iter().collect::<Vec<_>>())?;
    let rcond = t.rcond();
    if rcond < RCOND_MIN {
        return Err(Error::IllConditioned(rcond));
    }
    let t_inv = t.inverse()?;

    let active: Vec<usize> = (0..m).filter(|&j| chain[j] > 0).collect();
    let mut s_rows = Vec::with_capacity(active.len());
    let mut end = 0;
    for &j in &active {
        end += chain[j];
        let q = t_inv.block(end - 1, 0, 1, n);
        s_rows.push(&q * &a_d.pow(chain[j] as u32 - 1)?);
    }
    let s = Matrix::vstack(&s_rows.iter().collect::<Vec<_>>())?;
    let b_active = Matrix::hstack(&active.iter().map(|&j| &cols[j]).collect::<Vec<_>>())?;
    let k_active = -&(&s * &b_active).solve(&(&s * a_d))?;

    let mut k = Matrix::zeros(m, n);
    for (row, &j) in active.iter().enumerate() {
        k.set_block(j, 0, &k_active.block(row, 0, 1, n));
    }
    Ok(k)
}

/// `||(A_d + B_d K)^eta||`.
pub fn verify_nilpotent(a_d: &Matrix, b_d: &Matrix, k: &Matrix, eta: usize) -> f64 {
    (a_d + &(b_d * k))
        .pow(eta as u32)
        .expect("closed loop is square")
        .inf_norm()
}

/// Steady-state filter gain for the pair `(C, F)` with unit noise weights.
/// The resulting `F (I - M C)` is certified Schur stable.
pub fn design_observer_gain(f: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = f.rows();
    if !f.is_square() || c.cols() != n {
        return Err(Error::Dimension(format!(
            "F {:?}, C {:?}",
            f.shape(),
            c.shape()
        )));
    }
    let p = riccati_fixed_point(f, c)?;
    let s = &(&(c * &p) * &c.transpose()) + &Matrix::identity(c.rows());
    // M = P C^T S^-1, computed as (S^-1 C P)^T since P and S are symmetric.
    let m = s.solve(&(c * &p))?.transpose();
    let closed = f * &(&Matrix::identity(n) - &(&m * c));
    let cert = closed.gelfand_radius(CERT_POWER)?;
    if !cert.is_conclusive() {
        return Err(Error::NotStable(format!(
            "filter loop bound {:.6}",
            cert.value
        )));
    }
    Ok(m)
}

fn riccati_fixed_point(f: &Matrix, c: &Matrix) -> Result<Matrix> {
    let n = f.rows();
    let id_n = Matrix::identity(n);
    let id_y = Matrix::identity(c.rows());
    let ft = f.transpose();
    let ct = c.transpose();
    let mut p = id_n.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let s = &(&(c * &p) * &ct) + &id_y;
        let gain = s.solve(&(c * &p))?;
        let inner = &p - &(&(&p * &ct) * &gain);
        let next = &(&(f * &inner) * &ft) + &id_n;
        if !next.all_finite() {
            return Err(Error::Overflow("Riccati iterate".into()));
        }
        let change = (&next - &p).inf_norm();
        p = next;
        if change < RICCATI_TOL {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence(RICCATI_MAX_ITER))
}

/// Observer gain with `(a_lift (I - M C))^mu = 0`, from the deadbeat design on
/// the dual pair.
pub fn design_deadbeat_observer(a_lift: &Matrix, c: &Matrix, mu: usize) -> Result<Matrix> {
    let k_dual = design_deadbeat_gain(&a_lift.transpose(), &c.transpose())?;
    let m = -&a_lift.solve(&k_dual.transpose())?;
    let r = a_lift * &(&Matrix::identity(a_lift.rows()) - &(&m * c));
    let residual = r.pow(mu as u32)?.inf_norm();
    let scale = a_lift.inf_norm().max(1.0).powi(mu as i32);
    if residual > 1e-8 * scale {
        return Err(Error::NotStable(format!(
            "observer residual {residual:.3e} at power {mu}"
        )));
    }
    Ok(m)
}

/// Unit-weight linear-quadratic state feedback: the filter design applied to
/// `(A_d^T, B_d^T)`, transposed back. `A_d + B_d K` is Schur stable.
pub fn design_lq_gain(a_d: &Matrix, b_d: &Matrix) -> Result<Matrix> {
    let dual = design_observer_gain(&a_d.transpose(), &b_d.transpose())?;
    Ok(-&(&dual.transpose() * a_d))
}

/// Constants with `||R^l|| <= a0 rho^l`, `||R^l A_d^eta M|| <= a1 rho^l` and
/// `sum_i ||R^l A_d^(eta-i-1) B_d|| ||K R_bar^i M|| <= a2 rho^l`. The
/// output-only scheme uses the same `R`, so `g0 = a0` and `g1 = a1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConstants {
    pub rho: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub g0: f64,
    pub g1: f64,
    /// Gelfand bound on the spectral radius of `R`.
    pub certified_radius: f64,
    /// Last power scanned; the tail beyond it follows from submultiplicativity.
    pub max_power_used: usize,
}

/// Constants for the single-rate predictor loop `Pi_L = A_d - L C`:
/// `||Pi_L^l|| <= h0 rho^l` and `||Pi_L^l L|| <= h1 rho^l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckConstants {
    pub rho: f64,
    pub h0: f64,
    pub h1: f64,
    pub certified_radius: f64,
    pub max_power_used: usize,
}

/// Picks `rho` halfway between the certified radius of `m` and one.
pub fn select_rho(m: &Matrix) -> Result<(f64, f64)> {
    let cert = m.gelfand_radius(CERT_POWER)?;
    if !cert.is_conclusive() {
        return Err(Error::NotStable(format!(
            "spectral bound {:.6} at power {}",
            cert.value, cert.power
        )));
    }
    Ok(((cert.value + 1.0) / 2.0, cert.value))
}

/// Last power to scan for `m` and `rho`. With `L` the first power where
/// `||(m/rho)^L|| <= 1`, every power past `2L` factors as `L`-blocks times a
/// scanned remainder, so maxima over `0..=2L` bound the whole sequence. The
/// scan also runs until `||m^l|| < 1e-14` (at most 512).
pub fn scan_horizon(m: &Matrix, rho: f64) -> Result<usize> {
    let scaled = m.scale(1.0 / rho);
    let mut p = Matrix::identity(m.rows());
    let mut settle = None;
    let mut tiny = None;
    for l in 1..=SCAN_CAP {
        p = &p * &scaled;
        let norm = p.inf_norm();
        if settle.is_none() && norm <= 1.0 {
            settle = Some(l);
        }
        if tiny.is_none() && (norm == 0.0 || norm.ln() + l as f64 * rho.ln() < 1e-14f64.ln()) {
            tiny = Some(l);
        }
        if settle.is_some() && (tiny.is_some() || l >= 512) {
            break;
        }
    }
    let settle = settle
        .ok_or_else(|| Error::NotStable(format!("no power below rho^l within {SCAN_CAP}")))?;
    let horizon = (2 * settle).max(tiny.unwrap_or(512).min(512));
    if horizon > SCAN_CAP {
        return Err(Error::NotStable(format!(
            "scan horizon {horizon} exceeds {SCAN_CAP}"
        )));
    }
    Ok(horizon)
}

pub fn derive_decay_constants(gs: &GainSet, dp: &DiscretePlant) -> Result<DecayConstants> {
    let (rho, radius) = select_rho(&gs.r)?;
    let horizon = scan_horizon(&gs.r, rho)?;
    let eta = dp.eta;
    let lift_m = &dp.a_lift() * &gs.m;
    let input_norms = gs.input_gain_norms(eta);
    let input_paths: Vec<Matrix> = (0..eta)
        .map(|i| &dp.a_d.pow((eta - i - 1) as u32).expect("square") * &dp.b_d)
        .collect();

    let scaled = gs.r.scale(1.0 / rho);
    let mut p = Matrix::identity(dp.nx());
    let (mut a0, mut a1, mut a2) = (0.0f64, 0.0f64, 0.0f64);
    for l in 0..=horizon {
        if l > 0 {
            p = &p * &scaled;
            a0 = a0.max(p.inf_norm());
        }
        a1 = a1.max((&p * &lift_m).inf_norm());
        let s: f64 = input_paths
            .iter()
            .zip(&input_norms)
            .map(|(path, w)| (&p * path).inf_norm() * w)
            .sum();
        a2 = a2.max(s);
    }
    Ok(DecayConstants {
        rho,
        a0,
        a1,
        a2,
        g0: a0,
        g1: a1,
        certified_radius: radius,
        max_power_used: horizon,
    })
}

/// Constants for `Pi_L = a_d - l c`.
pub fn derive_ack_constants(a_d: &Matrix, c: &Matrix, l: &Matrix) -> Result<AckConstants> {
    let pi = a_d - &(l * c);
    let (rho, radius) = select_rho(&pi)?;
    let horizon = scan_horizon(&pi, rho)?;
    let scaled = pi.scale(1.0 / rho);
    let mut p = Matrix::identity(a_d.rows());
    let (mut h0, mut h1) = (0.0f64, 0.0f64);
    for step in 0..=horizon {
        if step > 0 {
            p = &p * &scaled;
            h0 = h0.max(p.inf_norm());
        }
        h1 = h1.max((&p * l).inf_norm());
    }
    Ok(AckConstants {
        rho,
        h0,
        h1,
        certified_radius: radius,
        max_power_used: horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Matrix {
        Matrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn scalar_deadbeat() {
        let k = design_deadbeat_gain(&scalar(2.0), &scalar(1.0)).unwrap();
        assert!((k[(0, 0)] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn double_integrator_deadbeat() {
        let a = Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let b = Matrix::column(&[0.5, 1.0]);
        let k = design_deadbeat_gain(&a, &b).unwrap();
        assert!(verify_nilpotent(&a, &b, &k, 2) < 1e-10);
    }

    #[test]
    fn zero_gain_on_unstable_map() {
        let a = Matrix::diag(&[1.5, 0.2]);
        let b = Matrix::column(&[1.0, 1.0]);
        let k = Matrix::zeros(1, 2);
        assert!((verify_nilpotent(&a, &b, &k, 2) - 2.25).abs() < 1e-14);
    }

    #[test]
    fn uncontrollable_deadbeat_fails() {
        let a = Matrix::diag(&[0.5, 0.7]);
        let b = Matrix::column(&[1.0, 0.0]);
        assert!(matches!(
            design_deadbeat_gain(&a, &b),
            Err(Error::Uncontrollable { .. })
        ));
    }

    /// Scalar Riccati fixed point `p = a^2 p / (p + 1) + 1` by bisection.
    fn scalar_riccati_oracle(a: f64) -> f64 {
        let g = |p: f64| a * a * p / (p + 1.0) + 1.0 - p;
        let (mut lo, mut hi) = (1.0, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn scalar_filter_gain_matches_oracle() {
        let m = design_observer_gain(&scalar(0.5), &scalar(1.0)).unwrap();
        let p = scalar_riccati_oracle(0.5);
        assert!((m[(0, 0)] - p / (p + 1.0)).abs() < 1e-10);
    }

    #[test]
    fn full_measurement_observers() {
        let a = Matrix::from_rows(&[[1.2, 0.3], [-0.4, 0.9]]).unwrap();
        let c = Matrix::identity(2);
        let m = design_observer_gain(&a, &c).unwrap();
        let r = &a * &(&Matrix::identity(2) - &m);
        assert!(r.gelfand_radius(CERT_POWER).unwrap().is_conclusive());

        let m = design_deadbeat_observer(&a, &c, 1).unwrap();
        let r = &a * &(&Matrix::identity(2) - &m);
        assert!(r.inf_norm() < 1e-12);
        assert!((&m - &Matrix::identity(2)).inf_norm() < 1e-12);
    }

    #[test]
    fn scalar_deadbeat_observer_cancels() {
        for a in [0.3, 2.0, -5.0] {
            let m = design_deadbeat_observer(&scalar(a), &scalar(2.0), 1).unwrap();
            assert!((m[(0, 0)] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn lq_gain_stabilises() {
        let a = Matrix::from_rows(&[[1.1, 0.4], [0.0, 1.3]]).unwrap();
        let b = Matrix::column(&[0.0, 1.0]);
        let k = design_lq_gain(&a, &b).unwrap();
        let closed = &a + &(&b * &k);
        assert!(closed.gelfand_radius(CERT_POWER).unwrap().is_conclusive());
    }

    #[test]
    fn scalar_decay_scan() {
        let r = scalar(0.5);
        let horizon = scan_horizon(&r, 0.75).unwrap();
        assert_eq!(horizon, 47);
        let a_d = scalar(1.0);
        let dp = DiscretePlant {
            a_d: a_d.clone(),
            b_d: scalar(1.0),
            c: scalar(1.0),
            delta: 1.0,
            big_delta: 1.0,
            eta: 1,
            mu: 1,
        };
        let gs = GainSet::new(&dp, scalar(-1.0), scalar(0.5), false).unwrap();
        assert!((gs.r[(0, 0)] - 0.5).abs() < 1e-15);
        let dc = derive_decay_constants(&gs, &dp).unwrap();
        assert!((dc.rho - 0.75).abs() < 1e-12);
        assert!((dc.a0 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn deadbeat_observer_constants_are_finite() {
        let a_d = Matrix::from_rows(&[[1.0, 0.2], [0.0, 1.0]]).unwrap();
        let c = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let m = design_deadbeat_observer(&a_d, &c, 2).unwrap();
        let r = &a_d * &(&Matrix::identity(2) - &(&m * &c));
        assert!(r.pow(2).unwrap().inf_norm() < 1e-12);
        let (rho, _) = select_rho(&r).unwrap();
        assert!((0.5..1.0).contains(&rho));
        assert!(scan_horizon(&r, rho).unwrap() <= 512);
    }

    #[test]
    fn unstable_matrix_has_no_rho() {
        assert!(matches!(select_rho(&scalar(1.1)), Err(Error::NotStable(_))));
    }
}
