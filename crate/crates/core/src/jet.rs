//! Truncated Taylor series in one variable and their transport by the
//! flow of the elliptic problem.

use crate::dynamics::{perturbation_kinematics, ModelParams, State4};
use crate::error::{Error, Result};
use crate::integrator::OdeSystem;

/// Polynomial `c_0 + c_1 s + … + c_d s^d`; every operation truncates at the
/// smaller degree of its operands.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorJet {
    c: Vec<f64>,
}

impl TaylorJet {
    pub fn new(c: Vec<f64>) -> Self {
        assert!(!c.is_empty(), "a jet has at least a constant term");
        TaylorJet { c }
    }

    pub fn constant(v: f64, degree: usize) -> Self {
        let mut c = vec![0.0; degree + 1];
        c[0] = v;
        TaylorJet { c }
    }

    /// The jet of `v + s`.
    pub fn variable(v: f64, degree: usize) -> Self {
        let mut c = vec![0.0; degree + 1];
        c[0] = v;
        if degree > 0 {
            c[1] = 1.0;
        }
        TaylorJet { c }
    }

    pub fn degree(&self) -> usize {
        self.c.len() - 1
    }

    pub fn coef(&self, k: usize) -> f64 {
        self.c.get(k).copied().unwrap_or(0.0)
    }

    pub fn coefs(&self) -> &[f64] {
        &self.c
    }

    pub fn truncate(&self, degree: usize) -> TaylorJet {
        TaylorJet::new(self.c[..=degree.min(self.degree())].to_vec())
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, v| acc * s + v)
    }

    fn zip(&self, o: &TaylorJet, f: impl Fn(f64, f64) -> f64) -> TaylorJet {
        TaylorJet::new(self.c.iter().zip(&o.c).map(|(a, b)| f(*a, *b)).collect())
    }

    pub fn add(&self, o: &TaylorJet) -> TaylorJet {
        self.zip(o, |a, b| a + b)
    }

    pub fn sub(&self, o: &TaylorJet) -> TaylorJet {
        self.zip(o, |a, b| a - b)
    }

    pub fn scale(&self, f: f64) -> TaylorJet {
        TaylorJet::new(self.c.iter().map(|v| v * f).collect())
    }

    pub fn add_const(&self, v: f64) -> TaylorJet {
        let mut out = self.clone();
        out.c[0] += v;
        out
    }

    pub fn mul(&self, o: &TaylorJet) -> TaylorJet {
        let d = self.degree().min(o.degree());
        let c = (0..=d)
            .map(|k| (0..=k).map(|j| self.c[j] * o.c[k - j]).sum())
            .collect();
        TaylorJet::new(c)
    }

    pub fn div(&self, o: &TaylorJet) -> Result<TaylorJet> {
        let b0 = o.c[0];
        if b0 == 0.0 {
            return Err(Error::JetDomain { op: "division", c0: b0 });
        }
        let d = self.degree().min(o.degree());
        let mut q = Vec::with_capacity(d + 1);
        for k in 0..=d {
            let acc: f64 = (0..k).map(|j| q[j] * o.c[k - j]).sum();
            q.push((self.c[k] - acc) / b0);
        }
        Ok(TaylorJet::new(q))
    }

    /// `self^alpha`. Non-integer powers need a positive constant term;
    /// integer powers go through repeated products.
    pub fn powf(&self, alpha: f64) -> Result<TaylorJet> {
        let a0 = self.c[0];
        let d = self.degree();
        if alpha.fract() == 0.0 && alpha.abs() <= 64.0 {
            let mut out = TaylorJet::constant(1.0, d);
            for _ in 0..alpha.abs() as usize {
                out = out.mul(self);
            }
            return if alpha < 0.0 {
                TaylorJet::constant(1.0, d).div(&out)
            } else {
                Ok(out)
            };
        }
        if !(a0 > 0.0) {
            return Err(Error::JetDomain { op: "power", c0: a0 });
        }
        // p' a = alpha a' p, matched order by order
        let mut p = Vec::with_capacity(d + 1);
        p.push(a0.powf(alpha));
        for k in 1..=d {
            let acc: f64 = (1..=k)
                .map(|j| (alpha * j as f64 - (k - j) as f64) * self.c[j] * p[k - j])
                .sum();
            p.push(acc / (k as f64 * a0));
        }
        Ok(TaylorJet::new(p))
    }
}

/// State-valued jet: `Σ c_k s^k` with `c_k ∈ R⁴`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateJet {
    pub coefs: Vec<State4>,
}

impl StateJet {
    pub fn new(coefs: Vec<State4>) -> Self {
        assert!(!coefs.is_empty(), "a jet has at least a constant term");
        StateJet { coefs }
    }

    pub fn degree(&self) -> usize {
        self.coefs.len() - 1
    }

    pub fn component(&self, i: usize) -> TaylorJet {
        TaylorJet::new(self.coefs.iter().map(|c| c[i]).collect())
    }

    pub fn from_components(c: &[TaylorJet; 4]) -> Self {
        let d = c.iter().map(TaylorJet::degree).min().expect("four components");
        StateJet::new(
            (0..=d)
                .map(|k| State4::new(c[0].coef(k), c[1].coef(k), c[2].coef(k), c[3].coef(k)))
                .collect(),
        )
    }

    pub fn eval(&self, s: f64) -> State4 {
        self.coefs.iter().rev().fold(State4::zeros(), |acc, v| acc * s + v)
    }

    fn flat(&self) -> Vec<f64> {
        self.coefs.iter().flat_map(|c| c.iter().copied()).collect()
    }

    fn from_flat(y: &[f64]) -> Self {
        StateJet::new(y.chunks(4).map(State4::from_column_slice).collect())
    }
}

/// Field of the elliptic problem evaluated in jet arithmetic.
pub fn jet_field(x: &StateJet, t: f64, params: &ModelParams) -> Result<StateJet> {
    let k = perturbation_kinematics(t, params)?;
    let mu = params.mu;
    let rho = k.rho();
    let c0 = x.coefs[0];
    let r2 = (c0[0] - (1.0 - mu) * rho).hypot(c0[1]);
    let r1 = (c0[0] + mu * rho).hypot(c0[1]);
    if mu != 0.0 && !(r2 >= params.singularity_floor) {
        return Err(Error::Singularity {
            body: "m2",
            distance: r2,
            floor: params.singularity_floor,
        });
    }
    if !(r1 >= params.singularity_floor) {
        return Err(Error::Singularity {
            body: "m1",
            distance: r1,
            floor: params.singularity_floor,
        });
    }
    let [qx, qy, px, py] = [0, 1, 2, 3].map(|i| x.component(i));
    let dx1 = qx.add_const(mu * rho);
    let dx2 = qx.add_const(-(1.0 - mu) * rho);
    let y2 = qy.mul(&qy);
    let c1 = dx1.mul(&dx1).add(&y2).powf(-1.5)?.scale(1.0 - mu);
    let c2 = if mu == 0.0 {
        TaylorJet::constant(0.0, x.degree())
    } else {
        dx2.mul(&dx2).add(&y2).powf(-1.5)?.scale(mu)
    };
    let n = k.n;
    let f = [
        px.add(&qy.scale(n)),
        py.sub(&qx.scale(n)),
        py.scale(n).sub(&c1.mul(&dx1)).sub(&c2.mul(&dx2)),
        px.scale(-n).sub(&c1.mul(&qy)).sub(&c2.mul(&qy)),
    ];
    Ok(StateJet::from_components(&f))
}

struct JetSystem<'a> {
    params: &'a ModelParams,
    degree: usize,
}

impl OdeSystem for JetSystem<'_> {
    fn dim(&self) -> usize {
        4 * (self.degree + 1)
    }

    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let f = jet_field(&StateJet::from_flat(y), t, self.params)?;
        dy.copy_from_slice(&f.flat());
        Ok(())
    }
}

/// Transports a state jet through one stroboscopic period.
pub fn jet_transport(jet0: &StateJet, params: &ModelParams) -> Result<StateJet> {
    let t0 = params.section_time();
    let sys = JetSystem {
        params,
        degree: jet0.degree(),
    };
    let out = params.integrator().integrate(&sys, t0, &jet0.flat(), t0 + params.period())?;
    Ok(StateJet::from_flat(&out.y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &TaylorJet, b: &[f64], tol: f64) {
        for (k, v) in b.iter().enumerate() {
            assert!((a.coef(k) - v).abs() <= tol, "coef {k}: {} vs {v}", a.coef(k));
        }
    }

    #[test]
    fn geometric_series() {
        let s = TaylorJet::variable(0.0, 4);
        let q = s.div(&TaylorJet::constant(1.0, 4).sub(&s)).unwrap();
        close(&q, &[0.0, 1.0, 1.0, 1.0, 1.0], 1e-15);
    }

    #[test]
    fn square_root_binomial() {
        let r = TaylorJet::variable(1.0, 2).powf(0.5).unwrap();
        close(&r, &[1.0, 0.5, -0.125], 1e-15);
    }

    #[test]
    fn integer_powers_allow_zero_constant() {
        let s = TaylorJet::variable(0.0, 3);
        close(&s.powf(2.0).unwrap(), &[0.0, 0.0, 1.0, 0.0], 0.0);
        assert!(s.powf(-1.0).is_err());
        assert!(s.powf(0.5).is_err());
    }

    #[test]
    fn negative_power_matches_division() {
        let a = TaylorJet::new(vec![2.0, -0.3, 0.7, 0.1]);
        let p = a.powf(-1.5).unwrap();
        let q = TaylorJet::constant(1.0, 3).div(&a.powf(1.5).unwrap()).unwrap();
        close(&p, q.coefs(), 1e-14);
    }

    #[test]
    fn constant_jet_stays_constant_under_the_flow() {
        let params = ModelParams::jupiter_europa(0.0094);
        let x = State4::new(1.03, 0.0, 0.0, 1.05);
        let jet = StateJet::new(vec![x, State4::zeros(), State4::zeros()]);
        let out = jet_transport(&jet, &params).unwrap();
        let (f, _) = crate::dynamics::stroboscopic_map(&x, &params, false).unwrap();
        assert!((out.coefs[0] - f).norm() < 1e-10);
        assert_eq!(out.coefs[1], State4::zeros());
        assert_eq!(out.coefs[2], State4::zeros());
    }
}
