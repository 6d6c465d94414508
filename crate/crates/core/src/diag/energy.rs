//! Discrete energy equality and inequality of the AC schemes.

use crate::scalar::Real;

/// Norms realizing the energy identity for one discretization (full order or
/// reduced).
pub trait EnergyNorms<T> {
    /// `||u||^2`
    fn velocity_norm2(&self, u: &[T]) -> T;
    /// `||p||^2`
    fn pressure_norm2(&self, p: &[T]) -> T;
    /// `||grad u||^2`
    fn gradient_norm2(&self, u: &[T]) -> T;
    /// `(f, u)`
    fn work(&self, u: &[T]) -> T;
    /// `||f||_{-1}^2` over the discrete velocity space.
    fn forcing_dual_norm2(&self) -> T;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyParams<T> {
    pub nu: T,
    pub eps: T,
    pub dt: T,
}

/// Terms of the per-step energy equality
/// `dK + |du|^2 + eps (dP + |dp|^2) + 2 dt nu |grad u|^2 = 2 dt (f, u)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyStep<T> {
    /// `||u^{n+1}||^2 - ||u^n||^2`
    pub velocity_change: T,
    /// `||u^{n+1} - u^n||^2`
    pub velocity_increment: T,
    /// `eps (||p^{n+1}||^2 - ||p^n||^2)`
    pub pressure_change: T,
    /// `eps ||p^{n+1} - p^n||^2`
    pub pressure_increment: T,
    /// `2 dt nu ||grad u^{n+1}||^2`
    pub dissipation: T,
    /// `2 dt (f, u^{n+1})`
    pub work: T,
}

impl<T: Real> EnergyStep<T> {
    /// Left side minus right side.
    pub fn defect(&self) -> T {
        self.velocity_change
            + self.velocity_increment
            + self.pressure_change
            + self.pressure_increment
            + self.dissipation
            - self.work
    }

    /// Sum of the magnitudes of all terms.
    pub fn scale(&self) -> T {
        self.velocity_change.abs()
            + self.velocity_increment.abs()
            + self.pressure_change.abs()
            + self.pressure_increment.abs()
            + self.dissipation.abs()
            + self.work.abs()
    }

    /// `|defect| / scale`, zero for an all-zero step.
    pub fn relative_residual(&self) -> T {
        let s = self.scale();
        if s == T::zero() {
            T::zero()
        } else {
            self.defect().abs() / s
        }
    }
}

fn diff<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn energy_step<T: Real>(
    norms: &impl EnergyNorms<T>,
    params: &EnergyParams<T>,
    before: (&[T], &[T]),
    after: (&[T], &[T]),
) -> EnergyStep<T> {
    let two_dt = params.dt + params.dt;
    let (u0, p0) = before;
    let (u1, p1) = after;
    EnergyStep {
        velocity_change: norms.velocity_norm2(u1) - norms.velocity_norm2(u0),
        velocity_increment: norms.velocity_norm2(&diff(u1, u0)),
        pressure_change: params.eps * (norms.pressure_norm2(p1) - norms.pressure_norm2(p0)),
        pressure_increment: params.eps * norms.pressure_norm2(&diff(p1, p0)),
        dissipation: two_dt * params.nu * norms.gradient_norm2(u1),
        work: two_dt * norms.work(u1),
    }
}

/// Energy accounting of a whole trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyBalance<T> {
    pub steps: Vec<EnergyStep<T>>,
    /// Per-step relative residual of the equality.
    pub residuals: Vec<T>,
    /// Slack `rhs - lhs` of the cumulative inequality after each step:
    /// `E^N + sum(|du|^2 + eps |dp|^2) + dt nu sum |grad u|^2
    ///   <= E^0 + (dt / nu) sum ||f||_{-1}^2`, with `E = ||u||^2 + eps ||p||^2`.
    pub inequality_slack: Vec<T>,
}

impl<T: Real> EnergyBalance<T> {
    pub fn max_residual(&self) -> T {
        self.residuals.iter().fold(T::zero(), |m, &r| m.max(r))
    }

    pub fn inequality_holds(&self) -> bool {
        self.inequality_slack.iter().all(|&s| s >= T::zero())
    }
}

/// Energy balance over consecutive `(u, p)` states.
pub fn energy_balance<T: Real>(
    norms: &impl EnergyNorms<T>,
    params: &EnergyParams<T>,
    states: &[(&[T], &[T])],
) -> EnergyBalance<T> {
    let energy = |(u, p): (&[T], &[T])| norms.velocity_norm2(u) + params.eps * norms.pressure_norm2(p);
    let dual = norms.forcing_dual_norm2();
    let mut steps = Vec::new();
    let mut slack = Vec::new();
    let (mut increments, mut dissipation, mut source) = (T::zero(), T::zero(), T::zero());
    let e0 = states.first().map(|&s| energy(s)).unwrap_or_else(T::zero);
    for w in states.windows(2) {
        let s = energy_step(norms, params, w[0], w[1]);
        increments += s.velocity_increment + s.pressure_increment;
        dissipation += params.dt * params.nu * norms.gradient_norm2(w[1].0);
        source += params.dt / params.nu * dual;
        let lhs = energy(w[1]) + increments + dissipation;
        // Relative floor keeps roundoff from flagging a tight inequality.
        let rhs = e0 + source;
        slack.push(rhs - lhs + T::lit(1e-12) * rhs.abs().max(lhs.abs()));
        steps.push(s);
    }
    EnergyBalance {
        residuals: steps.iter().map(|s| s.relative_residual()).collect(),
        steps,
        inequality_slack: slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Identity norms on plain coordinates with forcing vector `f`.
    struct Plain {
        f: Vec<f64>,
    }

    impl EnergyNorms<f64> for Plain {
        fn velocity_norm2(&self, u: &[f64]) -> f64 {
            u.iter().map(|v| v * v).sum()
        }
        fn pressure_norm2(&self, p: &[f64]) -> f64 {
            p.iter().map(|v| v * v).sum()
        }
        fn gradient_norm2(&self, u: &[f64]) -> f64 {
            u.iter().map(|v| v * v).sum()
        }
        fn work(&self, u: &[f64]) -> f64 {
            self.f.iter().zip(u).map(|(a, b)| a * b).sum()
        }
        fn forcing_dual_norm2(&self) -> f64 {
            self.f.iter().map(|v| v * v).sum()
        }
    }

    #[test]
    fn zero_trajectory_has_zero_residual() {
        let norms = Plain { f: vec![0.0; 2] };
        let params = EnergyParams {
            nu: 0.1,
            eps: 1e-3,
            dt: 0.01,
        };
        let z = [0.0, 0.0];
        let b = energy_balance(&norms, &params, &[(&z, &z), (&z, &z)]);
        assert_eq!(b.max_residual(), 0.0);
        assert!(b.inequality_holds());
    }

    #[test]
    fn scalar_scheme_satisfies_identity() {
        // u' = -nu u + f - (-p), eps p' + u = 0 with identity operators,
        // solved exactly per step.
        let (nu, eps, dt, f) = (0.3, 0.05, 0.1, 0.7);
        let norms = Plain { f: vec![f] };
        let params = EnergyParams { nu, eps, dt };
        let (mut u, mut p) = (0.2f64, -0.1f64);
        let mut states = vec![(vec![u], vec![p])];
        for _ in 0..20 {
            // (1/dt + nu) u1 - p1 = u/dt + f ; u1 + eps/dt p1 = eps/dt p
            let a = nalgebra::Matrix2::new(1.0 / dt + nu, -1.0, 1.0, eps / dt);
            let r = nalgebra::Vector2::new(u / dt + f, eps / dt * p);
            let x = a.lu().solve(&r).unwrap();
            u = x[0];
            p = x[1];
            states.push((vec![u], vec![p]));
        }
        let refs: Vec<(&[f64], &[f64])> = states.iter().map(|(u, p)| (u.as_slice(), p.as_slice())).collect();
        let b = energy_balance(&norms, &params, &refs);
        assert!(b.max_residual() < 1e-14);
        assert!(b.inequality_holds());

        let mut noisy = states.clone();
        noisy[5].0[0] += 1e-6;
        let refs: Vec<(&[f64], &[f64])> = noisy.iter().map(|(u, p)| (u.as_slice(), p.as_slice())).collect();
        assert!(energy_balance(&norms, &params, &refs).max_residual() > 1e-8);
    }
}
