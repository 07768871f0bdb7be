//! Orthant-wise limited-memory quasi-Newton minimization of
//! `f(θ) + λ1‖θ‖₁` for smooth `f`.
//!
//! With `λ1 = 0` the orthant machinery is switched off and the iteration is
//! plain L-BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use crate::objective::dot;

#[derive(Copy, Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OwlqnConfig {
    /// Number of `(s, y)` pairs kept.
    pub memory: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// Step shrink factor per backtracking step.
    pub backtrack: f64,
    pub max_line_search: usize,
    /// Pairs with `sᵀy` at or below this are discarded.
    pub curvature_eps: f64,
}

impl Default for OwlqnConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            armijo: 1e-4,
            backtrack: 0.5,
            max_line_search: 30,
            curvature_eps: 1e-12,
        }
    }
}

/// Subgradient of `f + λ1‖·‖₁` with minimum norm, coordinate by coordinate.
pub fn pseudo_gradient(theta: &[f64], grad: &[f64], l1: f64) -> Vec<f64> {
    assert_eq!(theta.len(), grad.len());
    if l1 == 0.0 {
        return grad.to_vec();
    }
    theta
        .iter()
        .zip(grad)
        .map(|(&t, &g)| {
            if t > 0.0 {
                g + l1
            } else if t < 0.0 {
                g - l1
            } else if g + l1 < 0.0 {
                g + l1
            } else if g - l1 > 0.0 {
                g - l1
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum StepStatus {
    /// A step passed the line search.
    Accepted,
    /// The pseudo-gradient (or the aligned direction) vanished; nothing to do.
    Stationary,
    /// The line search ran out of steps; `θ` is returned unchanged.
    Stalled,
}

#[derive(Clone, Debug)]
pub struct Step {
    pub theta: Vec<f64>,
    pub status: StepStatus,
    /// `f + λ1‖·‖₁` at the returned point.
    pub value: f64,
    /// Orthant chosen for the step (`−1`, `0`, `+1` per coordinate).
    pub orthant: Vec<f64>,
}

/// Optimizer state: curvature memory and the previous iterate.
#[derive(Clone, Debug)]
pub struct Owlqn {
    cfg: OwlqnConfig,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
    last: Option<(Vec<f64>, Vec<f64>)>,
    iterations: usize,
}

impl Owlqn {
    pub fn new(cfg: OwlqnConfig) -> Self {
        Self {
            cfg,
            s: VecDeque::new(),
            y: VecDeque::new(),
            rho: VecDeque::new(),
            last: None,
            iterations: 0,
        }
    }

    pub fn config(&self) -> &OwlqnConfig {
        &self.cfg
    }

    pub fn memory_len(&self) -> usize {
        self.s.len()
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Forgets all curvature pairs and the previous iterate.
    pub fn reset(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
        self.last = None;
    }

    /// Appends `extra` coordinates; stored pairs get zeros there.
    ///
    /// The pending iterate is padded lazily on the next call to [`Owlqn::iterate`],
    /// with the new coordinates contributing nothing to the next pair.
    pub fn grow(&mut self, extra: usize) {
        for v in self.s.iter_mut().chain(self.y.iter_mut()) {
            v.resize(v.len() + extra, 0.0);
        }
    }

    /// Records a curvature pair unless it fails the curvature guard.
    pub fn push_pair(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy <= self.cfg.curvature_eps || !sy.is_finite() {
            return false;
        }
        if self.s.len() == self.cfg.memory {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.s.push_back(s);
        self.y.push_back(y);
        self.rho.push_back(1.0 / sy);
        true
    }

    /// Two-loop recursion: the inverse-Hessian approximation applied to `v`.
    fn apply_inverse_hessian(&self, v: &[f64]) -> Vec<f64> {
        let mut q = v.to_vec();
        let k = self.s.len();
        if k == 0 {
            return q;
        }
        let mut alpha = vec![0.0; k];
        for i in (0..k).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            for (qj, yj) in q.iter_mut().zip(&self.y[i]) {
                *qj -= alpha[i] * yj;
            }
        }
        let gamma = dot(&self.s[k - 1], &self.y[k - 1]) / dot(&self.y[k - 1], &self.y[k - 1]);
        for qj in q.iter_mut() {
            *qj *= gamma;
        }
        for i in 0..k {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            for (qj, sj) in q.iter_mut().zip(&self.s[i]) {
                *qj += (alpha[i] - beta) * sj;
            }
        }
        q
    }

    /// Quasi-Newton direction for `pgrad`, with every coordinate whose sign
    /// disagrees with `−pgrad` zeroed.
    pub fn search_direction(&self, pgrad: &[f64]) -> Vec<f64> {
        let mut d = self.unaligned_direction(pgrad);
        for (dk, pk) in d.iter_mut().zip(pgrad) {
            if *dk * *pk >= 0.0 {
                *dk = 0.0;
            }
        }
        d
    }

    fn unaligned_direction(&self, pgrad: &[f64]) -> Vec<f64> {
        self.apply_inverse_hessian(pgrad)
            .into_iter()
            .map(|v| -v)
            .collect()
    }

    /// One pseudo-gradient → direction → orthant line search cycle.
    ///
    /// `smooth_grad` must be the gradient of `eval` at `theta`; `eval` returns
    /// the smooth part only. The pair `(θ − θ_prev, g − g_prev)` from the
    /// previous call enters the memory first.
    pub fn iterate(
        &mut self,
        theta: &[f64],
        smooth_grad: &[f64],
        mut eval: impl FnMut(&[f64]) -> f64,
        l1: f64,
    ) -> Step {
        assert_eq!(theta.len(), smooth_grad.len());
        self.iterations += 1;
        if let Some((mut last_theta, mut last_grad)) = self.last.take() {
            // Coordinates added since the last call contribute zero to the pair.
            let old = last_theta.len();
            last_theta.extend_from_slice(&theta[old..]);
            last_grad.extend_from_slice(&smooth_grad[old..]);
            let s: Vec<f64> = theta.iter().zip(&last_theta).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = smooth_grad.iter().zip(&last_grad).map(|(a, b)| a - b).collect();
            self.push_pair(s, y);
        }
        self.last = Some((theta.to_vec(), smooth_grad.to_vec()));

        let pgrad = pseudo_gradient(theta, smooth_grad, l1);
        let l1_norm = |t: &[f64]| t.iter().map(|v| v.abs()).sum::<f64>();
        let f0 = eval(theta) + l1 * l1_norm(theta);
        let orthant: Vec<f64> = theta
            .iter()
            .zip(&pgrad)
            .map(|(&t, &p)| if t != 0.0 { t.signum() } else if p != 0.0 { -p.signum() } else { 0.0 })
            .collect();
        let unchanged = |status| Step {
            theta: theta.to_vec(),
            status,
            value: f0,
            orthant: orthant.clone(),
        };

        if pgrad.iter().all(|p| *p == 0.0) {
            return unchanged(StepStatus::Stationary);
        }
        let d = if l1 > 0.0 {
            self.search_direction(&pgrad)
        } else {
            self.unaligned_direction(&pgrad)
        };
        if d.iter().all(|v| *v == 0.0) {
            return unchanged(StepStatus::Stationary);
        }

        let mut alpha = if self.s.is_empty() {
            1.0 / dot(&pgrad, &pgrad).sqrt()
        } else {
            1.0
        };
        for _ in 0..self.cfg.max_line_search {
            let candidate = orthant_project(theta, &d, alpha, &orthant, l1 > 0.0);
            let value = eval(&candidate) + l1 * l1_norm(&candidate);
            let decrease: f64 = pgrad
                .iter()
                .zip(candidate.iter().zip(theta))
                .map(|(p, (c, t))| p * (c - t))
                .sum();
            if value.is_finite() && value < f0 && value <= f0 + self.cfg.armijo * decrease {
                return Step {
                    theta: candidate,
                    status: StepStatus::Accepted,
                    value,
                    orthant,
                };
            }
            alpha *= self.cfg.backtrack;
        }
        unchanged(StepStatus::Stalled)
    }

    /// Runs [`Owlqn::iterate`] on a fixed objective until the pseudo-gradient's
    /// max-norm drops below `tol`, the iteration stalls, or `max_iter` is hit.
    pub fn minimize(
        &mut self,
        theta0: Vec<f64>,
        mut f_and_grad: impl FnMut(&[f64]) -> (f64, Vec<f64>),
        l1: f64,
        max_iter: usize,
        tol: f64,
    ) -> Minimum {
        let mut theta = theta0;
        let mut trajectory = vec![theta.clone()];
        for iter in 0..max_iter {
            let (_, grad) = f_and_grad(&theta);
            let pg = pseudo_gradient(&theta, &grad, l1);
            if pg.iter().all(|p| p.abs() < tol) {
                return Minimum {
                    theta,
                    iterations: iter,
                    converged: true,
                    trajectory,
                };
            }
            let step = self.iterate(&theta, &grad, |t| f_and_grad(t).0, l1);
            match step.status {
                StepStatus::Accepted => {
                    theta = step.theta;
                    trajectory.push(theta.clone());
                }
                StepStatus::Stationary | StepStatus::Stalled => {
                    return Minimum {
                        theta,
                        iterations: iter + 1,
                        converged: step.status == StepStatus::Stationary,
                        trajectory,
                    }
                }
            }
        }
        Minimum {
            theta,
            iterations: max_iter,
            converged: false,
            trajectory,
        }
    }
}

/// Result of [`Owlqn::minimize`].
#[derive(Clone, Debug)]
pub struct Minimum {
    pub theta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Every accepted iterate, starting with the initial point.
    pub trajectory: Vec<Vec<f64>>,
}

/// `θ + α d`, with coordinates that leave their orthant set to exactly zero.
pub fn orthant_project(theta: &[f64], d: &[f64], alpha: f64, orthant: &[f64], constrain: bool) -> Vec<f64> {
    theta
        .iter()
        .zip(d)
        .zip(orthant)
        .map(|((&t, &dk), &xi)| {
            let v = t + alpha * dk;
            if constrain && (v == 0.0 || v.signum() != xi) {
                0.0
            } else {
                v
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn soft_threshold(a: f64, l1: f64) -> f64 {
        a.signum() * (a.abs() - l1).max(0.0)
    }

    /// `Σ c_k (θ_k − a_k)² / 2`.
    fn separable(c: Vec<f64>, a: Vec<f64>) -> impl FnMut(&[f64]) -> (f64, Vec<f64>) {
        move |t: &[f64]| {
            let f = t
                .iter()
                .zip(&a)
                .zip(&c)
                .map(|((t, a), c)| c * (t - a).powi(2) / 2.0)
                .sum();
            let g = t.iter().zip(&a).zip(&c).map(|((t, a), c)| c * (t - a)).collect();
            (f, g)
        }
    }

    #[test]
    fn pseudo_gradient_cases() {
        assert_eq!(pseudo_gradient(&[0.0, 1.0], &[0.3, -0.2], 0.0), vec![0.3, -0.2]);
        assert_eq!(pseudo_gradient(&[0.0], &[0.5], 2.0), vec![0.0]);
        assert_eq!(pseudo_gradient(&[1.0], &[-3.0], 2.0), vec![-1.0]);
        assert_eq!(pseudo_gradient(&[-1.0], &[-3.0], 2.0), vec![-5.0]);
        assert_eq!(pseudo_gradient(&[0.0], &[-3.0], 2.0), vec![-1.0]);
        assert_eq!(pseudo_gradient(&[0.0], &[3.0], 2.0), vec![1.0]);
    }

    #[test]
    fn empty_memory_is_steepest_descent() {
        let opt = Owlqn::new(OwlqnConfig::default());
        assert_eq!(opt.search_direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn conjugate_pairs_recover_inverse_hessian() {
        // f = θᵀ diag(2, 8) θ / 2; steps along the axes are conjugate.
        let mut opt = Owlqn::new(OwlqnConfig::default());
        assert!(opt.push_pair(vec![1.0, 0.0], vec![2.0, 0.0]));
        assert!(opt.push_pair(vec![0.0, 1.0], vec![0.0, 8.0]));
        let g = [3.0, -4.0];
        let d = opt.search_direction(&g);
        assert_abs_diff_eq!(d[0], -1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d[1], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn curvature_guard_rejects_bad_pairs() {
        let mut opt = Owlqn::new(OwlqnConfig::default());
        assert!(!opt.push_pair(vec![1.0, 0.0], vec![-1.0, 0.0]));
        assert!(!opt.push_pair(vec![0.0, 0.0], vec![1.0, 0.0]));
        assert_eq!(opt.memory_len(), 0);
        for i in 0..15 {
            opt.push_pair(vec![1.0 + i as f64, 0.0], vec![1.0, 0.0]);
        }
        assert_eq!(opt.memory_len(), 10);
    }

    #[test]
    fn soft_threshold_one_dimension() {
        for (a, want) in [(3.0, 2.0), (0.5, 0.0), (-4.0, -3.0)] {
            let mut opt = Owlqn::new(OwlqnConfig::default());
            let min = opt.minimize(vec![0.0], separable(vec![1.0], vec![a]), 1.0, 100, 1e-10);
            assert_abs_diff_eq!(min.theta[0], want, epsilon = 1e-8);
            assert!(min.converged);
        }
    }

    #[test]
    fn stays_at_zero_under_strong_l1() {
        let a = vec![0.4, -0.9, 0.2];
        let mut opt = Owlqn::new(OwlqnConfig::default());
        let min = opt.minimize(vec![0.0; 3], separable(vec![1.0; 3], a), 1.0, 50, 1e-12);
        assert_eq!(min.theta, vec![0.0; 3]);
        assert_eq!(min.trajectory.len(), 1);
    }

    #[test]
    fn plain_quadratic_without_l1() {
        // ½θᵀdiag(1,4)θ − (1,1)ᵀθ = Σ c_k (θ_k − 1/c_k)²/2 + const.
        let mut opt = Owlqn::new(OwlqnConfig::default());
        let min = opt.minimize(
            vec![0.0, 0.0],
            separable(vec![1.0, 4.0], vec![1.0, 0.25]),
            0.0,
            25,
            1e-9,
        );
        assert!(min.iterations <= 25);
        assert_abs_diff_eq!(min.theta[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(min.theta[1], 0.25, epsilon = 1e-6);
    }

    #[test]
    fn separable_l1_matches_soft_threshold() {
        let n = 20;
        let c: Vec<f64> = (0..n).map(|k| 0.5 + 0.25 * k as f64).collect();
        let a: Vec<f64> = (0..n).map(|k| ((k as f64) * 1.7).sin() * 3.0).collect();
        let l1 = 0.8;
        let mut opt = Owlqn::new(OwlqnConfig::default());
        let min = opt.minimize(vec![0.0; n], separable(c.clone(), a.clone()), l1, 200, 1e-10);
        for k in 0..n {
            let want = soft_threshold(a[k], l1 / c[k]);
            assert_abs_diff_eq!(min.theta[k], want, epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_pseudo_gradient_leaves_theta() {
        let mut opt = Owlqn::new(OwlqnConfig::default());
        let step = opt.iterate(&[0.0, 0.0], &[0.5, -0.5], |_| 0.0, 1.0);
        assert_eq!(step.status, StepStatus::Stationary);
        assert_eq!(step.theta, vec![0.0, 0.0]);
    }

    #[test]
    fn grow_pads_memory() {
        let mut opt = Owlqn::new(OwlqnConfig::default());
        let mut f = separable(vec![1.0, 2.0], vec![1.0, 1.0]);
        let mut theta = vec![0.0, 0.0];
        for _ in 0..3 {
            let (_, g) = f(&theta);
            theta = opt.iterate(&theta, &g, |t| f(t).0, 0.1).theta;
        }
        opt.grow(1);
        theta.push(0.0);
        let mut f3 = separable(vec![1.0, 2.0, 3.0], vec![1.0, 1.0, 1.0]);
        let (_, g) = f3(&theta);
        let step = opt.iterate(&theta, &g, |t| f3(t).0, 0.1);
        assert_eq!(step.theta.len(), 3);
        assert!(opt.s.iter().all(|v| v.len() == 3));
    }

    proptest! {
        #[test]
        fn direction_is_aligned(
            pairs in proptest::collection::vec((proptest::collection::vec(-3.0f64..3.0, 4), proptest::collection::vec(-3.0f64..3.0, 4)), 0..5),
            pg in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let mut opt = Owlqn::new(OwlqnConfig::default());
            for (s, y) in pairs {
                opt.push_pair(s, y);
            }
            let d = opt.search_direction(&pg);
            for (dk, pk) in d.iter().zip(&pg) {
                prop_assert!(dk * pk <= 0.0);
            }
        }

        #[test]
        fn accepted_steps_stay_in_orthant_and_decrease(
            a in proptest::collection::vec(-4.0f64..4.0, 6),
            c in proptest::collection::vec(0.2f64..5.0, 6),
            start in proptest::collection::vec(-2.0f64..2.0, 6),
            l1 in 0.01f64..2.0,
        ) {
            let mut f = separable(c, a);
            let mut opt = Owlqn::new(OwlqnConfig::default());
            let mut theta = start;
            for _ in 0..30 {
                let (fv, g) = f(&theta);
                let before = fv + l1 * theta.iter().map(|v| v.abs()).sum::<f64>();
                let step = opt.iterate(&theta, &g, |t| f(t).0, l1);
                if step.status != StepStatus::Accepted {
                    break;
                }
                for (t, xi) in step.theta.iter().zip(&step.orthant) {
                    prop_assert!(t * xi >= 0.0);
                    if *t == 0.0 {
                        prop_assert!(t.to_bits() == 0);
                    }
                }
                prop_assert!(step.value < before);
                theta = step.theta;
            }
        }
    }
}
