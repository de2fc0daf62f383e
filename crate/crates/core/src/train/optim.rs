use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBeliefConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdaBeliefConfig {
    fn default() -> Self {
        AdaBeliefConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-16,
        }
    }
}

/// First moment and "belief" (variance of the gradient around it).
#[derive(Clone, Debug, PartialEq)]
pub struct AdaBeliefState {
    pub cfg: AdaBeliefConfig,
    pub m: Vec<f64>,
    pub s: Vec<f64>,
    pub t: u64,
}

impl AdaBeliefState {
    pub fn new(n: usize, cfg: AdaBeliefConfig) -> Self {
        AdaBeliefState {
            cfg,
            m: vec![0.0; n],
            s: vec![0.0; n],
            t: 0,
        }
    }
}

pub fn adabelief_step(params: &mut [f64], grads: &[f64], state: &mut AdaBeliefState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let AdaBeliefConfig { beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = beta1 * state.m[i] + (1.0 - beta1) * g;
        let s = beta2 * state.s[i] + (1.0 - beta2) * (g - m) * (g - m) + eps;
        state.m[i] = m;
        state.s[i] = s;
        let m_hat = m / bc1;
        let s_hat = s / bc2;
        params[i] -= lr * m_hat / (s_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_against_the_gradient_sign() {
        let mut p = vec![0.0, 0.0, 0.0];
        let g = [3.0, -0.02, 500.0];
        let mut st = AdaBeliefState::new(3, AdaBeliefConfig::default());
        adabelief_step(&mut p, &g, &mut st, 0.01);
        for (x, g) in p.iter().zip(g) {
            assert!((x + 0.01 / 0.9 * g.signum()).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdaBeliefState::new(2, AdaBeliefConfig::default());
        st.m = vec![0.5, 0.5];
        st.t = 3;
        adabelief_step(&mut p, &[0.0, 0.0], &mut st, 0.1);
        assert_eq!(st.m, vec![0.45, 0.45]);
        let mut q = vec![1.0, -2.0];
        let mut fresh = AdaBeliefState::new(2, AdaBeliefConfig::default());
        adabelief_step(&mut q, &[0.0, 0.0], &mut fresh, 0.1);
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut x = vec![1.0];
        let mut st = AdaBeliefState::new(1, AdaBeliefConfig::default());
        for _ in 0..200 {
            let g = [x[0]];
            adabelief_step(&mut x, &g, &mut st, 0.1);
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }
}
