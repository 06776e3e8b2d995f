/// Adam with L2 weight decay folded into the gradient (`g + wd·θ`).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once before updating the slots
    /// of one optimization step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates one parameter slot in place. Slots are identified by index and
    /// must keep their length across steps.
    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64], lr: f64, decay: bool) {
        assert!(self.step > 0, "begin_step before update");
        while self.first.len() <= slot {
            self.first.push(Vec::new());
            self.second.push(Vec::new());
        }
        if self.first[slot].is_empty() {
            self.first[slot] = vec![0.0; param.len()];
            self.second[slot] = vec![0.0; param.len()];
        }
        let m = &mut self.first[slot];
        let v = &mut self.second[slot];
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..param.len() {
            let mut g = grad[i];
            if decay {
                g += self.weight_decay * param[i];
            }
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two steps on f(w) = ½(w₀ − 3)² + 2 w₁, written out by hand.
    #[test]
    fn two_parameter_hand_computation() {
        let mut adam = Adam::new(0.0);
        let mut w = [1.0, -1.0];
        let lr = 0.1;

        // step 1: g = (−2, 2); m̂ = g, v̂ = g², update = lr·g/(|g| + ε)
        adam.begin_step();
        adam.update(0, &mut w, &[-2.0, 2.0], lr, true);
        let want0 = 1.0 + 0.1 * 2.0 / (2.0 + 1e-8);
        let want1 = -1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((w[0] - want0).abs() < 1e-15);
        assert!((w[1] - want1).abs() < 1e-15);

        // step 2: g = (w₀ − 3, 2)
        let g0 = w[0] - 3.0;
        adam.begin_step();
        adam.update(0, &mut w, &[g0, 2.0], lr, true);
        let m0 = 0.9 * 0.1 * -2.0 + 0.1 * g0;
        let v0 = 0.999 * 0.001 * 4.0 + 0.001 * g0 * g0;
        let m_hat = m0 / (1.0 - 0.81);
        let v_hat = v0 / (1.0 - 0.999f64.powi(2));
        let want = want0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((w[0] - want).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_only_moves_nonzero_params() {
        let mut adam = Adam::new(1e-5);
        let mut w = [0.5, 0.0, -0.25];
        adam.begin_step();
        adam.update(0, &mut w, &[0.0; 3], 1e-3, true);
        assert!(w[0] < 0.5 && w[0] > 0.5 - 1.01e-3);
        assert_eq!(w[1], 0.0);
        assert!(w[2] > -0.25);

        let mut p = [0.5];
        adam.update(1, &mut p, &[0.0], 1e-3, false);
        assert_eq!(p[0], 0.5);
    }
}
