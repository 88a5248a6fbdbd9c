/// AdaGrad with a per-parameter squared-gradient accumulator.
#[derive(Debug, Clone)]
pub struct Adagrad {
    pub learning_rate: f64,
    pub eps: f64,
    accum: Vec<f64>,
}

impl Adagrad {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self { learning_rate, eps: 1e-10, accum: vec![0.0; num_params] }
    }

    /// Applies one update to `params[offset..offset + grads.len()]`, which lets
    /// several parameter blocks share one optimizer.
    pub fn step_block(&mut self, offset: usize, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        let acc = &mut self.accum[offset..offset + grads.len()];
        for ((p, &g), a) in params.iter_mut().zip(grads).zip(acc) {
            if g == 0.0 {
                continue;
            }
            *a += g * g;
            *p -= self.learning_rate * g / (a.sqrt() + self.eps);
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step_block(0, params, grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut opt = Adagrad::new(2, 0.1);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[4.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-10);
        assert!((p[1] + 0.9).abs() < 1e-9);
        // accumulated: second identical step is scaled by 1/sqrt(2)
        opt.step(&mut p, &[4.0, -0.5]);
        assert!((p[0] - (0.9 - 0.1 / 2f64.sqrt())).abs() < 1e-10);
    }
}
