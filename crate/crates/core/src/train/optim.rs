/// SGD with classic momentum: v <- m*v + g, p <- p - lr*v.
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    vel: Vec<f64>,
}

impl Sgd {
    pub fn new(dim: usize, lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, vel: vec![0.0; dim] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.vel.len());
        assert_eq!(grads.len(), self.vel.len());
        for i in 0..params.len() {
            self.vel[i] = self.momentum * self.vel[i] + grads[i];
            params[i] -= self.lr * self.vel[i];
        }
    }
}

/// One plain gradient step on a copy, used by inner loops that keep no state.
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    assert_eq!(params.len(), grads.len());
    for i in 0..params.len() {
        params[i] -= lr * grads[i];
    }
}
