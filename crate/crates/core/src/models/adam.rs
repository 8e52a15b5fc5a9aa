use super::tensor::Tensor;
use super::TrainConfig;

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(Tensor::zeros_like).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, config: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= lr * mhat / (vhat.sqrt() + config.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::filled(1, 1, v)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(0.7);
        let g = scalar(0.0);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &TrainConfig::default());
        assert_eq!(p.data[0], 0.7);
        assert_eq!(state.m[0].data[0], 0.0);
        assert_eq!(state.v[0].data[0], 0.0);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = scalar(0.7);
        let g = scalar(3.0);
        let mut state = AdamState::new([&p]);
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        adam_step(&mut [&mut p], &[&g], &mut state, &cfg);
        assert_eq!(p.data[0], 0.7);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig { learning_rate: 0.01, ..Default::default() };
        let mut p = scalar(1.0);
        let g = scalar(1.0);
        let mut state = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &cfg);
        let expected = 1.0 - cfg.learning_rate / (1.0 + cfg.eps);
        assert!((p.data[0] - expected).abs() < 1e-9);
        assert!((p.data[0] - (1.0 - 0.01)).abs() < 1e-9);
    }
}
