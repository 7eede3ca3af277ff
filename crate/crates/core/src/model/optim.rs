use crate::error::{CekdError, Result};
use crate::model::net::{NetConfig, Params};

/// Per-parameter momentum buffers for SGD with classic (heavy-ball) momentum.
#[derive(Debug, Clone)]
pub struct OptState {
    pub velocity: Params,
    pub step: u64,
}

impl OptState {
    pub fn new(config: &NetConfig) -> OptState {
        OptState {
            velocity: Params::zeros_like(config),
            step: 0,
        }
    }
}

/// `v <- momentum * v + g; theta <- theta - lr * v`
pub fn sgd_step(
    params: &mut Params,
    grads: &Params,
    opt: &mut OptState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(CekdError::invalid(format!("lr must be positive, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(CekdError::invalid(format!(
            "momentum must be in [0,1), got {momentum}"
        )));
    }
    for (v, g) in opt
        .velocity
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
    {
        for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = momentum * *vi + gi;
        }
    }
    for (p, v) in params.tensors_mut().into_iter().zip(opt.velocity.tensors()) {
        for (pi, vi) in p.data_mut().iter_mut().zip(v.data()) {
            *pi -= lr * vi;
        }
    }
    opt.step += 1;
    Ok(())
}

/// Step decay: `base_lr * factor^floor(epoch / decay_every)`.
pub fn lr_schedule(epoch: u64, base_lr: f64, decay_every: u64, factor: f64) -> f64 {
    base_lr * factor.powi((epoch / decay_every.max(1)) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetConfig {
        NetConfig {
            input_channels: 1,
            input_hw: 4,
            conv_channels: vec![2],
            pool_after: vec![true],
            num_classes: 2,
        }
    }

    #[test]
    fn momentum_zero_is_plain_sgd() {
        let cfg = tiny_config();
        let mut params = Params::zeros_like(&cfg);
        let mut grads = Params::zeros_like(&cfg);
        grads.fc_bias.data_mut()[0] = 2.0;
        let mut opt = OptState::new(&cfg);
        sgd_step(&mut params, &grads, &mut opt, 0.1, 0.0).unwrap();
        assert!((params.fc_bias.data()[0] - (-0.2)).abs() < 1e-15);
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let cfg = tiny_config();
        let mut params = Params::zeros_like(&cfg);
        params.fc_bias.data_mut()[1] = 3.0;
        let before = params.clone();
        let grads = Params::zeros_like(&cfg);
        let mut opt = OptState::new(&cfg);
        sgd_step(&mut params, &grads, &mut opt, 0.1, 0.9).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn two_steps_constant_gradient_unrolls() {
        // v1 = g, v2 = 0.9 g + g = 1.9 g, total update = lr * g * 2.9
        let cfg = tiny_config();
        let mut params = Params::zeros_like(&cfg);
        let mut grads = Params::zeros_like(&cfg);
        grads.fc_bias.data_mut()[0] = 1.0;
        let mut opt = OptState::new(&cfg);
        sgd_step(&mut params, &grads, &mut opt, 0.1, 0.9).unwrap();
        sgd_step(&mut params, &grads, &mut opt, 0.1, 0.9).unwrap();
        let expect = -0.1 * (1.0 + 1.9);
        assert!((params.fc_bias.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn schedule_matches_floor_arithmetic() {
        assert_eq!(lr_schedule(0, 0.5, 80, 0.1), 0.5);
        assert!((lr_schedule(80, 0.5, 80, 0.1) - 0.05).abs() < 1e-15);
        assert!((lr_schedule(165, 0.5, 80, 0.1) - 0.005).abs() < 1e-15);
    }
}
