use super::network::{GradientSet, Network};
use crate::error::{Error, Result};

/// SGD with heavy-ball momentum: `v = momentum * v + g`, `w -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Option<GradientSet>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "need lr > 0 and 0 <= momentum < 1, got lr={lr}, momentum={momentum}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: None,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, net: &mut Network, grads: &GradientSet) {
        if self.momentum == 0.0 {
            apply(net, grads, self.lr);
            return;
        }
        let v = self
            .velocity
            .get_or_insert_with(|| GradientSet::zeros_like(net));
        v.scale(self.momentum);
        v.add_scaled(grads, 1.0);
        apply(net, v, self.lr);
    }
}

fn apply(net: &mut Network, update: &GradientSet, lr: f64) {
    for (p, g) in net.params_mut().into_iter().zip(update.iter()) {
        for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
            *w -= lr * d;
        }
    }
}

/// One plain SGD step (no momentum state).
pub fn sgd_step(net: &mut Network, grads: &GradientSet, lr: f64) -> Result<()> {
    Sgd::new(lr, 0.0)?.step(net, grads);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Network {
        Network::builder(&[3], 5).dense(2).unwrap().build().unwrap()
    }

    fn constant_grad(net: &Network, v: f64) -> GradientSet {
        let mut g = GradientSet::zeros_like(net);
        for t in g.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = v);
        }
        g
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut n = net();
        let before = n.clone();
        let mut opt = Sgd::new(0.3, 0.9).unwrap();
        for _ in 0..3 {
            opt.step(&mut n, &GradientSet::zeros_like(&before));
        }
        assert_eq!(n, before);
    }

    #[test]
    fn unit_lr_subtracts_gradient() {
        let mut n = net();
        let before = n.clone();
        let g = constant_grad(&n, 0.25);
        sgd_step(&mut n, &g, 1.0).unwrap();
        for (a, b) in n.params().iter().zip(before.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, y - 0.25);
            }
        }
    }

    #[test]
    fn momentum_unrolls_to_one_point_nine() {
        let mut n = net();
        let before = n.clone();
        let g = constant_grad(&n, 0.5);
        let mut opt = Sgd::new(1.0, 0.9).unwrap();
        opt.step(&mut n, &g);
        opt.step(&mut n, &g);
        for (a, b) in n.params().iter().zip(before.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - (y - 0.5 - 1.9 * 0.5)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Sgd::new(0.0, 0.0).is_err());
        assert!(Sgd::new(0.1, 1.0).is_err());
        assert!(Sgd::new(0.1, -0.1).is_err());
    }
}
