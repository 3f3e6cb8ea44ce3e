use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Adam with bias correction. Moment buffers are created on the first step.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter slice from its gradient slice.
    pub fn step_slices(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
        {
            return Err(Error::Dimension(
                "parameter, gradient and moment shapes differ".into(),
            ));
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(self.t as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Steps every trainable tensor in the store using its accumulated
    /// gradient (missing gradients count as zero).
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let grads: Vec<Vec<T>> = store
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| match e.tensor.grad() {
                Some(g) => g.to_vec(),
                None => vec![T::zero(); e.tensor.len()],
            })
            .collect();
        let mut params: Vec<&mut [T]> = store
            .entries_mut()
            .iter_mut()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.data_mut())
            .collect();
        let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
        self.step_slices(&mut params, &grad_refs)
    }
}
