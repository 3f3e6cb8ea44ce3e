//! Named parameter storage and the per-forward-pass context.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Buffers (e.g. running statistics) are stored but never optimized.
    pub trainable: bool,
}

/// Every tensor a model owns, in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: String, tensor: Tensor<T>, trainable: bool) -> ParamId {
        self.entries.push(Entry {
            name,
            tensor,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Ids of trainable entries, in creation order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .map(ParamId)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    /// Adds gradients from one backward pass into each parameter's buffer.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>) -> Result<()> {
        for (entry, g) in self.entries.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                entry.tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Vec<T>)>) -> Result<()> {
        for (id, data) in updates {
            let t = &mut self.entries[id.0].tensor;
            if t.len() != data.len() {
                return Err(Error::Dimension(format!(
                    "update of length {} for {}",
                    data.len(),
                    self.entries[id.0].name
                )));
            }
            t.data_mut().copy_from_slice(&data);
        }
        Ok(())
    }

    /// Copies of every tensor's values.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.entries.iter().map(|e| e.tensor.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<T>]) -> Result<()> {
        if snapshot.len() != self.entries.len()
            || snapshot
                .iter()
                .zip(&self.entries)
                .any(|(s, e)| s.len() != e.tensor.len())
        {
            return Err(Error::Dimension("snapshot does not match the store".into()));
        }
        for (e, s) in self.entries.iter_mut().zip(snapshot) {
            e.tensor.data_mut().copy_from_slice(s);
        }
        Ok(())
    }
}

/// Per-parameter gradients from one backward pass.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// State of one forward pass: the tape, parameter bindings, mode, and the
/// running-statistic updates produced along the way.
pub struct Ctx<'a, T> {
    pub tape: Tape<T>,
    store: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track_grads: bool,
    rng: Option<&'a mut ChaCha8Rng>,
    updates: Vec<(ParamId, Vec<T>)>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(
        store: &'a ParamStore<T>,
        mode: Mode,
        track_grads: bool,
        rng: Option<&'a mut ChaCha8Rng>,
    ) -> Self {
        Self {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            mode,
            track_grads,
            rng,
            updates: Vec::new(),
        }
    }

    /// Training pass: gradients tracked, dropout drawn from `rng`.
    pub fn train(store: &'a ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self::new(store, Mode::Train, true, Some(rng))
    }

    /// Inference pass: parameters enter the tape as constants.
    pub fn eval(store: &'a ParamStore<T>) -> Self {
        Self::new(store, Mode::Eval, false, None)
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_train(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    /// Binds a parameter onto the tape (once per pass).
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.store.entries[id.0];
        let t = entry.tensor.clone();
        let v = if self.track_grads && entry.trainable {
            self.tape.leaf(t)
        } else {
            self.tape.constant(t)
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    pub fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        self.rng.as_deref_mut()
    }

    pub fn push_update(&mut self, id: ParamId, data: Vec<T>) {
        self.updates.push((id, data));
    }

    /// Gradients of `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: Var) -> Result<ParamGrads<T>> {
        let g = self.tape.backward(loss)?;
        let grads = self
            .bound
            .iter()
            .map(|b| b.and_then(|v| g.get(v).map(<[T]>::to_vec)))
            .collect();
        Ok(ParamGrads { grads })
    }

    pub fn into_updates(self) -> Vec<(ParamId, Vec<T>)> {
        self.updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_are_shared_and_grads_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_param("w", Tensor::vector(vec![1.0, 2.0]));
        let b = store.add_buffer("b", Tensor::vector(vec![5.0]));
        assert_eq!(store.num_trainable(), 2);

        let grads = {
            let mut ctx = Ctx::new(&store, Mode::Train, true, None);
            let v1 = ctx.param(w);
            let v2 = ctx.param(w);
            assert_eq!(v1, v2);
            let bb = ctx.param(b);
            assert!(!ctx.tape.requires_grad(bb));
            let p = ctx.tape.mul(v1, v2).unwrap();
            let l = ctx.tape.sum(p);
            ctx.backward(l).unwrap()
        };
        assert_eq!(grads.get(w).unwrap(), &[2.0, 4.0]);
        assert!(grads.get(b).is_none());
        store.accumulate(&grads).unwrap();
        store.accumulate(&grads).unwrap();
        assert_eq!(store.get(w).grad().unwrap(), &[4.0, 8.0]);
        store.zero_grads();
        assert!(store.get(w).grad().is_none());
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_param("w", Tensor::vector(vec![1.0, 2.0]));
        let snap = store.snapshot();
        store.get_mut(w).data_mut()[0] = 9.0;
        store.restore(&snap).unwrap();
        assert_eq!(store.get(w).data(), &[1.0, 2.0]);
        assert!(store.restore(&[]).is_err());
    }
}
