use crate::error::{Error, Result};

/// Index of a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    /// Buffers such as running normalisation statistics are stored alongside
    /// weights but never updated by the optimizer.
    pub trainable: bool,
}

/// Named tensors in registration order, plus one gradient buffer per tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    grads: Option<Vec<Vec<f64>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn register(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        value: Vec<f64>,
        trainable: bool,
    ) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate {name}"
        );
        self.params.push(Param {
            name,
            shape: shape.to_vec(),
            value,
            trainable,
        });
        self.grads = None;
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Allocates (or clears) the gradient buffers.
    pub fn zero_grad(&mut self) {
        match &mut self.grads {
            Some(g) => g
                .iter_mut()
                .for_each(|v| v.iter_mut().for_each(|x| *x = 0.0)),
            None => {
                self.grads = Some(
                    self.params
                        .iter()
                        .map(|p| vec![0.0; p.value.len()])
                        .collect(),
                )
            }
        }
    }

    /// Gradient buffers, aligned one-to-one with [`Self::params`].
    pub fn grads(&self) -> Result<&[Vec<f64>]> {
        self.grads
            .as_deref()
            .ok_or_else(|| Error::State("gradients read before any backward pass".into()))
    }

    pub fn grad(&self, id: ParamId) -> Result<&[f64]> {
        Ok(&self.grads()?[id.0])
    }

    pub(crate) fn grads_mut(&mut self) -> &mut Vec<Vec<f64>> {
        if self.grads.is_none() {
            self.zero_grad();
        }
        self.grads.as_mut().expect("allocated above")
    }

    /// Mutable access to every value together with its gradient.
    pub(crate) fn values_and_grads_mut(
        &mut self,
    ) -> Result<impl Iterator<Item = (&mut Param, &Vec<f64>)>> {
        let grads = self
            .grads
            .as_ref()
            .ok_or_else(|| Error::State("optimizer step before any backward pass".into()))?;
        Ok(self.params.iter_mut().zip(grads.iter()))
    }

    /// Copies values from `other`, which must hold the same names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, model expects {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::Format(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    src.name, src.shape, dst.name, dst.shape
                )));
            }
            dst.value.clone_from(&src.value);
        }
        Ok(())
    }

    pub(crate) fn from_params(params: Vec<Param>) -> Self {
        ParamStore {
            params,
            grads: None,
        }
    }
}
