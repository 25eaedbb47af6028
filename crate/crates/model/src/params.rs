use std::collections::BTreeMap;

use ppk_autodiff::{Graph, Tensor, Var};
use rand::Rng;

use crate::{Error, Result};

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter {name} registered twice");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    /// Glorot-uniform `[fan_in, fan_out]` matrix.
    pub fn add_glorot(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(name, Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-a..a)));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    /// Overwrites every parameter from `named`; names and shapes must match exactly.
    pub fn load_named(&mut self, named: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let src = named.get(name).ok_or_else(|| Error::Input(format!("checkpoint lacks parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Input(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// Registers every parameter as a graph leaf with gradient tracking.
    pub fn bind(&self, g: &mut Graph) -> Result<Bound> {
        let vars = self.tensors.iter().map(|t| g.param(t.clone())).collect::<std::result::Result<_, _>>()?;
        Ok(Bound { vars, index: self.index.clone() })
    }

    /// Registers only the parameters whose names start with one of `prefixes`.
    pub fn bind_prefixed(&self, g: &mut Graph, prefixes: &[&str]) -> Result<Bound> {
        let mut vars = Vec::new();
        let mut index = BTreeMap::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                index.insert(name.clone(), vars.len());
                vars.push(g.param(t.clone())?);
            }
        }
        Ok(Bound { vars, index })
    }

    /// Handles for parameters already on a graph, in registration order.
    pub fn bound_from(&self, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.len() {
            return Err(Error::Input(format!("{} handles for {} parameters", vars.len(), self.len())));
        }
        Ok(Bound { vars, index: self.index.clone() })
    }
}

/// Graph handles for a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
