//! Named parameter storage shared by every network in the crate.

use std::collections::{BTreeMap, HashMap};

use autograd::{Gradients, Graph, Real, Var};
use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a parameter is used for. Weight decay only touches [`ParamKind::Weight`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Real> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayD<T>,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T: Real> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Panics on a duplicate name; names are fixed by the network builders.
    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: ArrayD<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Param { name, kind, value });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.id_of(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.id_of(name).map(|id| &mut self.params[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on `graph`, as gradient-tracked leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind<'g>(&self, graph: &'g Graph<T>, trainable: bool) -> Bound<'g, T> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    graph.variable(p.value.clone())
                } else {
                    graph.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Gradients for each parameter, in store order.
    pub fn collect_grads(&self, bound: &Bound<'_, T>, grads: &mut Gradients<T>) -> Vec<Option<ArrayD<T>>> {
        bound.vars.iter().map(|&v| grads.take(v)).collect()
    }

    /// Casts every value to another precision. Names, kinds and order are kept.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.mapv(|v| U::lit(v.as_f64())),
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Named tensors, as exchanged with checkpoints.
pub type StateBlocks<T> = BTreeMap<String, ArrayD<T>>;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StateError {
    #[error("missing block {0}")]
    Missing(String),
    #[error("block {name} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
}

/// Removes `name` from `blocks`, checking its shape.
pub fn take_block<T: Real>(blocks: &mut StateBlocks<T>, name: &str, shape: &[usize]) -> Result<ArrayD<T>, StateError> {
    let value = blocks
        .remove(name)
        .ok_or_else(|| StateError::Missing(name.to_string()))?;
    if value.shape() != shape {
        return Err(StateError::Shape {
            name: name.to_string(),
            expected: shape.to_vec(),
            found: value.shape().to_vec(),
        });
    }
    Ok(value)
}

impl<T: Real> ParamStore<T> {
    pub fn export(&self, out: &mut StateBlocks<T>) {
        for p in &self.params {
            out.insert(p.name.clone(), p.value.clone());
        }
    }

    /// Replaces every value with the block of the same name, consuming it.
    pub fn import(&mut self, blocks: &mut StateBlocks<T>) -> Result<(), StateError> {
        for p in &mut self.params {
            p.value = take_block(blocks, &p.name, p.value.shape())?;
        }
        Ok(())
    }
}

/// Graph handles for every parameter of one [`ParamStore`].
pub struct Bound<'g, T: Real> {
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Real> Bound<'g, T> {
    pub fn get(&self, id: ParamId) -> Var<'g, T> {
        self.vars[id.0]
    }
}

/// Seeded weight initialisation: normal(0, 0.02) for weights, ones/zeros for
/// normalisation gains/biases, zeros for biases.
pub struct Initializer {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl Initializer {
    pub const STD: f64 = 0.02;

    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, Self::STD).unwrap(),
        }
    }

    pub fn normal<T: Real>(&mut self, shape: &[usize]) -> ArrayD<T> {
        let normal = self.normal;
        ArrayD::from_shape_simple_fn(IxDyn(shape), || T::lit(normal.sample(&mut self.rng)))
    }

    /// Standard-normal draws (used for spectral-norm vectors).
    pub fn standard_normal<T: Real>(&mut self, len: usize) -> Vec<T> {
        let n = Normal::new(0.0, 1.0).unwrap();
        (0..len).map(|_| T::lit(n.sample(&mut self.rng))).collect()
    }
}

/// Hierarchical parameter name prefix, e.g. `disc/scale1/down`.
#[derive(Debug, Clone)]
pub struct Scope(String);

impl Scope {
    pub fn root(name: &str) -> Self {
        Self(name.to_string())
    }

    pub fn sub(&self, name: impl AsRef<str>) -> Self {
        Self(format!("{}/{}", self.0, name.as_ref()))
    }

    pub fn param(&self, name: &str) -> String {
        format!("{}/{}", self.0, name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}
