use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashSet};
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

struct ParamInner<T: Real> {
    name: String,
    value: RefCell<Tensor<T>>,
    trainable: bool,
}

/// Shared handle to a named parameter (or non-trainable buffer).
#[derive(Clone)]
pub struct Param<T: Real>(Rc<ParamInner<T>>);

impl<T: Real> Param<T> {
    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn trainable(&self) -> bool {
        self.0.trainable
    }

    /// The current value. Trainable parameters are leaves with
    /// `requires_grad` set.
    pub fn get(&self) -> Tensor<T> {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    /// Replaces the value, keeping the shape.
    pub fn set(&self, data: Vec<T>) -> Result<()> {
        let shape = self.shape();
        let t = Tensor::from_vec(data, &shape)?.requires_grad_(self.0.trainable);
        *self.0.value.borrow_mut() = t;
        Ok(())
    }

    pub fn set_f64(&self, data: &[f64]) -> Result<()> {
        self.set(data.iter().map(|&v| T::of(v)).collect())
    }
}

struct StoreInner<T: Real> {
    params: RefCell<Vec<Param<T>>>,
    names: RefCell<HashSet<String>>,
    rng: RefCell<ChaCha8Rng>,
    training: Rc<Cell<bool>>,
}

/// Owns every parameter of a model. Initialization draws from a seeded
/// generator in registration order, so equal seeds give equal models.
#[derive(Clone)]
pub struct VarStore<T: Real>(Rc<StoreInner<T>>);

impl<T: Real> VarStore<T> {
    pub fn new(seed: u64) -> Self {
        VarStore(Rc::new(StoreInner {
            params: RefCell::new(Vec::new()),
            names: RefCell::new(HashSet::new()),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            training: Rc::new(Cell::new(true)),
        }))
    }

    pub fn root(&self) -> Path<T> {
        Path { store: self.clone(), prefix: String::new() }
    }

    pub fn set_training(&self, on: bool) {
        self.0.training.set(on);
    }

    pub fn is_training(&self) -> bool {
        self.0.training.get()
    }

    pub(crate) fn training_flag(&self) -> Rc<Cell<bool>> {
        self.0.training.clone()
    }

    pub fn params(&self) -> Vec<Param<T>> {
        self.0.params.borrow().clone()
    }

    pub fn trainable(&self) -> Vec<Param<T>> {
        self.0.params.borrow().iter().filter(|p| p.trainable()).cloned().collect()
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|p| p.get().numel()).sum()
    }

    /// Name, shape and values of every parameter and buffer, sorted by name.
    pub fn named_values(&self) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut v: Vec<_> = self.0.params.borrow().iter().map(|p| (p.name().to_string(), p.shape(), p.get().to_vec())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    /// Overwrites parameters from `(name -> (shape, values))`. Every
    /// registered parameter must be present with a matching shape.
    pub fn load_values(&self, values: &BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<()> {
        for p in self.0.params.borrow().iter() {
            let Some((shape, data)) = values.get(p.name()) else {
                return invalid("load_values", format!("missing parameter {}", p.name()));
            };
            if *shape != p.shape() {
                return shape_err("load_values", format!("{}: stored {:?} vs model {:?}", p.name(), shape, p.shape()));
            }
            p.set_f64(data)?;
        }
        Ok(())
    }

    fn register(&self, name: String, value: Vec<T>, shape: &[usize], trainable: bool) -> Param<T> {
        assert!(self.0.names.borrow_mut().insert(name.clone()), "duplicate parameter name {name}");
        let t = Tensor::from_vec(value, shape).expect("parameter initializer length").requires_grad_(trainable);
        let p = Param(Rc::new(ParamInner { name, value: RefCell::new(t), trainable }));
        self.0.params.borrow_mut().push(p.clone());
        p
    }

    fn uniform(&self, n: usize, bound: f64) -> Vec<T> {
        let mut rng = self.0.rng.borrow_mut();
        (0..n).map(|_| T::of(rng.gen_range(-bound..=bound))).collect()
    }

    fn unit_normal_vec(&self, n: usize) -> Vec<T> {
        let mut rng = self.0.rng.borrow_mut();
        let v: Vec<f64> = (0..n)
            .map(|_| {
                // Box-Muller
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| T::of(x / norm)).collect()
    }
}

/// Hierarchical naming scope inside a [`VarStore`].
#[derive(Clone)]
pub struct Path<T: Real> {
    store: VarStore<T>,
    prefix: String,
}

impl<T: Real> Path<T> {
    pub fn sub(&self, name: &str) -> Path<T> {
        let prefix = if self.prefix.is_empty() { name.to_string() } else { format!("{}.{}", self.prefix, name) };
        Path { store: self.store.clone(), prefix }
    }

    pub fn store(&self) -> &VarStore<T> {
        &self.store
    }

    fn full(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    /// Kaiming-uniform initialization, bound `sqrt(6 / fan_in)`.
    pub fn kaiming(&self, name: &str, shape: &[usize], fan_in: usize) -> Param<T> {
        let n: usize = shape.iter().product();
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let v = self.store.uniform(n, bound);
        self.store.register(self.full(name), v, shape, true)
    }

    pub fn zeros(&self, name: &str, shape: &[usize]) -> Param<T> {
        let n: usize = shape.iter().product();
        self.store.register(self.full(name), vec![T::zero(); n], shape, true)
    }

    pub fn ones(&self, name: &str, shape: &[usize]) -> Param<T> {
        let n: usize = shape.iter().product();
        self.store.register(self.full(name), vec![T::one(); n], shape, true)
    }

    /// Non-trainable state vector initialized to a random unit vector.
    pub fn unit_buffer(&self, name: &str, n: usize) -> Param<T> {
        let v = self.store.unit_normal_vec(n);
        self.store.register(self.full(name), v, &[n], false)
    }
}
