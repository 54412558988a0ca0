use rand::Rng;
use serde::{Deserialize, Serialize};

/// A named trainable array with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        Self {
            name: name.into(),
            shape,
            value,
            grad,
        }
    }

    pub fn constant(name: impl Into<String>, shape: Vec<usize>, v: f32) -> Self {
        let len = shape.iter().product();
        Self::new(name, shape, vec![v; len])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f32,
        rng: &mut R,
    ) -> Self {
        let len = shape.iter().product();
        let value = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::new(name, shape, value)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Shape record of a parameter, as stored in checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Anything that owns trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        self.params()
            .iter()
            .map(|p| ParamSpec {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect()
    }
}
