use rand::Rng as _;

use crate::autodiff::{Tape, Tensor, Var};
use crate::seeding::Rng;

/// Parameter tensors with names, in a fixed layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Params {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` init, fan-in taken from the
    /// first dimension. Entries named in `zeroed` start at zero.
    pub fn init(layout: &[(String, Vec<usize>)], zeroed: &[&str], rng: &mut Rng) -> Self {
        let entries = layout
            .iter()
            .map(|(name, shape)| {
                let len: usize = shape.iter().product();
                let data = if zeroed.contains(&name.as_str()) {
                    vec![0.0; len]
                } else {
                    let bound = 1.0 / (shape[0].max(1) as f64).sqrt();
                    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
                };
                (
                    name.clone(),
                    Tensor::new(shape.clone(), data).expect("layout shape"),
                )
            })
            .collect();
        Self::new(entries)
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

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Same names and shapes in the same order.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            t.round_to_f32();
        }
    }

    /// Records every tensor as a differentiable leaf, in layout order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Checks names and shapes against an expected layout.
    pub fn check_layout(&self, layout: &[(String, Vec<usize>)]) -> Result<(), String> {
        if self.names.len() != layout.len() {
            return Err(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.names.len()
            ));
        }
        for ((name, t), (lname, lshape)) in self.names.iter().zip(&self.tensors).zip(layout) {
            if name != lname || t.shape() != lshape.as_slice() {
                return Err(format!(
                    "expected {lname} {lshape:?}, found {name} {:?}",
                    t.shape()
                ));
            }
        }
        Ok(())
    }
}
