use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::param::Parameterized;
use crate::{Error, Result};

/// One named parameter tensor in single precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Ordered collection of named parameters, the in-memory form of a
/// checkpoint payload.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot every parameter of `module` under `prefix`.
    pub fn collect<M: Parameterized + ?Sized>(module: &M, prefix: &str) -> Self {
        let mut store = Self::new();
        store.extend_from(module, prefix);
        store
    }

    pub fn extend_from<M: Parameterized + ?Sized>(&mut self, module: &M, prefix: &str) {
        module.visit_params(prefix, &mut |name, p| {
            self.entries.push(ParamEntry {
                name,
                shape: p.shape.clone(),
                values: p.value.iter().map(|&v| v as f32).collect(),
            });
        });
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Copy stored values into `module`. Every parameter of the module must
    /// be present with a matching shape.
    pub fn load_into<M: Parameterized + ?Sized>(&self, module: &mut M, prefix: &str) -> Result<()> {
        let mut err = None;
        module.visit_params_mut(prefix, &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.get(&name) {
                None => err = Some(Error::MissingParam(name)),
                Some(e) if e.shape != p.shape => {
                    err = Some(Error::Shape {
                        expected: format!("{name} {:?}", p.shape),
                        got: format!("{:?}", e.shape),
                    })
                }
                Some(e) => {
                    for (dst, &src) in p.value.iter_mut().zip(&e.values) {
                        *dst = f64::from(src);
                    }
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    /// Like [`load_into`](Self::load_into) but skips parameters absent from
    /// the store. Returns how many tensors were loaded.
    pub fn load_matching<M: Parameterized + ?Sized>(&self, module: &mut M, prefix: &str) -> Result<usize> {
        let mut loaded = 0;
        let mut err = None;
        module.visit_params_mut(prefix, &mut |name, p| {
            if let Some(e) = self.get(&name) {
                if e.shape != p.shape {
                    err.get_or_insert(Error::Shape {
                        expected: format!("{name} {:?}", p.shape),
                        got: format!("{:?}", e.shape),
                    });
                    return;
                }
                for (dst, &src) in p.value.iter_mut().zip(&e.values) {
                    *dst = f64::from(src);
                }
                loaded += 1;
            }
        });
        err.map_or(Ok(loaded), Err)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }
}

/// Round every parameter to the nearest `f32` so an in-memory model is
/// bit-identical to its serialized form.
pub fn quantize_f32<M: Parameterized + ?Sized>(module: &mut M) {
    module.visit_params_mut("", &mut |_, p| {
        for v in p.value.iter_mut() {
            *v = f64::from(*v as f32);
        }
    });
}

