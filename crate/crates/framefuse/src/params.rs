//! Named-parameter traversal and tape binding.
//!
//! Trainable modules expose their tensors through [`Parameterized`] in
//! a fixed order under stable dotted names ("excitation.w_in",
//! "encoder.layers.0.wq", ...). The optimizer, checkpoint I/O and the
//! gradient checker all key on those names, so the traversal order is
//! the single source of truth for parameter identity.

use std::collections::BTreeMap;

use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Matrix;

/// A set of named, trainable tensors in a fixed traversal order.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    /// Total number of scalar entries.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, m| n += m.data().len());
        n
    }

    /// Snapshot of all tensors in traversal order.
    fn named_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, m| out.push((name.to_string(), m.clone())));
        out
    }
}

/// A plain ordered list of named tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamVec(pub Vec<(String, Matrix)>);

impl Parameterized for ParamVec {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (name, m) in &self.0 {
            f(name, m);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (name, m) in &mut self.0 {
            f(name, m);
        }
    }
}

/// Records which tape node each named parameter was bound to, so
/// gradients can be recovered by name after the backward pass.
#[derive(Default)]
pub struct ParamRegistry {
    entries: Vec<(String, Var)>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates a parameter leaf on the tape and records it.
    pub fn bind(&mut self, tape: &Tape, name: impl Into<String>, value: &Matrix) -> Var {
        let name = name.into();
        debug_assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter name {name}"
        );
        let var = tape.param(value.clone());
        self.entries.push((name, var));
        var
    }

    pub fn entries(&self) -> &[(String, Var)] {
        &self.entries
    }

    /// Extracts named gradients after a backward pass; parameters that
    /// did not influence the loss get zeros.
    pub fn named_grads(&self, tape: &Tape, grads: &Gradients) -> BTreeMap<String, Matrix> {
        self.entries
            .iter()
            .map(|(name, var)| {
                let (rows, cols) = tape.shape(*var);
                (name.clone(), grads.get_or_zeros(*var, rows, cols))
            })
            .collect()
    }
}

/// Binding context threaded through module `bind` methods: either
/// registers trainable parameters under a dotted prefix, or creates
/// frozen constants for forward-only evaluation.
pub struct BindCtx<'a> {
    reg: Option<&'a mut ParamRegistry>,
    prefix: String,
}

impl<'a> BindCtx<'a> {
    pub fn trainable(reg: &'a mut ParamRegistry, prefix: impl Into<String>) -> Self {
        Self {
            reg: Some(reg),
            prefix: prefix.into(),
        }
    }

    pub fn frozen() -> Self {
        Self {
            reg: None,
            prefix: String::new(),
        }
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn bind(&mut self, tape: &Tape, name: &str, value: &Matrix) -> Var {
        match &mut self.reg {
            Some(reg) => {
                let full = if self.prefix.is_empty() {
                    name.to_string()
                } else {
                    format!("{}.{}", self.prefix, name)
                };
                reg.bind(tape, full, value)
            }
            None => tape.constant(value.clone()),
        }
    }

    /// Sub-context with an extended prefix.
    pub fn scope(&mut self, segment: &str) -> BindCtx<'_> {
        let prefix = self.full_name(segment);
        BindCtx {
            reg: self.reg.as_deref_mut(),
            prefix,
        }
    }
}
