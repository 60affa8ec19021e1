use std::cell::RefCell;
use std::rc::Rc;

use num_complex::Complex;

use crate::error::{ensure_same_shape, invalid, Result};
use crate::tensor::{Real, Tensor};

/// A real or complex tensor stored on the tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Value<R> {
    Real(Tensor<R>),
    Complex(Tensor<Complex<R>>),
}

impl<R: Real> Value<R> {
    pub fn shape(&self) -> &[usize] {
        match self {
            Value::Real(t) => t.shape(),
            Value::Complex(t) => t.shape(),
        }
    }

    pub fn as_real(&self) -> Result<&Tensor<R>> {
        match self {
            Value::Real(t) => Ok(t),
            Value::Complex(t) => Err(invalid!("expected a real tensor, got complex {:?}", t.shape())),
        }
    }

    pub fn as_complex(&self) -> Result<&Tensor<Complex<R>>> {
        match self {
            Value::Complex(t) => Ok(t),
            Value::Real(t) => Err(invalid!("expected a complex tensor, got real {:?}", t.shape())),
        }
    }

    fn accumulate(&mut self, other: Value<R>) -> Result<()> {
        match (self, other) {
            (Value::Real(a), Value::Real(b)) => a.add_assign(&b),
            (Value::Complex(a), Value::Complex(b)) => a.add_assign(&b),
            (a, b) => Err(invalid!(
                "cannot accumulate cotangents of different kinds ({:?} vs {:?})",
                a.shape(),
                b.shape()
            )),
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub(crate) id: usize,
}

type BackwardFn<R> = Box<dyn Fn(&[&Value<R>], &Value<R>, &Value<R>, &[bool]) -> Result<Vec<Option<Value<R>>>>>;

pub(crate) struct Node<R> {
    value: Rc<Value<R>>,
    inputs: Vec<usize>,
    backward: Option<(&'static str, BackwardFn<R>)>,
    requires_grad: bool,
}

/// Tape of recorded operations.
pub struct Graph<R: Real> {
    nodes: RefCell<Vec<Node<R>>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn leaf(&self, value: Value<R>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var { id: nodes.len() - 1 }
    }

    /// Data that receives no gradient.
    pub fn constant(&self, t: Tensor<R>) -> Var {
        self.leaf(Value::Real(t), false)
    }

    pub fn constant_complex(&self, t: Tensor<Complex<R>>) -> Var {
        self.leaf(Value::Complex(t), false)
    }

    /// A leaf whose gradient is collected by [`Graph::backward`].
    pub fn param(&self, t: Tensor<R>) -> Var {
        self.leaf(Value::Real(t), true)
    }

    pub fn value(&self, v: Var) -> Rc<Value<R>> {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Copy of a real node's tensor.
    pub fn real(&self, v: Var) -> Result<Tensor<R>> {
        self.value(v).as_real().cloned()
    }

    pub fn complex(&self, v: Var) -> Result<Tensor<Complex<R>>> {
        self.value(v).as_complex().cloned()
    }

    /// Value of a single-element real node.
    pub fn scalar(&self, v: Var) -> Result<R> {
        let value = self.value(v);
        let t = value.as_real()?;
        if t.numel() != 1 {
            return Err(invalid!("expected a scalar, got shape {:?}", t.shape()));
        }
        Ok(t.data()[0])
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Records `value` as the output of an operation on `inputs`. The
    /// backward closure receives the input values, the output value, the
    /// output cotangent and which inputs need a cotangent.
    pub(crate) fn record<F>(&self, name: &'static str, value: Value<R>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&[&Value<R>], &Value<R>, &Value<R>, &[bool]) -> Result<Vec<Option<Value<R>>>> + 'static,
    {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|v| nodes[v.id].requires_grad);
        nodes.push(Node {
            value: Rc::new(value),
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: requires_grad.then(|| (name, Box::new(backward) as BackwardFn<R>)),
            requires_grad,
        });
        Var { id: nodes.len() - 1 }
    }

    /// Gradients of the scalar `root` with respect to every parameter leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients<R>> {
        let nodes = self.nodes.borrow();
        let root_shape = nodes[root.id].value.shape();
        if nodes[root.id].value.as_real().is_err() || root_shape.iter().product::<usize>() != 1 {
            return Err(invalid!("backward needs a real scalar root, got shape {root_shape:?}"));
        }
        let mut grads: Vec<Option<Value<R>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Value::Real(Tensor::full(root_shape, R::one())));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some((name, backward)) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<&Value<R>> = node.inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let input_grads = backward(&inputs, &node.value, &grad, &needs)?;
            if input_grads.len() != node.inputs.len() {
                return Err(invalid!("{name}: backward returned {} cotangents for {} inputs", input_grads.len(), node.inputs.len()));
            }
            for ((&input, g), &need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                ensure_same_shape(name, g.shape(), nodes[input].value.shape())?;
                match grads[input].as_mut() {
                    Some(acc) => acc.accumulate(g)?,
                    None => grads[input] = Some(g),
                }
            }
        }
        // Only leaves keep their cotangents.
        for (id, node) in nodes.iter().enumerate() {
            if !(node.requires_grad && node.backward.is_none()) {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

/// Cotangents of the parameter leaves.
pub struct Gradients<R> {
    grads: Vec<Option<Value<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of a real parameter; `None` when it did not influence the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        match self.grads.get(v.id)?.as_ref()? {
            Value::Real(t) => Some(t),
            Value::Complex(_) => None,
        }
    }

    /// Gradient of `v`, or zeros of `shape` when the parameter is
    /// disconnected from the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<R> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}
