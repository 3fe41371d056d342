//! Program execution: parameter binding, forward/backward, and the
//! finite-difference gradient oracle.
//!
//! A "program" is a closure that builds a differentiable computation on
//! a fresh [`Session`] and returns the scalar loss variable. Parameters
//! are bound by name from a [`ParameterStore`]; inputs are fed with
//! [`Session::input`].

use crate::error::{CoreError, Result};
use crate::rng::RngStream;
use crate::store::ParameterStore;
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use indexmap::IndexMap;
use std::cell::{Cell, RefCell};

pub struct Session<'a, T: Scalar> {
    pub tape: Tape<T>,
    params: &'a ParameterStore,
    bound: RefCell<IndexMap<String, Var>>,
    rng: RefCell<Option<RngStream>>,
    pub train: bool,
    drew_random: Cell<bool>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(params: &'a ParameterStore, train: bool, rng: Option<RngStream>) -> Self {
        Session {
            tape: Tape::new(),
            params,
            bound: RefCell::new(IndexMap::new()),
            rng: RefCell::new(rng),
            train,
            drew_random: Cell::new(false),
        }
    }

    /// Bind a named parameter as a differentiable leaf. Repeated binds
    /// of the same name return the same variable.
    pub fn param(&self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.borrow().get(name) {
            return Ok(v);
        }
        let t: Tensor<T> = self.params.get_tensor(name)?;
        let v = self.tape.leaf(t);
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Feed an input tensor (differentiable leaf whose gradient is
    /// discarded).
    pub fn input(&self, t: Tensor<T>) -> Var {
        self.tape.leaf(t)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    /// Inverted dropout: at train time zero each element with
    /// probability p and scale survivors by 1/(1-p); identity at test
    /// time or for p = 0. Draws mark the session as stochastic.
    pub fn dropout(&self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(CoreError::invalid("dropout", format!("p={p} outside [0,1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let mut rng_ref = self.rng.borrow_mut();
        let rng = rng_ref
            .as_mut()
            .ok_or_else(|| CoreError::invalid("dropout", "no RNG attached to session"))?;
        self.drew_random.set(true);
        let shape = self.tape.shape(x);
        let n: usize = shape.iter().product();
        let keep = T::from_f64(1.0 / (1.0 - p));
        let mut mask = Tensor::zeros(shape);
        for i in 0..n {
            if rng.uniform01() >= p {
                mask.data_mut()[i] = keep;
            }
        }
        drop(rng_ref);
        let m = self.tape.constant(mask);
        self.tape.mul(x, m)
    }

    pub fn drew_random(&self) -> bool {
        self.drew_random.get()
    }

    /// RNG state after the run (counter advanced past all draws).
    pub fn final_rng(&self) -> Option<RngStream> {
        *self.rng.borrow()
    }

    fn bound_vars(&self) -> Vec<(String, Var)> {
        self.bound
            .borrow()
            .iter()
            .map(|(k, &v)| (k.clone(), v))
            .collect()
    }
}

/// Gradients keyed like the parameter store.
pub type Gradients<T> = IndexMap<String, Tensor<T>>;

#[derive(Debug)]
pub struct ForwardBackward<T: Scalar> {
    pub loss: Tensor<T>,
    pub grads: Gradients<T>,
}

/// Run a program forward, then backward from its scalar loss. Every
/// parameter in the store gets a gradient entry; parameters that do not
/// reach the loss map to zero tensors.
pub fn forward_backward<T: Scalar, F, E>(
    params: &ParameterStore,
    train: bool,
    rng: Option<RngStream>,
    program: F,
) -> std::result::Result<ForwardBackward<T>, E>
where
    F: FnOnce(&Session<T>) -> std::result::Result<Var, E>,
    E: From<CoreError>,
{
    let session = Session::new(params, train, rng);
    let loss = program(&session)?;
    if session.tape.numel(loss) != 1 {
        return Err(CoreError::NonScalarLoss(session.tape.shape(loss)).into());
    }
    let node_grads = session.tape.backward(loss)?;
    let mut grads: Gradients<T> = IndexMap::new();
    let bound = session.bound_vars();
    for name in params.names() {
        let g = bound
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| node_grads[v.id].clone())
            .unwrap_or_else(|| Tensor::zeros(params.get(name).unwrap().shape().to_vec()));
        grads.insert(name.to_string(), g);
    }
    Ok(ForwardBackward { loss: session.tape.value(loss), grads })
}

/// Element cap for the finite-difference sweep.
pub const GRAD_CHECK_ELEMENT_CAP: usize = 20_000;

/// Central-difference gradient check in f64. Returns the maximum over
/// all parameter elements of
/// |analytic - central| / max(|analytic|, |central|, 1e-12).
pub fn grad_check<F, E>(params: &ParameterStore, epsilon: f64, program: F) -> std::result::Result<f64, E>
where
    F: Fn(&Session<f64>) -> std::result::Result<Var, E>,
    E: From<CoreError>,
{
    grad_check_with_floor(params, epsilon, 1e-12, program)
}

/// [`grad_check`] with an explicit denominator floor. Deep compositions
/// produce elements whose true gradient is ~1e-9; there the central
/// difference is dominated by f64 cancellation noise (~1e-12 absolute),
/// so a floor well above that noise keeps the relative criterion
/// meaningful.
pub fn grad_check_with_floor<F, E>(
    params: &ParameterStore,
    epsilon: f64,
    floor: f64,
    program: F,
) -> std::result::Result<f64, E>
where
    F: Fn(&Session<f64>) -> std::result::Result<Var, E>,
    E: From<CoreError>,
{
    if epsilon <= 0.0 {
        return Err(CoreError::invalid("grad_check", format!("epsilon={epsilon} must be > 0")).into());
    }
    let total = params.total_elements();
    if total > GRAD_CHECK_ELEMENT_CAP {
        return Err(CoreError::TooManyElements(total, GRAD_CHECK_ELEMENT_CAP).into());
    }

    // Analytic pass; rejects programs that draw randomness.
    let session = Session::new(params, true, Some(RngStream::new(0)));
    let loss = program(&session)?;
    if session.tape.numel(loss) != 1 {
        return Err(CoreError::NonScalarLoss(session.tape.shape(loss)).into());
    }
    if session.drew_random() {
        return Err(CoreError::NonDeterministic.into());
    }
    let node_grads = session.tape.backward(loss)?;
    let bound = session.bound_vars();

    let eval = |store: &ParameterStore| -> std::result::Result<f64, E> {
        let s = Session::new(store, true, Some(RngStream::new(0)));
        let l = program(&s)?;
        Ok(s.tape.value(l).item())
    };

    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    let mut max_rel = 0.0f64;
    for name in &names {
        let base: Tensor<f64> = params.get_tensor(name)?;
        let analytic = bound
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| node_grads[v.id].clone())
            .unwrap_or_else(|| Tensor::zeros(base.shape().to_vec()));
        for idx in 0..base.numel() {
            let mut plus = base.clone();
            plus.data_mut()[idx] += epsilon;
            let mut store_p = params.clone();
            store_p.set(name, crate::store::TensorData::from_tensor(plus))?;
            let lp = eval(&store_p)?;

            let mut minus = base.clone();
            minus.data_mut()[idx] -= epsilon;
            let mut store_m = params.clone();
            store_m.set(name, crate::store::TensorData::from_tensor(minus))?;
            let lm = eval(&store_m)?;

            let central = (lp - lm) / (2.0 * epsilon);
            let a = analytic.data()[idx];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(floor);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
