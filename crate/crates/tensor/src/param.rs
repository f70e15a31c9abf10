use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::Tensor;

/// A shared, mutable weight tensor with an accumulated gradient.
///
/// Cloning a `Param` clones the handle, not the storage.
#[derive(Clone)]
pub struct Param(Arc<ParamCell>);

struct ParamCell {
    value: RwLock<Tensor>,
    grad: Mutex<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self(Arc::new(ParamCell {
            value: RwLock::new(value),
            grad: Mutex::new(grad),
        }))
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor> {
        self.0.value.read().expect("param lock poisoned")
    }

    pub fn set_value(&self, value: Tensor) {
        let mut slot = self.0.value.write().expect("param lock poisoned");
        assert_eq!(slot.shape(), value.shape(), "param shape is fixed");
        *slot = value;
    }

    /// Runs `f` with exclusive access to the value and the gradient.
    pub fn update(&self, f: impl FnOnce(&mut Tensor, &Tensor)) {
        let mut value = self.0.value.write().expect("param lock poisoned");
        let grad = self.0.grad.lock().expect("param lock poisoned");
        f(&mut value, &grad);
    }

    pub fn grad(&self) -> Tensor {
        self.0.grad.lock().expect("param lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        let mut g = self.0.grad.lock().expect("param lock poisoned");
        g.data_mut().fill(0.0);
    }

    pub fn accumulate_grad(&self, delta: &Tensor) {
        self.0.grad.lock().expect("param lock poisoned").add_assign(delta);
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn ptr_eq(&self, other: &Param) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Param({:?})", self.shape())
    }
}
