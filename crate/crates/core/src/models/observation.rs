use nalgebra::{DMatrix, DVector};

use crate::state::InstanceId;

#[derive(Clone, Debug, PartialEq)]
pub struct JacobianBlock {
    pub instance: InstanceId,
    pub jacobian: DMatrix<f64>,
}

/// Residual `z - h(x̂)` with the Jacobian of `h` split per involved instance.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedObservation {
    pub residual: DVector<f64>,
    pub blocks: Vec<JacobianBlock>,
    pub noise: DMatrix<f64>,
}

impl LinearizedObservation {
    pub fn dim(&self) -> usize {
        self.residual.len()
    }

    pub fn block(&self, id: InstanceId) -> Option<&DMatrix<f64>> {
        self.blocks.iter().find(|b| b.instance == id).map(|b| &b.jacobian)
    }

    pub fn involved(&self) -> Vec<InstanceId> {
        self.blocks.iter().map(|b| b.instance).collect()
    }
}
