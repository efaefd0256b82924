//! Discrete leaky integrate-and-fire neurons.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SimError};
use crate::scalar::Scalar;
use crate::tensor::Tensor3;
use crate::ttb::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifParams<S> {
    /// Firing threshold; a neuron spikes when its potential is strictly above it.
    pub v_th: S,
    /// Constant leak subtracted every step.
    pub v_leak: S,
    #[serde(default)]
    pub v_init: S,
}

impl<S: Scalar> LifParams<S> {
    pub fn new(v_th: S, v_leak: S) -> Result<Self> {
        let p = Self {
            v_th,
            v_leak,
            v_init: S::zero(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_th.partial_cmp(&S::zero()) != Some(std::cmp::Ordering::Greater) {
            return Err(SimError::Config(format!(
                "LIF threshold must be positive, got {:?}",
                self.v_th
            )));
        }
        if self.v_leak < S::zero() {
            return Err(SimError::Config(format!(
                "LIF leak must be non-negative, got {:?}",
                self.v_leak
            )));
        }
        Ok(())
    }
}

/// Membrane potentials of a layer of neurons.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState<S> {
    pub v: Vec<S>,
}

impl<S: Scalar> LifState<S> {
    pub fn new(neurons: usize, p: &LifParams<S>) -> Self {
        Self {
            v: vec![p.v_init; neurons],
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// Integrate one step of input current in place and return the spikes.
    pub fn step(&mut self, p: &LifParams<S>, input: &[S]) -> Result<Vec<bool>> {
        let mut spikes = vec![false; self.v.len()];
        self.step_into(p, input, |i| spikes[i] = true)?;
        Ok(spikes)
    }

    fn step_into(&mut self, p: &LifParams<S>, input: &[S], mut on_spike: impl FnMut(usize)) -> Result<()> {
        if input.len() != self.v.len() {
            return shape_err(format!(
                "LIF input has {} currents for {} neurons",
                input.len(),
                self.v.len()
            ));
        }
        for (i, (v, &current)) in self.v.iter_mut().zip(input).enumerate() {
            let next = *v + current - p.v_leak;
            if next > p.v_th {
                *v = S::zero();
                on_spike(i);
            } else {
                *v = next;
            }
        }
        Ok(())
    }
}

/// Functional form of a single LIF update.
pub fn lif_step<S: Scalar>(
    state: &LifState<S>,
    p: &LifParams<S>,
    input_current: &[S],
) -> Result<(LifState<S>, Vec<bool>)> {
    let mut next = state.clone();
    let spikes = next.step(p, input_current)?;
    Ok((next, spikes))
}

/// Drive a layer of `N x D` neurons with a `T x N x D` current tensor, one
/// time point after another.
pub fn fire_layer<S: Scalar>(
    currents: &Tensor3<S>,
    p: &LifParams<S>,
    state: &mut LifState<S>,
) -> Result<SpikeTensor> {
    let (t, n, d) = currents.dims();
    if state.len() != n * d {
        return shape_err(format!(
            "LIF state holds {} neurons, currents need {}",
            state.len(),
            n * d
        ));
    }
    let mut out = SpikeTensor::zeros(t, n, d)?;
    for ti in 0..t {
        state.step_into(p, currents.time_slice(ti), |i| out.set(ti, i / d, i % d, true))?;
    }
    Ok(out)
}
