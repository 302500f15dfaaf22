//! Adam optimizer over the model's named-tensor layout, plus a
//! reduce-on-plateau learning-rate schedule.
//!
//! Moment accumulators live in 64-bit floats keyed by tensor name, so the
//! update is deterministic and independent of the model's element type.

use crate::model::{ModelGrads, ZoomModel};
use crate::real::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptError {
    #[error("non-finite gradient in parameter tensor {name}")]
    NonFiniteGradient { name: String },
    #[error("optimizer state does not match the model: {detail}")]
    Layout { detail: String },
    #[error("bad optimizer hyperparameter: {detail}")]
    BadHyper { detail: String },
}

/// Adam hyperparameters. Defaults follow the common recipe with a
/// conservative base rate suited to single-sample updates.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptError> {
        let bad = |detail: String| Err(OptError::BadHyper { detail });
        // Zero is allowed: it freezes parameters while moments keep decaying.
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate {}", self.lr));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return bad(format!("{name} {beta} outside [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon {}", self.epsilon));
        }
        Ok(())
    }
}

struct Slot {
    name: String,
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam state. One slot per named tensor, in the model's declared order.
pub struct Adam {
    config: AdamConfig,
    lr: f64,
    step: u64,
    slots: Vec<Slot>,
}

impl Adam {
    /// Builds zeroed state for a `(name, length)` tensor layout.
    pub fn from_layout(
        layout: impl IntoIterator<Item = (String, usize)>,
        config: AdamConfig,
    ) -> Result<Self, OptError> {
        config.validate()?;
        let slots = layout
            .into_iter()
            .map(|(name, len)| Slot {
                name,
                first: vec![0.0; len],
                second: vec![0.0; len],
            })
            .collect();
        Ok(Self {
            lr: config.lr,
            config,
            step: 0,
            slots,
        })
    }

    /// Builds zeroed state matching `model`'s tensors.
    pub fn for_model<F: Real>(model: &ZoomModel<F>, config: AdamConfig) -> Result<Self, OptError> {
        Self::from_layout(
            model
                .named_tensors()
                .into_iter()
                .map(|(name, slice)| (name, slice.len())),
            config,
        )
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One update over explicit parameter and gradient slices, which must
    /// follow the layout the state was built from. Rejects non-finite
    /// gradients before touching any parameter, so a poisoned batch cannot
    /// corrupt the model.
    pub fn step_slices<F: Real>(
        &mut self,
        params: &mut [(String, &mut [F])],
        grads: &[(String, &[F])],
    ) -> Result<(), OptError> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(OptError::Layout {
                detail: format!(
                    "state has {} tensors, got {} params and {} grads",
                    self.slots.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (slot, ((p_name, p), (g_name, g))) in
            self.slots.iter().zip(params.iter().zip(grads.iter()))
        {
            for (name, len) in [(p_name, p.len()), (g_name, g.len())] {
                if *name != slot.name || len != slot.first.len() {
                    return Err(OptError::Layout {
                        detail: format!(
                            "expected tensor {} of length {}, got {} of length {}",
                            slot.name,
                            slot.first.len(),
                            name,
                            len
                        ),
                    });
                }
            }
            if g.iter().any(|v| !v.as_f64().is_finite()) {
                return Err(OptError::NonFiniteGradient {
                    name: slot.name.clone(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.config.beta1.powi(t);
        let bias2 = 1.0 - self.config.beta2.powi(t);
        for (slot, ((_, params), (_, grads))) in
            self.slots.iter_mut().zip(params.iter_mut().zip(grads))
        {
            for i in 0..params.len() {
                let g = grads[i].as_f64();
                slot.first[i] = self.config.beta1 * slot.first[i] + (1.0 - self.config.beta1) * g;
                slot.second[i] =
                    self.config.beta2 * slot.second[i] + (1.0 - self.config.beta2) * g * g;
                let m_hat = slot.first[i] / bias1;
                let v_hat = slot.second[i] / bias2;
                let update = self.lr * m_hat / (v_hat.sqrt() + self.config.epsilon);
                params[i] = F::from_f64(params[i].as_f64() - update);
            }
        }
        Ok(())
    }

    /// One update of a model from its accumulated gradients.
    pub fn step<F: Real>(
        &mut self,
        model: &mut ZoomModel<F>,
        grads: &ModelGrads<F>,
    ) -> Result<(), OptError> {
        let mut params = model.named_tensors_mut();
        let grads = grads.named_tensors();
        self.step_slices(&mut params, &grads)
    }
}

/// Cuts the learning rate by a fixed factor after `patience` consecutive
/// epochs without strict improvement of the monitored value (lower is
/// better). The stall counter restarts after each cut so plateaus must
/// persist to compound.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    patience: usize,
    decay: f64,
    best: Option<f64>,
    stalled: usize,
}

impl PlateauScheduler {
    pub fn new(patience: usize, decay: f64) -> Result<Self, OptError> {
        if patience == 0 {
            return Err(OptError::BadHyper {
                detail: "plateau patience must be at least 1".to_string(),
            });
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(OptError::BadHyper {
                detail: format!("plateau decay {decay} outside (0, 1)"),
            });
        }
        Ok(Self {
            patience,
            decay,
            best: None,
            stalled: 0,
        })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// Records one epoch's monitored value and reports whether the caller
    /// should cut the learning rate now.
    pub fn observe(&mut self, value: f64) -> bool {
        match self.best {
            Some(best) if value >= best => {
                self.stalled += 1;
                if self.stalled >= self.patience {
                    self.stalled = 0;
                    return true;
                }
                false
            }
            _ => {
                self.best = Some(value);
                self.stalled = 0;
                false
            }
        }
    }

    /// Convenience: observe and apply the cut to an optimizer in one call.
    /// Returns the learning rate in force after this epoch.
    pub fn observe_and_apply(&mut self, value: f64, adam: &mut Adam) -> f64 {
        if self.observe(value) {
            adam.set_learning_rate(adam.learning_rate() * self.decay);
        }
        adam.learning_rate()
    }
}
