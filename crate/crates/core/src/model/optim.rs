use serde::{Deserialize, Serialize};

use super::params::Parameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Rmsprop,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rmsprop" => Ok(Self::Rmsprop),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected rmsprop or adam)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRateSchedule {
    Constant,
    /// Linear ramp from 0 over `warmup_steps`, then linear decay to 0 at `total_steps`.
    LinearWarmup {
        warmup_steps: usize,
        total_steps: usize,
    },
}

impl LearningRateSchedule {
    /// Multiplier applied to the base rate at optimizer step `step` (1-based).
    pub fn factor(&self, step: usize) -> f64 {
        match *self {
            Self::Constant => 1.0,
            Self::LinearWarmup {
                warmup_steps,
                total_steps,
            } => {
                if step <= warmup_steps && warmup_steps > 0 {
                    step as f64 / warmup_steps as f64
                } else if total_steps <= warmup_steps {
                    1.0
                } else {
                    let remaining = total_steps.saturating_sub(step) as f64;
                    (remaining / (total_steps - warmup_steps) as f64).max(0.0)
                }
            }
        }
    }
}

const RMS_RHO: f64 = 0.9;
const RMS_EPS: f64 = 1e-7;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state. Moment buffers mirror the parameter shapes.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    schedule: LearningRateSchedule,
    step: usize,
    first: Parameters,
    second: Parameters,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, schedule: LearningRateSchedule, like: &Parameters) -> Self {
        Self {
            kind,
            lr,
            schedule,
            step: 0,
            first: like.zeros_like(),
            second: like.zeros_like(),
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Learning rate the next call to [`Optimizer::step`] will use.
    pub fn current_lr(&self) -> f64 {
        self.lr * self.schedule.factor(self.step + 1)
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) {
        let lr = self.current_lr();
        self.step += 1;
        let t = self.step as i32;
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut());
        match self.kind {
            OptimizerKind::Rmsprop => {
                for (((p, g), _), v) in tensors {
                    ndarray::Zip::from(p).and(g).and(v).for_each(|p, &g, v| {
                        *v = RMS_RHO * *v + (1.0 - RMS_RHO) * g * g;
                        *p -= lr * g / (v.sqrt() + RMS_EPS);
                    });
                }
            }
            OptimizerKind::Adam => {
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in tensors {
                    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    });
                }
            }
        }
    }
}
