//! Mini-batch SGD with early stopping on validation loss.

use serde::{Deserialize, Serialize};

use crate::data::{batches, Splits};
use crate::error::{Error, Result};
use crate::model::MaskedModel;
use crate::params::sgd_step;
use crate::rng::Rng;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 100,
            patience: 5,
            lr: 0.1,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over a stream of validation losses. Only strict
/// improvements reset the counter.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
            stale: 0,
        }
    }

    /// Feeds the loss of the next epoch (epochs count from 1).
    pub fn observe(&mut self, loss: f64) -> Verdict {
        self.epoch += 1;
        if loss < self.best {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
            return Verdict::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            Verdict::Stop
        } else {
            Verdict::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Epochs actually run.
    pub epochs: usize,
    /// Epoch whose weights were kept (0 when no epoch ran).
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains until validation loss has not improved for `patience` epochs or
/// `max_epochs` is reached, then restores the best weights. `cycle` only
/// labels divergence errors.
pub fn train_until_early_stop<T: Real>(
    model: &mut MaskedModel<T>,
    splits: &Splits,
    cfg: &TrainConfig,
    rng: &Rng,
    cycle: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.max_epochs == 0 {
        let val = model.evaluate(&splits.val)?;
        return Ok(TrainOutcome {
            epochs: 0,
            best_epoch: 0,
            best_val_loss: val.loss,
        });
    }
    let lr = T::of(cfg.lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.snapshot();
    let mut epochs = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut order = rng.fork(&format!("epoch-{epoch}"));
        for (images, labels) in batches(&splits.train, cfg.batch_size, &mut order)? {
            let (loss, grads) = model.loss_and_grads(images.cast(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { cycle, epoch, loss });
            }
            sgd_step(model.params_mut(), &grads, lr)?;
        }
        epochs = epoch;
        let val = match model.evaluate(&splits.val) {
            Err(Error::NonFinite(_)) => {
                return Err(Error::Divergence {
                    cycle,
                    epoch,
                    loss: f64::NAN,
                })
            }
            other => other?,
        };
        match stopper.observe(val.loss) {
            Verdict::Improved => best = model.snapshot(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    model.restore(&best)?;
    log::debug!(
        "cycle {cycle}: {epochs} epochs, best epoch {} val loss {:.5}",
        stopper.best_epoch(),
        stopper.best_loss()
    );
    Ok(TrainOutcome {
        epochs,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best_loss(),
    })
}
