use super::exploration::ExplorationOutcome;
use super::replication::ReplicationAllocation;
use crate::emulator::HetGpModel;
use crate::error::{Error, Result};
use crate::posterior::{integrated_variance_from, ObservationModel, ReferencePredictions};

/// The batch actually sent to the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum AcquisitionBatch {
    Replicate(ReplicationAllocation),
    Explore(super::ExplorationBatch),
}

impl AcquisitionBatch {
    pub fn evaluations(&self) -> usize {
        match self {
            AcquisitionBatch::Replicate(a) => a.total(),
            AcquisitionBatch::Explore(e) => e.new_params.len() * e.reps_each,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AcquisitionBatch::Replicate(_) => "replicate",
            AcquisitionBatch::Explore(_) => "explore",
        }
    }
}

/// Outcome of the per-stage comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyChoice {
    pub batch: AcquisitionBatch,
    /// Integrated posterior variance predicted for the replication batch.
    pub replication_ivar: f64,
    /// Integrated posterior variance predicted for the exploration batch.
    pub exploration_ivar: f64,
}

/// Pick whichever hypothetical batch leaves the lower integrated posterior
/// variance. The emulator mean is held at its current value on both sides;
/// the replication side refactors `K(a + delta)` exactly and the exploration
/// side uses the composed fantasy updates. Ties go to replication.
pub fn select_strategy(
    replication: ReplicationAllocation,
    exploration: ExplorationOutcome,
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> Result<StrategyChoice> {
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    let current = ReferencePredictions::new(model, reference);
    let rep_model = model.with_extra_reps(&replication.delta)?;
    let rep_vars = ReferencePredictions::new(&rep_model, reference).var;
    let exp_vars = ReferencePredictions::new(&exploration.model, reference).var;
    let replication_ivar = integrated_variance_from(&current.mean, &rep_vars, obs, reference);
    let exploration_ivar = integrated_variance_from(&current.mean, &exp_vars, obs, reference);
    let batch = if exploration_ivar < replication_ivar {
        AcquisitionBatch::Explore(exploration.batch)
    } else {
        AcquisitionBatch::Replicate(replication)
    };
    Ok(StrategyChoice {
        batch,
        replication_ivar,
        exploration_ivar,
    })
}
