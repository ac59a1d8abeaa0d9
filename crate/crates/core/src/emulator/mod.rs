//! Heteroskedastic stochastic-kriging emulators, one per output coordinate.

mod dataset;
mod hetgp;
pub mod io;
mod model;
pub mod optim;

pub use dataset::{SimulationDataset, COINCIDENCE_TOL};
pub use hetgp::{
    fit, log_likelihood, standardize, CoordinateData, FitConfig, LikelihoodEval, LikelihoodParams,
    NUGGET_BOUNDS, RHO_BOUNDS,
};
pub use model::{
    CoordinateModel, EmulatorPrediction, HetGpModel, Hyperparameters, LatentField, Surface,
    VARIANCE_FLOOR,
};

/// Rebuild a fitted model from persisted hyperparameters and its dataset.
pub fn model_from_hyperparameters(
    data: &SimulationDataset,
    hypers: &[Hyperparameters],
) -> crate::Result<HetGpModel> {
    crate::Error::check_dim(data.d(), hypers.len())?;
    let reps: Vec<f64> = data.reps().iter().map(|a| *a as f64).collect();
    let coords = hypers
        .iter()
        .enumerate()
        .map(|(j, h)| {
            crate::Error::check_dim(data.len(), h.latent.len())?;
            CoordinateModel::from_hyperparameters(
                data.params().to_vec(),
                reps.clone(),
                data.coordinate_means(j),
                h.clone(),
            )
        })
        .collect::<crate::Result<Vec<_>>>()?;
    HetGpModel::from_coordinates(data.p(), coords)
}
