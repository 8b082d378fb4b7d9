//! Privacy accounting: tradeoff functions, GDP calibration and composition,
//! and an RDP accountant for (subsampled) Gaussian mechanisms.

mod rdp;
mod tradeoff;

pub use rdp::{
    calibrate_noise_multiplier, calibrate_sigma_q, default_orders, rdp_compose, rdp_gaussian,
    rdp_subsampled_gaussian, rdp_to_eps, rdp_to_eps_with_order, BudgetSpec, RdpProfile,
    SgdAccountingRecord,
};
pub use tradeoff::{
    calib_sigma_for_search, gaussian_sigma_for_gdp, gdp_compose, gdp_to_eps_delta,
    tradeoff_eps_delta, tradeoff_gdp, TradeoffParams,
};
