//! Hybrid oil production forecasting for waterflooded fields.
//!
//! The crate couples a capacitance-resistance model (CRM) with from-scratch
//! regression learners. Both are assembled into pipeline graphs whose
//! structure is searched by an evolutionary algorithm.
//!
//! * [`ingest`]: production CSV parsing, daily resampling, splitting.
//! * [`crm`]: CRM simulation, windowed history matching, ensemble intervals.
//! * [`features`]: lagged trajectory matrices with exogenous columns.
//! * [`learners`]: naive, linear, ridge, k-NN, tree and forest regressors.
//! * [`pipeline`]: composite model graphs and their evaluation.
//! * [`evolution`]: structural search over pipelines.
//! * [`metrics`]: RMSE, DTW, Student-t intervals.
//! * [`protocol`]: the backtesting commands behind the `waterflood` binary.

pub mod crm;
pub mod evolution;
pub mod features;
pub mod ingest;
pub mod learners;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod synthetic;

mod linalg;
