//! File formats, configuration, the external predictor client and the
//! command-line front end for `crowdnav-core`.

pub mod cli;
pub mod config;
pub mod external;
pub mod io;
pub mod plot;
