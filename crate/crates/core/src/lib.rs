//! Hybrid task allocation for mobile crowd sensing.
//!
//! A shared incentive budget pays two kinds of workers. Opportunistic workers
//! are chosen ahead of time from their connection histories and complete
//! tasks at towers they happen to pass. Participatory workers are assigned
//! open tasks at a fixed online time and travel to them. The offline choice of
//! opportunistic workers is scored by simulating the online phase it leaves
//! behind.
//!
//! [`selection`] holds the strategies and [`experiment`] runs parameter sweeps
//! over them.

pub mod dataio;
pub mod entropy;
pub mod experiment;
pub mod flow;
pub mod mobility;
pub mod model;
pub mod montecarlo;
pub mod replay;
pub mod selection;
