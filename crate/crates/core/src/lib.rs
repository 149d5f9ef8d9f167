//! Discrete-event simulator for TCP congestion control over a hybrid
//! wired, infrastructure-wireless and mobile ad hoc network.

pub mod handoff;
pub mod metrics;
pub mod mobility;
pub mod net;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod tcp;
pub mod world;
