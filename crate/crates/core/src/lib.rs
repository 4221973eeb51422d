pub mod agent;
pub mod cognition;
pub mod compare;
pub mod dataplane;
pub mod executor;
pub mod membership;
pub mod metrics;
pub mod model;
pub mod registry;
pub mod runner;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod wire;
