//! Composition of intermittent wireless energy services from mobile IoT
//! providers to a stationary consumer.
//!
//! The crate models providers whose reachability flickers as they move,
//! derives per-request provision series, and plans which providers to draw
//! from at every tick. Four planners are available (see [`composer`]) and
//! every plan can be replayed against ground truth with
//! [`composer::evaluate_plan`].

pub mod composer;
pub mod error;
pub mod harness;
pub mod knapsack;
pub mod mobility;
pub mod model;
pub mod selection;
pub mod workload;

pub use composer::{
    compose_bruteforce, compose_fluid, compose_lossy, compose_static, evaluate_plan, Algorithm,
    CompositionContext, CompositionPlan, Composer, DeliveryReport, HeuristicConfig, Invocation,
    MergedService,
};
pub use error::{Error, Result};
pub use knapsack::{select_greedy, select_knapsack, ChunkItem, Selection, Selector};
pub use mobility::{
    derive_provision, disconnection_ratio, estimate_availability, extract_disconnections,
    stability_score, Disconnection, ProvisionMode, ProvisionSeries,
};
pub use model::{
    AvailabilityPattern, ConfinedArea, EnergyRequest, EnergyService, Location, QoS, Scenario, Tick,
    TimeGrid,
};
