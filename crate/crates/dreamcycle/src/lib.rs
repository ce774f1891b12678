//! Day/night dream-cycle learning for a rule-driven robot.
//!
//! By day a lightweight IF-DO-THEN controller steers a simulated robot and
//! records everything it senses and does into append-only experience logs.
//! By night the logs are replayed as stimulation of a spiking neural network
//! with neuromodulated plasticity (pain drives a pain modulator, charging
//! drives dopamine) and the network's binned activations are mined back
//! into temporal-probabilistic rules. The difference against the robot's
//! current rule set ships as a patch, closing the loop.
//!
//! Module map:
//! - [`experience`]: sensor frames, events, append-only logs (`.explog`).
//! - [`rules`]: the rule model, deterministic matching, patches.
//! - [`world`]: deterministic grid world, sensors, episode runner.
//! - [`snn`]: LIF network, STDP eligibility, dopamine consolidation,
//!   emotional appraisal.
//! - [`translate`]: experience → stimulation plans (rates, pain, dopamine).
//! - [`reverse`]: activations → chains → rules → patch (three passes).
//! - [`night`]: the standard brain layout and the full night pipeline.
//! - [`dream`]: day/night alternation with checkpointed state.
//! - [`config`]: the machine-readable parameter ledger.

pub mod action;
pub mod config;
pub mod dream;
pub mod experience;
pub mod night;
pub mod reverse;
pub mod rules;
pub mod seed;
pub mod snn;
pub mod translate;
pub mod world;

pub use action::ActionId;
