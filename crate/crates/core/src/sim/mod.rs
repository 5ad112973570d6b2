//! Ground-truth vehicle simulator: single-track plant with saturating tires
//! on a banked road, a sensor model, and the named test maneuvers.

pub mod plant;
pub mod scenario;
pub mod tire;

pub use plant::{plant_step, sensor_model, AxleTires, PlantInput, PlantState, SensorNoise};
pub use scenario::{generate_scenario, Scenario, ScenarioKind, ScenarioSpec, TireSpec, TruthSample};
pub use tire::{TireKind, TireModel};
