//! Bundled maps, one per scenario kind.

use crate::map::{load_network, MapError, RoadNetwork};

pub const NAMES: [&str; 4] = [
    "main_road_4arm",
    "right_before_left_4arm",
    "roundabout_4arm",
    "narrowing",
];

pub fn document(name: &str) -> Option<&'static str> {
    Some(match name {
        "main_road_4arm" => include_str!("../fixtures/main_road_4arm.json"),
        "right_before_left_4arm" => include_str!("../fixtures/right_before_left_4arm.json"),
        "roundabout_4arm" => include_str!("../fixtures/roundabout_4arm.json"),
        "narrowing" => include_str!("../fixtures/narrowing.json"),
        _ => return None,
    })
}

pub fn load(name: &str) -> Result<RoadNetwork, MapError> {
    let text = document(name).ok_or_else(|| MapError::Unknown {
        what: "map fixture",
        id: name.to_string(),
    })?;
    load_network(text)
}
