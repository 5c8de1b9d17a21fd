//! Built-in fixture hands used by tests, examples and the CLI demos.
//!
//! - `twig`: 2 fingers, 4 revolute joints, 1 mimic
//! - `planar2`: one planar finger, two 1 m links
//! - `inspire`: 5 fingers, 6 active / 12 full joints
//! - `oymotion`: 5 fingers, 6 active / 11 full joints
//! - `wuji`: 5 fingers, 20 independent joints

use crate::handmodel::{parse_hand_model, HandModel};

pub const TWIG: &str = include_str!("../fixtures/twig.hand.json");
pub const PLANAR2: &str = include_str!("../fixtures/planar2.hand.json");
pub const INSPIRE: &str = include_str!("../fixtures/inspire.hand.json");
pub const OYMOTION: &str = include_str!("../fixtures/oymotion.hand.json");
pub const WUJI: &str = include_str!("../fixtures/wuji.hand.json");

fn load(text: &str) -> HandModel {
    parse_hand_model(text).expect("fixture hands are valid")
}

pub fn twig() -> HandModel {
    load(TWIG)
}

pub fn planar2() -> HandModel {
    load(PLANAR2)
}

pub fn inspire() -> HandModel {
    load(INSPIRE)
}

pub fn oymotion() -> HandModel {
    load(OYMOTION)
}

pub fn wuji() -> HandModel {
    load(WUJI)
}

pub fn all() -> Vec<HandModel> {
    vec![twig(), planar2(), inspire(), oymotion(), wuji()]
}

/// Look up a fixture by name.
pub fn by_name(name: &str) -> Option<HandModel> {
    match name {
        "twig" => Some(twig()),
        "planar2" => Some(planar2()),
        "inspire" => Some(inspire()),
        "oymotion" => Some(oymotion()),
        "wuji" => Some(wuji()),
        _ => None,
    }
}
