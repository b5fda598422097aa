//! Bundled embodiments used by tests, examples and the acceptance suite.

use super::{parse_embodiment, EmbodimentError, EmbodimentSpec, Result};

pub const FIXTURE_NAMES: [&str; 6] = ["human", "planar2", "arm3", "tiago", "h1", "atlas"];

pub fn fixture_names() -> &'static [&'static str] {
    &FIXTURE_NAMES
}

fn fixture_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "human" => include_str!("../../fixtures/human.json"),
        "planar2" => include_str!("../../fixtures/planar2.json"),
        "arm3" => include_str!("../../fixtures/arm3.json"),
        "tiago" => include_str!("../../fixtures/tiago.json"),
        "h1" => include_str!("../../fixtures/h1.json"),
        "atlas" => include_str!("../../fixtures/atlas.json"),
        _ => return None,
    })
}

/// Loads a bundled embodiment by name.
pub fn fixture(name: &str) -> Result<EmbodimentSpec> {
    let text = fixture_text(name).ok_or_else(|| EmbodimentError::UnknownFixture(name.to_string()))?;
    parse_embodiment(text)
}
