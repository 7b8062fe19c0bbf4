//! Recipe files shipped with the binary.

use crate::config::ConfigFile;
use crate::HarnessError;

pub const RECIPES: &[(&str, &str)] = &[
    (
        "delayed_sweep",
        include_str!("../recipes/delayed_sweep.cfg"),
    ),
    (
        "windowed_sweep",
        include_str!("../recipes/windowed_sweep.cfg"),
    ),
    (
        "statekl_onoff",
        include_str!("../recipes/statekl_onoff.cfg"),
    ),
    ("lambda_sweep", include_str!("../recipes/lambda_sweep.cfg")),
    ("batch_bcq", include_str!("../recipes/batch_bcq.cfg")),
    ("batch_ddpg", include_str!("../recipes/batch_ddpg.cfg")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    RECIPES.iter().map(|(n, _)| *n)
}

pub fn text(name: &str) -> Option<&'static str> {
    RECIPES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

pub fn load(name: &str) -> Result<ConfigFile, HarnessError> {
    let t = text(name).ok_or_else(|| HarnessError::UnknownRecipe(name.into()))?;
    Ok(ConfigFile::parse(t)?)
}
