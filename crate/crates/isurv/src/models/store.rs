//! Versioned model persistence.
//!
//! Models serialize to JSON with shortest round-tripping float encoding, so a
//! reloaded model reproduces bit-identical predictions and two runs with the
//! same seed produce byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::train::TrainedModel;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    model: TrainedModel,
}

pub fn model_to_string(model: &TrainedModel) -> Result<String> {
    let file = ModelFile { format_version: FORMAT_VERSION, model: model.clone() };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::write(path, model_to_string(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile = serde_json::from_str(&text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "unsupported model format version {} (expected {FORMAT_VERSION})",
            file.format_version
        )));
    }
    Ok(file.model)
}
