//! Versioned JSON checkpoints for trained networks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, Network};
use crate::error::{Error, Result};

const FORMAT: &str = "fracpinn-network";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    architecture: Architecture,
    parameters: Vec<f64>,
}

impl Network {
    /// Serializes the architecture and parameters. Floats are written in
    /// shortest round-trip form, so reading the text back is bit-exact.
    pub fn to_checkpoint(&self) -> Result<String> {
        let doc = Document {
            format: FORMAT.to_string(),
            version: VERSION,
            architecture: self.architecture().clone(),
            parameters: self.parameters().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(Error::Config(format!(
                "not a network checkpoint (format `{}`)",
                doc.format
            )));
        }
        if doc.version != VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {VERSION})",
                doc.version
            )));
        }
        Network::with_parameters(doc.architecture, doc.parameters)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}
