//! Portable text model documents (JSON).
//!
//! Numbers are written in shortest round-trip form and parsed with correct
//! rounding, so a document read back from this writer reproduces every value
//! bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::ConvergingTopology;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Log-odds fields of the mean-field posterior.
    MfbPosterior,
    /// Real weights of the BackProp baseline.
    RealWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub kind: ModelKind,
    pub layer_widths: Vec<usize>,
    /// Per-layer row-major `V_l x K_l` arrays.
    pub layers: Vec<Vec<f64>>,
}

impl ModelDocument {
    pub fn new(kind: ModelKind, topology: &ConvergingTopology, layers: Vec<Vec<f64>>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind,
            layer_widths: topology.widths().to_vec(),
            layers,
        }
    }

    pub fn topology(&self) -> Result<ConvergingTopology> {
        ConvergingTopology::new(&self.layer_widths)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {kind:?} document, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}
