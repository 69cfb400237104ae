//! Versioned on-disk bundle of a fitted pipeline.
//!
//! One JSON file carries the template, the PCA model, the quantile
//! potentials, and the training embeddings with their latent scores. The
//! file pins the container format version and the tangent flattening order,
//! and stores a SHA-256 digest of the template so silent edits are caught
//! at load time. Serialization is deterministic: saving the same container
//! twice produces byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::depth::Pipeline;
use crate::error::{Error, Result};
use crate::histogram::ImageHistogram;
use crate::lot::TangentVector;

/// Bump when the serialized layout changes incompatibly.
pub const CONTAINER_VERSION: u32 = 1;

/// The one flattening order used everywhere: template pixels in row-major
/// order, row displacement before column displacement.
pub const FLATTEN_ORDER: &str = "row-major [dr0, dc0, dr1, dc1, ...]";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelContainer {
    version: u32,
    flatten_order: String,
    /// Hex SHA-256 over the template grid dimensions and weights.
    template_digest: String,
    pipeline: Pipeline,
    /// Tangent embeddings of the training images, input order.
    embeddings: Vec<TangentVector>,
    /// Latent scores of the training images, input order.
    latents: Vec<Vec<f64>>,
}

fn template_digest(image: &ImageHistogram) -> String {
    let mut hasher = Sha256::new();
    hasher.update((image.grid().height() as u64).to_le_bytes());
    hasher.update((image.grid().width() as u64).to_le_bytes());
    for w in image.weights() {
        hasher.update(w.to_le_bytes());
    }
    let bytes = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in bytes {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

impl ModelContainer {
    pub fn new(
        pipeline: Pipeline,
        embeddings: Vec<TangentVector>,
        latents: Vec<Vec<f64>>,
    ) -> Result<ModelContainer> {
        if embeddings.len() != latents.len() {
            return Err(Error::InvalidArgument(format!(
                "{} embeddings but {} latent rows",
                embeddings.len(),
                latents.len()
            )));
        }
        let template_digest = template_digest(pipeline.template().image());
        Ok(ModelContainer {
            version: CONTAINER_VERSION,
            flatten_order: FLATTEN_ORDER.to_string(),
            template_digest,
            pipeline,
            embeddings,
            latents,
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn template_digest(&self) -> &str {
        &self.template_digest
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn into_pipeline(self) -> Pipeline {
        self.pipeline
    }

    pub fn embeddings(&self) -> &[TangentVector] {
        &self.embeddings
    }

    pub fn latents(&self) -> &[Vec<f64>] {
        &self.latents
    }

    /// Serialize to pretty JSON; deterministic for fixed content.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Container(format!("serialize: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_json()?.as_bytes())?;
        Ok(())
    }

    /// Load and verify version, flattening order, digest and shape.
    pub fn load(path: &Path) -> Result<ModelContainer> {
        let text = std::fs::read_to_string(path)?;
        let container: ModelContainer = serde_json::from_str(&text)
            .map_err(|e| Error::Container(format!("parse {}: {e}", path.display())))?;
        if container.version != CONTAINER_VERSION {
            return Err(Error::Container(format!(
                "container version {} unsupported (expected {CONTAINER_VERSION})",
                container.version
            )));
        }
        if container.flatten_order != FLATTEN_ORDER {
            return Err(Error::Container(format!(
                "container flattening order {:?} does not match {FLATTEN_ORDER:?}",
                container.flatten_order
            )));
        }
        let expect = template_digest(container.pipeline.template().image());
        if container.template_digest != expect {
            return Err(Error::Container(
                "template digest mismatch: container was edited or corrupted".to_string(),
            ));
        }
        if container.embeddings.len() != container.latents.len() {
            return Err(Error::Container(format!(
                "{} embeddings but {} latent rows",
                container.embeddings.len(),
                container.latents.len()
            )));
        }
        Ok(container)
    }
}
