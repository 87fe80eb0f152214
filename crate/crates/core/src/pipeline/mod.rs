//! Data ingestion, configuration, image I/O and the command-line front end.

pub mod cli;
pub mod config;
pub mod image_io;
pub mod kitti;
pub mod run;
pub mod synth;

pub use config::KeyValues;
pub use run::{DataSource, RunConfig};
pub use synth::{synth_dataset, synth_scene, SceneConfig, SceneRenderer};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::ndiff::Array;

/// A target frame, its temporal neighbours and optional ground truth.
///
/// Images are `[3, H, W]` in `[0, 1]`, depth is `[H', W']` with 0 marking
/// missing values, and `poses` are `[target→prev, target→next]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTriplet {
    pub id: String,
    pub prev: Option<Array>,
    pub target: Array,
    pub next: Option<Array>,
    pub depth: Option<Array>,
    pub intrinsics: Option<Intrinsics>,
    pub poses: Option<[Pose; 2]>,
}

impl ImageTriplet {
    /// A lone frame, usable for evaluation only.
    pub fn single(id: impl Into<String>, target: Array) -> Self {
        Self { id: id.into(), prev: None, target, next: None, depth: None, intrinsics: None, poses: None }
    }

    pub fn height(&self) -> usize {
        self.target.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.target.shape()[2]
    }

    /// Source frames in `[prev, next]` order, skipping missing ones.
    pub fn sources(&self) -> Vec<&Array> {
        self.prev.iter().chain(self.next.iter()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.target.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Data(format!("{}: target {:?} is not 3xHxW", self.id, shape)));
        }
        for src in self.sources() {
            if src.shape() != shape {
                return Err(Error::Data(format!("{}: source {:?} differs from target {:?}", self.id, src.shape(), shape)));
            }
        }
        if let Some(d) = &self.depth {
            if d.ndim() != 2 {
                return Err(Error::Data(format!("{}: depth {:?} is not HxW", self.id, d.shape())));
            }
        }
        if let Some(k) = &self.intrinsics {
            k.validate()?;
        }
        Ok(())
    }
}
