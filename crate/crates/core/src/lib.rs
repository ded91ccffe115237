//! Learning pixelwise object-placement distributions for spatial relations
//! from relation-classification labels alone.
//!
//! An auxiliary classifier ([`relnet`]) learns the relation between two
//! objects from an image and two attention masks. Implanting a subject's
//! intermediate features into a scene's feature map lets that classifier
//! judge scenes that were never rendered; those judgements supervise an
//! encoder-decoder ([`spatial`]) that predicts one placement map per
//! relation. [`scenes`] supplies a procedural tabletop world with exact
//! relation labels, and [`eval`] scores predicted distributions.

pub mod checkpoint;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod relation;
pub mod relnet;
pub mod scenes;
pub mod spatial;

pub use error::{Error, Result};
pub use relation::Relation;
