//! The user guide from `book/`, compiled here so its examples run as doc
//! tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/images.md")]
pub mod images {}

#[doc = include_str!("../../../book/src/pyramid.md")]
pub mod pyramid {}

#[doc = include_str!("../../../book/src/haar.md")]
pub mod haar {}

#[doc = include_str!("../../../book/src/recovery.md")]
pub mod recovery {}

#[doc = include_str!("../../../book/src/schemes.md")]
pub mod schemes {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
