//! The chapters of the guide, compiled so that their code listings run as
//! doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
mod model {}

#[doc = include_str!("../../../book/src/optimal-filter.md")]
mod optimal_filter {}

#[doc = include_str!("../../../book/src/projection-filter.md")]
mod projection_filter {}

#[doc = include_str!("../../../book/src/information-geometry.md")]
mod information_geometry {}

#[doc = include_str!("../../../book/src/telegraph.md")]
mod telegraph {}

#[doc = include_str!("../../../book/src/experiments.md")]
mod experiments {}
