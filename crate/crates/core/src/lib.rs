//! Conversion of strand-based hair models into textured hair cards.
//!
//! The pipeline clusters strands, fits one quad strip per cluster, projects
//! member strands into an explicit uv-space representation on the strip,
//! optionally shares textures between similar cards, jointly refines
//! geometry and strands through a differentiable rasterizer, and finally
//! bakes tangent/depth/alpha/AO atlases.

pub mod bake;
pub mod bvh;
pub mod cardgeom;
pub mod cluster;
pub mod config;
pub mod haircap;
pub mod hairio;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optimize;
pub mod pipeline;
pub mod sdf;
pub mod softrender;
pub mod stages;
pub mod stroke;
pub mod synth;
pub mod texreduce;
pub mod texspace;
