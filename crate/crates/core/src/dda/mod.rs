//! Dual-query cross attention: depth-aware positional encoding, deformable
//! sampling of camera features driven by both queries, gated exchange
//! between the two query streams, and the camera-feature enhancement that
//! runs before the transformer.

mod agfn;
mod deformable;
mod gate;
mod layer;
mod pe;

pub use agfn::{agfn, agfn_splat, AgfnParams};
pub use deformable::{deformable_attend, deformable_attend_detailed, DdaLayerParams, DeformableOutput};
pub use gate::{gated_fuse, gated_fuse_detailed, GateOutput};
pub use layer::{dual_fusion_layer, DualQuerySet, References};
pub use pe::{depth_pe, depth_pe_values};
