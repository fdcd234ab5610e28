//! Low-bitrate talking-head codec built on a blendshape head model and a
//! Gaussian-splat avatar.
//!
//! The crate is organized around the transmission pipeline: a linear
//! blendshape head ([`head`]), a fixed Gaussian point set with an
//! expression-conditioned offset network ([`avatar`]), a CPU reference
//! rasterizer with quality metrics ([`render`]), a per-frame facial-parameter
//! bitstream codec ([`param`]), a compact compressed container for the avatar
//! ([`model`]), and end-to-end session orchestration ([`session`]).

pub mod avatar;
pub mod bits;
pub mod head;
pub mod math;
pub mod model;
pub mod param;
pub mod render;
pub mod session;
pub mod wire;

pub use avatar::{Anchor, Avatar, ComposedGaussians, GaussianSet, OffsetNetwork};
pub use head::{BlendshapeHead, FlameParams, ThetaSplit};
pub use model::{ContainerConfig, LatentBank, PackReport, PrunedMlp, QuantizedAttr};
pub use param::{CodedFrame, FrameType, ParamSequence, StreamHeader};
pub use render::{Camera, Image, RenderOutput};
pub use session::{RdPoint, SessionConfig};
