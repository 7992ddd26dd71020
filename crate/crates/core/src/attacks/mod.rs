//! Decision-based attack engines and their plumbing.

pub mod augment;
pub mod ea;
pub mod evasion;
pub mod init;
pub mod session;
pub mod sfa;
pub mod space;

pub use augment::{augment_uv, AugmentParams};
pub use ea::{run_ea, EaConfig, EaSummary};
pub use evasion::{wrap_with_evasion, Evasion, EvasionMode};
pub use init::{face_texture, init_dodging, init_image_impersonation, init_impersonation};
pub use session::{AttackTrace, Metric, QueryOutcome, QuerySession, Status, TraceRecord};
pub use sfa::{run_sfa, SfaConfig, SfaSummary};
pub use space::{extract_uv_texture, make_image_space, make_uv_space, ClipRule, ImageSpace, SearchSpace, UvSpace};
