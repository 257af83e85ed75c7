//! Cameras, ground-plane placements and up-axis oriented boxes.
//!
//! World conventions shared by the whole crate: the ground is the plane
//! `y = 0`, `+y` is up, and azimuths rotate about `+y` (counterclockwise
//! seen from above, `+x` turning toward `-z`). Object templates face `-z`.

mod camera;
mod obb;
mod placement;

pub use camera::{pitch_rotation, Camera, EYE_HEIGHT};
pub use obb::{convex_intersection_area, obb_intersects, obb_iou_3d, OrientedBox, DEFAULT_SHRINK};
pub use placement::{place_keypoints, rotate_ground, rotate_up, wrap_angle, PlacementParams};
