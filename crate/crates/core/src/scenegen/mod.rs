//! Synthetic BEV scenes for a labeled source domain and a shifted target
//! domain, the toy rain corruption and the source-training augmentations.

mod augment;
mod domain;
mod io;
mod rain;
mod scene;

pub use augment::{global_augment, random_object_scaling, similarity_transform, AugmentConfig};
pub use domain::{generate_dataset, sample_scene, DatasetDraw, DomainConfig, SceneDraw, MAX_PLACEMENT_ATTEMPTS};
pub use io::{format_scene_line, parse_scene_line, read_dataset, write_dataset};
#[allow(unused_imports)]
pub(crate) use io::{create, format_error, push_real, read_lines};
pub use rain::{apply_rain, RainConfig};
pub use scene::{Extent, Point, PointScene};
