//! Pinhole projection, soft rasterisation and image IO.

mod camera;
mod hard;
mod image_io;
mod raster;

pub use camera::{Camera, Projected, NEAR_EPS};
pub use hard::{render_hard, Layer};
pub use image_io::{
    read_f32_le, write_f32_le, write_gray_png, MaskImage, RgbImage, LABEL_BACKGROUND, LABEL_HAND,
    LABEL_OBJECT,
};
pub use raster::{
    hard_coverage, rasterize_gradient, rasterize_soft, signed_distance_2d, RenderSettings, SoftImage,
};
