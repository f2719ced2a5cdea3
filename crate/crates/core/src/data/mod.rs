//! Synthetic benchmark scenes, PNG and depth I/O, and full-reference metrics.

mod image;
mod metrics;
mod scene;

pub use image::{encode_png, list_images, load_depth, load_image, load_image_dir, save_image, save_image16};
pub use metrics::{evaluate_pairs, psnr, ssim, ImageMetric, MetricReport, Psnr};
pub use scene::{MANIFEST, 
    depth_gradient_bound, max_depth_gradient, quantize, smooth_image, synth_dataset, synth_depth, synth_scene,
    verify_dataset, load_dataset, HazeRange, Manifest, ManifestEntry, ManifestSpec, SceneSpec, ShapeKind,
};
