//! Synthetic face proxy: a blendshape head, rigid poses, pinhole cameras, a
//! perspective rasterizer for ground truth and the on-disk dataset format.

mod camera;
mod dataset;
mod error;
pub mod kv;
mod mesh;
mod model;
mod pose;
mod raster;
mod synth;

pub use camera::Camera;
pub use dataset::{Dataset, Image};
pub use error::{FaceError, Result};
pub use mesh::{apply_pose, cuboid, icosphere, vertex_normals, Mesh, Vec3, VertexNormals};
pub use model::{deform_mesh, BlendshapeModel, HEAD_CENTER, HEAD_RADIUS};
pub use pose::HeadPose;
pub use raster::{rasterize_perspective, Frame, Lighting};
pub use synth::{
    frame_params, image_path, mask_path, params_path, read_cameras, read_params, render_scene, rig, save_frame,
    scene_mesh, synth_dataset, write_cameras, FrameRecord, Split, SynthConfig, TORSO_HI, TORSO_LO,
};
