//! File formats: CFMP feature maps, model files, netpbm images, configs and
//! dataset manifests.

pub mod cfmp;
pub mod config;
pub mod manifest;
pub mod model_file;
pub mod netpbm;

pub use cfmp::{read_feature_file, write_feature_file};
pub use config::ConfigMap;
pub use manifest::{read_manifest, write_manifest, ManifestRow};
pub use model_file::{read_model, write_model, ModelFile};
pub use netpbm::{export_heatmap, read_pnm, write_pgm};
