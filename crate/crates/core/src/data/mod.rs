//! Datasets on disk: PGM rasters, a JSON manifest, and synthetic phantoms.

mod manifest;
mod pgm;
mod phantom;

pub use manifest::{load_dataset, load_manifest, Dataset, DatasetManifest, LoadedSample, ManifestEntry, Split, MANIFEST_VERSION};
pub use pgm::{read_pgm, write_pgm_image, write_pgm_mask, PgmRaster};
pub use phantom::{gen_phantoms, phantom, phantom_id, PhantomSpec, BACKGROUND};
