//! Box-prompted segmentation backends.
//!
//! A backend maps `(image, box)` to a binary mask of the image's size. The
//! oracle backend simulates an imperfect in-box delineation of a known ground
//! truth; the remote backend speaks the HTTP/JSON protocol of an external
//! segmentation service.

mod oracle;
mod remote;

pub use oracle::{oracle_segment, OracleBackend, OracleConfig};
pub use remote::{decode_response, encode_request, remote_segment, HealthInfo, RemoteBackend, RemoteConfig};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Image2D, Mask2D};

#[derive(Debug, Clone, Copy)]
pub struct SegmentRequest<'a> {
    pub image: &'a Image2D,
    pub bbox: BBox,
}

impl<'a> SegmentRequest<'a> {
    pub fn new(image: &'a Image2D, bbox: BBox) -> Result<Self> {
        if !image.contains_box(&bbox) {
            return Err(Error::invalid(format!(
                "box {:?} exceeds the {}x{} image",
                bbox,
                image.width(),
                image.height()
            )));
        }
        Ok(SegmentRequest { image, bbox })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentResponse {
    pub mask: Mask2D,
    /// Backend score in `[0, 1]`; 1.0 when the backend reports none.
    pub confidence: f64,
}

pub trait SegmenterBackend: Send + Sync {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<SegmentResponse>;
}

impl<T: SegmenterBackend + ?Sized> SegmenterBackend for &T {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
        (**self).segment(req)
    }
}

impl<T: SegmenterBackend + ?Sized> SegmenterBackend for Box<T> {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
        (**self).segment(req)
    }
}

/// Backend selection for batch runs: the oracle needs each sample's ground
/// truth, the remote client is shared.
#[derive(Debug, Clone)]
pub enum BackendChoice {
    Oracle(OracleConfig),
    Remote(RemoteBackend),
}

impl BackendChoice {
    pub fn for_sample(&self, gt: &Mask2D) -> Box<dyn SegmenterBackend + '_> {
        match self {
            BackendChoice::Oracle(cfg) => Box::new(OracleBackend::new(*cfg, gt.clone())),
            BackendChoice::Remote(client) => Box::new(client),
        }
    }
}

/// Dispatch to `backend` and enforce the response contract.
pub fn segment(backend: &dyn SegmenterBackend, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
    let resp = backend.segment(req)?;
    if resp.mask.dims() != req.image.dims() {
        return Err(Error::dims(req.image.dims(), resp.mask.dims()));
    }
    Ok(resp)
}
