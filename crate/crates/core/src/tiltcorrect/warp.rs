use crate::error::{Error, Result};
use crate::imgcore::filter::bilinear;
use crate::imgcore::{FlowField, Image};

/// `out(p) = img(p + flow(p))`, bilinear, with sample coordinates clamped to
/// the image rectangle.
pub fn warp_image(img: &Image, flow: &FlowField) -> Result<Image> {
    if !flow.matches(img) {
        return Err(Error::DimensionMismatch(format!(
            "flow {}x{} vs image {}x{}",
            flow.width(),
            flow.height(),
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let mut out = Vec::with_capacity(w * h * img.channels());
    for c in 0..img.channels() {
        let plane = img.plane_f64(c);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = flow.at(x, y);
                out.push(bilinear(&plane, w, h, x as f64 + dx as f64, y as f64 + dy as f64) as f32);
            }
        }
    }
    Image::from_planar(w, h, img.channels(), out)
}
