use anyhow::{bail, Result};
use epm_core::{EpmModel, GrayImage, PartLocation, Selection};

/// Whether the centre of pixel `(x, y)` lies in `loc`, half-open.
fn covers(loc: &PartLocation, x: usize, y: usize, w: usize, h: usize) -> bool {
    let fx = (x as f64 + 0.5) / w as f64;
    let fy = (y as f64 + 0.5) / h as f64;
    fx >= loc.x1 && fx < loc.x2 && fy >= loc.y1 && fy < loc.y2
}

/// Composite of the regions that scored an image: each pixel is the mean of
/// the image over the chosen part boxes covering it, 0 where none does.
///
/// All boxes come from the same image, so covered pixels keep their value.
pub fn visualize_selection(img: &GrayImage, sel: &Selection, model: &EpmModel) -> Result<GrayImage> {
    if sel.is_empty() {
        bail!("cannot draw an empty selection");
    }
    let locs: Vec<&PartLocation> = sel
        .chosen
        .iter()
        .map(|&p| model.parts.get(p).map(|part| &part.location))
        .collect::<Option<_>>()
        .ok_or_else(|| anyhow::anyhow!("selection refers to a part the model does not have"))?;
    let (w, h) = (img.width(), img.height());
    let mut out = GrayImage::filled(w, h, 0.0)?;
    for y in 0..h {
        for x in 0..w {
            let (mut sum, mut count) = (0.0, 0usize);
            for loc in &locs {
                if covers(loc, x, y, w, h) {
                    sum += img.get(x, y);
                    count += 1;
                }
            }
            if count > 0 {
                out.set(x, y, sum / count as f64);
            }
        }
    }
    Ok(out)
}
