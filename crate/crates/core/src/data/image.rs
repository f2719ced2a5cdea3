use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{read_tensor, Tensor};

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Loads an 8- or 16-bit, 1- or 3-channel PNG as a 1×C×H×W tensor in [0, 1]
/// (RGB order).
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, values): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        other => {
            return Err(image_err(
                path,
                format!("unsupported pixel format {:?}; expected 8/16-bit gray or RGB", other.color()),
            ))
        }
    };
    Ok(Tensor::from_fn([1, c, h, w], |_, ch, y, x| T::of(values[(y * w + x) * c + ch])))
}

fn check_saveable<T: Scalar>(path: &Path, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let [n, c, h, w] = x.shape();
    if n != 1 || !(c == 1 || c == 3) {
        return Err(image_err(path, format!("cannot save tensor of shape {:?} as an image", x.shape())));
    }
    Ok((c, h, w))
}

fn interleave<T: Scalar, P>(x: &Tensor<T>, c: usize, h: usize, w: usize, scale: f64) -> Vec<P>
where
    P: num_traits::FromPrimitive,
{
    let mut out = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                let v = x.at(0, ch, y, xx).to_f64_lossy().clamp(0.0, 1.0);
                out.push(P::from_f64((v * scale).round()).expect("in range"));
            }
        }
    }
    out
}

/// PNG bytes of a 1×C×H×W tensor (C = 1 or 3), clamped to [0, 1], at 8 or
/// 16 bits per sample.
pub fn encode_png<T: Scalar>(x: &Tensor<T>, bits16: bool) -> Result<Vec<u8>> {
    let here = Path::new("<memory>");
    let (c, h, w) = check_saveable(here, x)?;
    let (w32, h32) = (w as u32, h as u32);
    let img = match (c, bits16) {
        (1, false) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, interleave(x, c, h, w, 255.0)).expect("sized"),
        ),
        (_, false) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, interleave(x, c, h, w, 255.0)).expect("sized"),
        ),
        (1, true) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, interleave(x, c, h, w, 65535.0)).expect("sized"),
        ),
        (_, true) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, interleave(x, c, h, w, 65535.0)).expect("sized"),
        ),
    };
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| image_err(here, e))?;
    Ok(out.into_inner())
}

fn save(path: &Path, x: &Tensor<impl Scalar>, bits16: bool) -> Result<()> {
    check_saveable(path, x)?;
    let bytes = encode_png(x, bits16)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a 1×C×H×W tensor (C = 1 or 3) as an 8-bit PNG, clamping to [0, 1].
pub fn save_image<T: Scalar>(path: impl AsRef<Path>, x: &Tensor<T>) -> Result<()> {
    save(path.as_ref(), x, false)
}

/// 16-bit variant of [`save_image`].
pub fn save_image16<T: Scalar>(path: impl AsRef<Path>, x: &Tensor<T>) -> Result<()> {
    save(path.as_ref(), x, true)
}

/// Depth from an EIDTNSR1 file, or from a grayscale PNG scaled to `[0, d_max]`.
pub fn load_depth<T: Scalar>(path: impl AsRef<Path>, d_max: f64) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if !is_png {
        return read_tensor(path);
    }
    let t: Tensor<T> = load_image(path)?;
    if t.shape()[1] != 1 {
        return Err(image_err(path, "depth PNG must be single-channel"));
    }
    let s = T::of(d_max);
    Ok(t.map(|v| v * s))
}

/// PNG files of a directory, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let png = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if p.is_file() && png {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Every PNG in `dir`; all must share the first image's shape.
pub fn load_image_dir<T: Scalar>(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, Tensor<T>)>> {
    let dir = dir.as_ref();
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Empty(format!("no PNG images in {}", dir.display())));
    }
    let mut out: Vec<(PathBuf, Tensor<T>)> = Vec::with_capacity(paths.len());
    for p in paths {
        let t = load_image(&p)?;
        if let Some((first, f)) = out.first() {
            if f.shape() != t.shape() {
                return Err(image_err(
                    &p,
                    format!(
                        "size {:?} differs from {:?} of {}",
                        &t.shape()[1..],
                        &f.shape()[1..],
                        first.display()
                    ),
                ));
            }
        }
        out.push((p, t));
    }
    Ok(out)
}
