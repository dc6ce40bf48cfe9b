use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::ImageDataset;
use crate::augment::RasterImage;
use crate::error::{Error, Result};

fn dataset_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads an 8-bit grayscale or RGB PNG into `[0, 1]` values.
pub fn read_png(path: &Path) -> Result<RasterImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| dataset_err(path, e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(dataset_err(
            path,
            format!("unsupported bit depth {:?}; only 8-bit images are accepted", info.bit_depth),
        ));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(dataset_err(path, format!("unsupported color type {other:?}; use 8-bit RGB or grayscale")));
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| dataset_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let out = reader.next_frame(&mut buf).map_err(|e| dataset_err(path, e.to_string()))?;
    let (w, h) = (out.width as usize, out.height as usize);
    let mut data = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(out.line_size).take(h) {
        data.extend(row[..w * channels].iter().map(|&b| b as f64 / 255.0));
    }
    RasterImage::new(h, w, channels, data)
}

/// Writes an image as an 8-bit PNG.
pub fn write_png(img: &RasterImage, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let (h, w, c) = img.dims();
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let mut writer = enc.write_header().map_err(|e| dataset_err(path, e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| dataset_err(path, e.to_string()))
}

/// Loads `<root>/<class>/*.png`. Classes are indexed in lexicographic order
/// of their folder names, files in lexicographic order within a class.
pub fn load_png_folder(root: &Path) -> Result<ImageDataset> {
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(dataset_err(root, "no class folders found"));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    let mut class_names = Vec::new();
    let mut dims = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(dataset_err(dir, "class folder contains no PNG files"));
        }
        for file in files {
            let img = read_png(&file)?;
            match dims {
                None => dims = Some(img.dims()),
                Some(d) if d != img.dims() => {
                    return Err(dataset_err(
                        &file,
                        format!("extents {:?} differ from the first image's {:?}", img.dims(), d),
                    ));
                }
                _ => {}
            }
            let stem = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            ids.push(format!("{name}/{stem}"));
            images.push(img);
            labels.push(label);
        }
        class_names.push(name);
    }
    ImageDataset::new(images, labels, ids, class_names)
}
