use std::io::Cursor;
use std::path::Path;

use base64::Engine;
use image::imageops::FilterType;
use image::ImageFormat;

use super::BackendError;

/// Side length of encoded images, in pixels.
pub const IMAGE_SIDE: u32 = 150;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub width: u32,
    pub height: u32,
    pub png: Vec<u8>,
}

impl EncodedImage {
    pub fn data_url(&self) -> String {
        format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(&self.png)
        )
    }
}

/// Read a raster image, resize to 150×150 and re-encode as PNG.
pub fn encode_image(path: &Path) -> Result<EncodedImage, BackendError> {
    let err = |message: String| BackendError::Image {
        path: path.display().to_string(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    encode_image_bytes(&bytes).map_err(err)
}

pub fn encode_image_bytes(bytes: &[u8]) -> Result<EncodedImage, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let resized = img.resize_exact(IMAGE_SIDE, IMAGE_SIDE, FilterType::Triangle);
    let mut png = Vec::new();
    resized
        .to_rgb8()
        .write_to(&mut Cursor::new(&mut png), ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    Ok(EncodedImage {
        width: IMAGE_SIDE,
        height: IMAGE_SIDE,
        png,
    })
}
