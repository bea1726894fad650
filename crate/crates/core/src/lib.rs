//! Make stylized images scannable as QR codes.
//!
//! The crate covers the whole loop: a byte-mode QR encoder/decoder for
//! versions 1–5, a differentiable module-level scannability loss, a
//! padding-bit transform that bends the target code toward a reference
//! image, projected-gradient refinement of pixels, and tooling to measure
//! scanning success under simulated camera tilt.
//!
//! ```
//! use qrsr::qr::{decode, encode, rasterize, CodeConfig};
//!
//! let cfg = CodeConfig::default();
//! let code = encode(b"hello", &cfg).unwrap();
//! let image = rasterize(&code, &cfg);
//! assert_eq!(decode(&image, &cfg).unwrap().payload, b"hello");
//! ```

// `!(x > 0.0)`-style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod desk;
pub mod error;
pub mod image;
pub mod perceptual;
pub mod qart;
pub mod qr;
pub mod refine;
pub mod srl;
pub mod tilt;
pub mod verify;

pub use error::{Error, Result};
pub use image::{GridGeometry, PixelImage};
pub use qr::{CodeConfig, EcLevel, ModuleMatrix};
