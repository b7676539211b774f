pub mod adaptive;
pub mod camera;
pub mod difficulty;
pub mod editor;
pub mod embedding;
pub mod error;
pub mod image;
pub mod io;
pub mod pipeline;
pub mod scene;
pub mod scheduler;
pub mod splat;

pub use error::{Error, Result};
