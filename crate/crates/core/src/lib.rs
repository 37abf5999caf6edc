//! Data, simulator and scripted expert for the visuotactile insertion lab.

pub mod data;
pub mod expert;
pub mod modality;
pub mod sim;

pub use modality::{ModalityMask, View};
