//! Occupancy-map prediction beyond a LIDAR field of view.
//!
//! The pipeline: [`mapgen`] builds corridor maps, [`sim`] drives a Dubins car
//! through them with a simulated planar LIDAR, [`dataset`] crops the
//! estimated and ground-truth maps into training pairs, [`models`] and
//! [`train`] fit U-Net, ResNet and GAN predictors, and [`eval`] scores
//! predictions with SSIM.

pub mod config;
pub mod dataset;
pub mod eval;
pub mod exec;
pub mod grid;
pub mod mapgen;
pub mod models;
pub mod nn;
pub mod sim;
pub mod train;

pub use grid::{Cell, CropWindow, OccGrid, Point2};
