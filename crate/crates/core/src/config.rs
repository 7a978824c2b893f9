//! Pipeline parameter block shared by the CLI subcommands.

use serde::{Deserialize, Serialize};

/// Neighborhood radius (mm) used for local frame estimation.
pub const DEFAULT_RADIUS_MM: f64 = 0.6;
/// Blend band width (mm) around the fusion seam.
pub const DEFAULT_BAND_WIDTH_MM: f64 = 0.4;
/// Axial slab thickness (mm) for cross-section ellipse fits.
pub const DEFAULT_SLICE_THICKNESS_MM: f64 = 1.0;

fn default_radius() -> f64 {
    DEFAULT_RADIUS_MM
}
fn default_pitch() -> f64 {
    crate::raster::DEFAULT_PITCH_MM
}
fn default_band_width() -> f64 {
    DEFAULT_BAND_WIDTH_MM
}
fn default_slice_thickness() -> f64 {
    DEFAULT_SLICE_THICKNESS_MM
}
fn default_max_view_angle() -> f64 {
    crate::geometry::DEFAULT_MAX_VIEW_ANGLE_DEG
}
fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_pitch")]
    pub pitch: f64,
    #[serde(default = "default_band_width")]
    pub band_width: f64,
    #[serde(default = "default_slice_thickness")]
    pub slice_thickness: f64,
    #[serde(default = "default_max_view_angle")]
    pub max_view_angle_deg: f64,
    /// Seam penalty mix; defaults to the mean overlap disagreement.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS_MM,
            pitch: crate::raster::DEFAULT_PITCH_MM,
            band_width: DEFAULT_BAND_WIDTH_MM,
            slice_thickness: DEFAULT_SLICE_THICKNESS_MM,
            max_view_angle_deg: crate::geometry::DEFAULT_MAX_VIEW_ANGLE_DEG,
            lambda: None,
            seed: 42,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: PipelineConfig = serde_json::from_str(r#"{"radius": 0.8}"#).unwrap();
        assert_eq!(cfg.radius, 0.8);
        assert_eq!(cfg.pitch, crate::raster::DEFAULT_PITCH_MM);
        assert_eq!(cfg.band_width, DEFAULT_BAND_WIDTH_MM);
        assert!(cfg.lambda.is_none());
    }

    #[test]
    fn roundtrip() {
        let cfg = PipelineConfig {
            lambda: Some(0.3),
            ..Default::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: PipelineConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back.lambda, Some(0.3));
        assert_eq!(back.seed, cfg.seed);
    }
}
