//! Relation between flight speed, frame rate and obstacle distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightParams {
    /// m/s
    pub velocity: f64,
    /// metres
    pub d_min: f64,
    pub frames_to_react: u32,
    pub fps: f64,
}

impl FlightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.velocity >= 0.0) {
            return Err(Error::Domain(format!("velocity must be >= 0, got {}", self.velocity)));
        }
        if !(self.d_min > 0.0) {
            return Err(Error::Domain(format!("d_min must be > 0, got {}", self.d_min)));
        }
        if self.frames_to_react == 0 {
            return Err(Error::Domain("frames_to_react must be >= 1".into()));
        }
        Ok(())
    }
}

/// Distance flown between two frames.
pub fn frame_distance(velocity: f64, fps: f64) -> Result<f64> {
    if !(fps > 0.0) {
        return Err(Error::Domain(format!("fps must be > 0, got {fps}")));
    }
    Ok(velocity / fps)
}

/// Lowest frame rate that fits `frames_to_react` frames inside `d_min`.
pub fn min_fps(velocity: f64, d_min: f64, frames_to_react: u32) -> Result<f64> {
    if !(d_min > 0.0) {
        return Err(Error::Domain(format!("d_min must be > 0, got {d_min}")));
    }
    Ok(velocity * frames_to_react as f64 / d_min)
}

pub fn max_velocity(fps: f64, d_min: f64, frames_to_react: u32) -> Result<f64> {
    if !(fps >= 0.0) {
        return Err(Error::Domain(format!("fps must be >= 0, got {fps}")));
    }
    if frames_to_react == 0 {
        return Err(Error::Domain("frames_to_react must be >= 1".into()));
    }
    Ok(fps * d_min / frames_to_react as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub environment: String,
    pub fps: f64,
    pub d_min: f64,
    pub max_velocity: f64,
    pub frame_distance: f64,
}

/// Velocity table for every (environment, fps) pair.
pub fn velocity_table(fps_values: &[f64], environments: &[(String, f64)], frames_to_react: u32) -> Result<Vec<EnvelopeRow>> {
    let mut out = Vec::new();
    for (name, d_min) in environments {
        for &fps in fps_values {
            let v = max_velocity(fps, *d_min, frames_to_react)?;
            out.push(EnvelopeRow {
                environment: name.clone(),
                fps,
                d_min: *d_min,
                max_velocity: v,
                frame_distance: if fps > 0.0 { frame_distance(v, fps)? } else { 0.0 },
            });
        }
    }
    Ok(out)
}
