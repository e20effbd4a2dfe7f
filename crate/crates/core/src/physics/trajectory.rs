//! Field-free-point trajectory: serpentine focus-field raster plus a
//! sinusoidal drive excursion along `z`.
//!
//! Rows run along `x` (alternating direction) and are joined by short
//! segments along `+y`, traversed at the same speed, so the focus position is
//! continuous and the map from time to `(x, y)` is injective within a slab.

use std::f64::consts::PI;

use super::scanner::ScannerConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// Along row `line`.
    Row { line: usize },
    /// Joining row `line` to row `line + 1`.
    Connector { line: usize },
    /// Past the end of the raster; the focus field holds its last position.
    Hold,
}

/// Geometry of the serpentine raster of one slab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Raster {
    pub x_start: f64,
    pub x_end: f64,
    pub y_start: f64,
    pub line_spacing: f64,
    pub lines: usize,
    pub speed: f64,
}

impl Raster {
    pub fn from_config(cfg: &ScannerConfig) -> Raster {
        Raster {
            x_start: -cfg.fov[0] / 2.0,
            x_end: cfg.fov[0] / 2.0,
            y_start: -cfg.fov[1] / 2.0,
            line_spacing: cfg.line_spacing(),
            lines: cfg.raster_lines,
            speed: cfg.shift_rate,
        }
    }

    pub fn row_length(&self) -> f64 {
        (self.x_end - self.x_start).abs()
    }

    pub fn path_length(&self) -> f64 {
        self.lines as f64 * self.row_length() + self.lines.saturating_sub(1) as f64 * self.line_spacing
    }

    /// Locates path arc length `s`: segment and distance along it.
    fn locate(&self, s: f64) -> (Segment, f64) {
        let row = self.row_length();
        let cell = row + self.line_spacing;
        let s = s.max(0.0);
        if s >= self.path_length() {
            return (Segment::Hold, 0.0);
        }
        let line = if cell > 0.0 {
            ((s / cell).floor() as usize).min(self.lines - 1)
        } else {
            0
        };
        let local = s - line as f64 * cell;
        if local < row || line + 1 == self.lines {
            (Segment::Row { line }, local.min(row))
        } else {
            (Segment::Connector { line }, local - row)
        }
    }

    /// Position and velocity in the `xy` plane at time `t` (seconds from raster start).
    pub fn state(&self, t: f64) -> (Segment, [f64; 2], [f64; 2]) {
        let s = t * self.speed;
        let (seg, local) = self.locate(s);
        let dir = |line: usize| if line % 2 == 0 { 1.0 } else { -1.0 };
        let row_x = |line: usize, local: f64| {
            if line % 2 == 0 {
                self.x_start + local
            } else {
                self.x_end - local
            }
        };
        match seg {
            Segment::Row { line } => {
                let y = self.y_start + line as f64 * self.line_spacing;
                (seg, [row_x(line, local), y], [dir(line) * self.speed, 0.0])
            }
            Segment::Connector { line } => {
                let x = row_x(line, self.row_length());
                let y = self.y_start + line as f64 * self.line_spacing + local;
                (seg, [x, y], [0.0, self.speed])
            }
            Segment::Hold => {
                let last = self.lines - 1;
                let x = row_x(last, self.row_length());
                let y = self.y_start + last as f64 * self.line_spacing;
                (seg, [x, y], [0.0, 0.0])
            }
        }
    }
}

/// Slab scan duration: the raster path rounded up to whole drive periods.
pub fn slab_duration(cfg: &ScannerConfig) -> f64 {
    let raster = Raster::from_config(cfg);
    let periods = (raster.path_length() / raster.speed * cfg.drive_frequency).ceil().max(1.0);
    periods / cfg.drive_frequency
}

/// Number of receive samples per slab.
pub fn slab_samples(cfg: &ScannerConfig) -> usize {
    let periods = (slab_duration(cfg) * cfg.drive_frequency).round() as usize;
    periods * cfg.samples_per_period()
}

fn slab_z(cfg: &ScannerConfig, slab_index: usize) -> Result<f64> {
    cfg.z_slab_positions.get(slab_index).copied().ok_or_else(|| {
        Error::Range(format!(
            "slab index {slab_index} out of range ({} slabs)",
            cfg.z_slab_positions.len()
        ))
    })
}

/// FFP position at time `t` within slab `slab_index`.
pub fn ffp_position(t: f64, cfg: &ScannerConfig, slab_index: usize) -> Result<[f64; 3]> {
    let z = slab_z(cfg, slab_index)?;
    let (_, xy, _) = Raster::from_config(cfg).state(t);
    let drive = cfg.excursion() * (2.0 * PI * cfg.drive_frequency * t).sin();
    Ok([xy[0], xy[1], z + drive])
}

/// FFP velocity at time `t`, the analytic derivative of [`ffp_position`].
pub fn ffp_velocity(t: f64, cfg: &ScannerConfig, slab_index: usize) -> Result<[f64; 3]> {
    slab_z(cfg, slab_index)?;
    let (_, _, v) = Raster::from_config(cfg).state(t);
    let w = 2.0 * PI * cfg.drive_frequency;
    Ok([v[0], v[1], cfg.excursion() * w * (w * t).cos()])
}

/// Raster segment occupied at time `t`.
pub fn raster_segment(t: f64, cfg: &ScannerConfig) -> Segment {
    Raster::from_config(cfg).state(t).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScannerConfig {
        let mut c = ScannerConfig::default();
        c.fov = [0.01, 0.004, 0.01];
        c.raster_lines = 5;
        c.z_slab_positions = vec![0.0, 0.002];
        c
    }

    #[test]
    fn starts_at_raster_corner() {
        let c = cfg();
        let p = ffp_position(0.0, &c, 0).unwrap();
        assert_eq!(p, [-0.005, -0.002, 0.0]);
    }

    #[test]
    fn quarter_period_reaches_full_excursion() {
        let mut c = cfg();
        c.shift_rate = 1e-12;
        let p = ffp_position(0.25 / c.drive_frequency, &c, 1).unwrap();
        assert!((p[2] - 0.002 - c.excursion()).abs() < 1e-15);
    }

    #[test]
    fn velocity_at_zero() {
        let c = cfg();
        let v = ffp_velocity(0.0, &c, 0).unwrap();
        let expected = 2.0 * PI * c.drive_frequency * c.excursion();
        assert!((v[2] - expected).abs() < 1e-12 * expected);
        assert_eq!(v[0], c.shift_rate);
    }

    #[test]
    fn zero_drive_leaves_shift_velocity() {
        let mut c = cfg();
        c.drive_amplitude = 0.0;
        let t = 0.3 * slab_duration(&c);
        let v = ffp_velocity(t, &c, 0).unwrap();
        assert_eq!(v[2], 0.0);
        assert!(((v[0].powi(2) + v[1].powi(2)).sqrt() - c.shift_rate).abs() < 1e-15);
    }

    #[test]
    fn slab_index_checked() {
        assert!(ffp_position(0.0, &cfg(), 2).is_err());
        assert!(ffp_velocity(0.0, &cfg(), 7).is_err());
    }

    #[test]
    fn matches_discrete_step_integration() {
        // Integrate the velocity with small steps and compare to the closed form.
        let c = cfg();
        let t_end = 0.6 * slab_duration(&c);
        let n = 200_000;
        let dt = t_end / n as f64;
        let mut p = ffp_position(0.0, &c, 0).unwrap();
        for i in 0..n {
            let v = ffp_velocity((i as f64 + 0.5) * dt, &c, 0).unwrap();
            for a in 0..3 {
                p[a] += v[a] * dt;
            }
        }
        let q = ffp_position(t_end, &c, 0).unwrap();
        // midpoint steps straddling a row turn are off by at most one step length
        let tol = c.shift_rate * dt;
        for a in 0..3 {
            assert!((p[a] - q[a]).abs() < tol, "axis {a}: {} vs {}", p[a], q[a]);
        }
    }

    #[test]
    fn velocity_is_derivative_of_position() {
        let c = cfg();
        let dur = slab_duration(&c);
        let h = 1e-9;
        for i in 1..50 {
            let t = dur * i as f64 / 50.3;
            // skip samples straddling a segment corner
            if raster_segment(t - h, &c) != raster_segment(t + h, &c) {
                continue;
            }
            let v = ffp_velocity(t, &c, 0).unwrap();
            let p1 = ffp_position(t + h, &c, 0).unwrap();
            let p0 = ffp_position(t - h, &c, 0).unwrap();
            let scale = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
            for a in 0..3 {
                let fd = (p1[a] - p0[a]) / (2.0 * h);
                assert!((fd - v[a]).abs() <= 1e-6 * scale, "t={t} axis {a}: {fd} vs {}", v[a]);
            }
        }
    }

    #[test]
    fn raster_is_injective_in_xy() {
        let c = cfg();
        let n = slab_samples(&c) / c.samples_per_period();
        let mut seen: Vec<[i64; 2]> = Vec::new();
        for i in 0..n {
            let t = i as f64 / c.drive_frequency;
            if raster_segment(t, &c) == Segment::Hold {
                break;
            }
            let p = ffp_position(t, &c, 0).unwrap();
            let key = [(p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64];
            assert!(!seen.contains(&key));
            seen.push(key);
        }
    }
}
