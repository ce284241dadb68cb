//! Sweep grid axes: `name=start:end:step` or `name=v1,v2,...`.

use anyhow::{bail, Context, Result};
use std::str::FromStr;

use harvest_core::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Snr,
    Nb,
    Area,
    Fd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub param: Param,
    pub values: Vec<f64>,
}

impl GridAxis {
    pub fn name(&self) -> &'static str {
        match self.param {
            Param::Snr => "snr",
            Param::Nb => "nb",
            Param::Area => "area",
            Param::Fd => "fd",
        }
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig, v: f64) {
        match self.param {
            Param::Snr => {
                cfg.gamma_c_db = Some(v);
                cfg.gamma_u_db = None;
            }
            Param::Nb => cfg.n_b = v.round() as usize,
            Param::Area => cfg.energy.panel_area = v,
            Param::Fd => cfg.channel.fd_norm = v,
        }
    }
}

impl FromStr for GridAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, spec) = s.split_once('=').with_context(|| format!("sweep {s:?}: expected name=values"))?;
        let param = match name.trim() {
            "snr" => Param::Snr,
            "nb" => Param::Nb,
            "area" => Param::Area,
            "fd" => Param::Fd,
            other => bail!("sweep: unknown parameter {other:?}"),
        };
        let num =
            |t: &str| -> Result<f64> { t.trim().parse().with_context(|| format!("sweep {s:?}: bad number {t:?}")) };
        let values = if spec.contains(':') {
            let parts: Vec<&str> = spec.split(':').collect();
            if parts.len() != 3 {
                bail!("sweep {s:?}: expected start:end:step");
            }
            let (start, end, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || end < start {
                bail!("sweep {s:?}: need step > 0 and end >= start");
            }
            let n = ((end - start) / step + 1e-9).floor() as usize + 1;
            (0..n).map(|k| start + k as f64 * step).collect()
        } else {
            spec.split(',').map(num).collect::<Result<Vec<_>>>()?
        };
        if values.is_empty() {
            bail!("sweep {s:?}: no values");
        }
        if param == Param::Nb && values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            bail!("sweep {s:?}: nb values must be positive integers");
        }
        Ok(GridAxis { param, values })
    }
}

/// Cartesian product in axis order, last axis fastest.
pub fn expand(axes: &[GridAxis]) -> Vec<Vec<(GridAxis, f64)>> {
    let mut points: Vec<Vec<(GridAxis, f64)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for p in &points {
            for &v in &axis.values {
                let mut q = p.clone();
                q.push((axis.clone(), v));
                next.push(q);
            }
        }
        points = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_range_has_26_points() {
        let a: GridAxis = "snr=-5:20:1".parse().unwrap();
        assert_eq!(a.values.len(), 26);
        assert_eq!(a.values[0], -5.0);
        assert_eq!(a.values[25], 20.0);
    }

    #[test]
    fn fractional_step_includes_end() {
        let a: GridAxis = "area=0.1:0.5:0.1".parse().unwrap();
        assert_eq!(a.values.len(), 5);
    }

    #[test]
    fn list_and_product() {
        let a: GridAxis = "nb=2,4,8".parse().unwrap();
        let b: GridAxis = "snr=0,10".parse().unwrap();
        let pts = expand(&[a, b]);
        assert_eq!(pts.len(), 6);
        assert_eq!(pts[1][1].1, 10.0);
        assert!(expand(&[]).len() == 1);
    }

    #[test]
    fn bad_axes_rejected() {
        assert!("pw=1:2:1".parse::<GridAxis>().is_err());
        assert!("nb=1.5".parse::<GridAxis>().is_err());
        assert!("snr=3:1:1".parse::<GridAxis>().is_err());
    }
}
