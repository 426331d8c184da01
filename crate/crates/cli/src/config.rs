//! Run configuration: documented defaults, TOML config files, flag overrides.
//!
//! Precedence is defaults < config file < command-line flags. The merged
//! result is one flat [`RunConfig`]; `--print-config` echoes it as TOML so a
//! run can be frozen into a reusable config file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use one_lap_core::cheeger::{cheeger_constant, cheeger_constant_disk, ConvexPolygon};
use one_lap_core::grid::ShapeSpec;
use one_lap_core::solve::ScheduleParams;

/// Everything a run needs, in the merge order documented above.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One of `solve`, `oracle`, `certify`, `sweep`; set by the subcommand.
    pub mode: String,
    /// One of `disk`, `square`, `rectangle`, `polygon`.
    pub shape: String,
    pub radius: f64,
    pub side: f64,
    pub width: f64,
    pub height: f64,
    /// Vertex file for `--shape polygon`: one `x y` pair per line,
    /// `#` comments, counterclockwise convex order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polygon_file: Option<PathBuf>,
    /// Cells across the shape's bounding box.
    pub resolution: u32,
    pub eps_start: f64,
    pub eps_factor: f64,
    pub eps_floor: f64,
    pub n_start: f64,
    pub n_factor: f64,
    pub n_stages: usize,
    pub delta_scale: f64,
    pub delta_floor: f64,
    pub cap: usize,
    pub tol_eps: f64,
    pub tol_final: f64,
    pub seed: u64,
    /// Artifact directory (created if missing).
    pub out: PathBuf,
    /// Superlevel sweep resolution.
    pub levels: usize,
    /// Gate the exit code on convergence plus certificate thresholds.
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = ScheduleParams::default();
        RunConfig {
            mode: "solve".into(),
            shape: "disk".into(),
            radius: 1.0,
            side: 1.0,
            width: 2.0,
            height: 1.0,
            polygon_file: None,
            resolution: 64,
            eps_start: s.eps_start,
            eps_factor: s.eps_factor,
            eps_floor: s.eps_floor,
            n_start: s.n_start,
            n_factor: s.n_factor,
            n_stages: s.n_stages,
            delta_scale: s.delta_scale,
            delta_floor: s.delta_floor,
            cap: s.cap,
            tol_eps: s.tol_eps,
            tol_final: s.tol_final,
            seed: 0,
            out: PathBuf::from("out"),
            levels: 32,
            strict: false,
        }
    }
}

impl RunConfig {
    /// Load a TOML config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config file {}", p.display()))
            }
        }
    }

    /// Effective configuration as TOML.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("RunConfig always serializes")
    }

    /// The solver schedule encoded by the numeric fields.
    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            eps_start: self.eps_start,
            eps_factor: self.eps_factor,
            eps_floor: self.eps_floor,
            n_start: self.n_start,
            n_factor: self.n_factor,
            n_stages: self.n_stages,
            delta_scale: self.delta_scale,
            delta_floor: self.delta_floor,
            cap: self.cap,
            tol_eps: self.tol_eps,
            tol_final: self.tol_final,
        }
    }

    /// Final-stage penalty weight of the configured schedule.
    pub fn final_n(&self) -> f64 {
        self.n_start * self.n_factor.powi(self.n_stages.saturating_sub(1) as i32)
    }

    /// The shape to rasterize.
    pub fn shape_spec(&self) -> Result<ShapeSpec> {
        match self.shape.as_str() {
            "disk" => Ok(ShapeSpec::Disk { radius: self.radius }),
            "square" => Ok(ShapeSpec::Rectangle { width: self.side, height: self.side }),
            "rectangle" => Ok(ShapeSpec::Rectangle { width: self.width, height: self.height }),
            "polygon" => {
                let path = self.polygon_file.as_deref().ok_or_else(|| {
                    anyhow!("--shape polygon needs --polygon-file <FILE>")
                })?;
                Ok(ShapeSpec::Polygon(read_polygon(path)?))
            }
            other => bail!("unknown shape `{other}`; use disk, square, rectangle, or polygon"),
        }
    }

    /// Exact Cheeger constant of the configured shape, when one is computable.
    pub fn oracle(&self) -> Option<f64> {
        match self.shape.as_str() {
            "disk" => cheeger_constant_disk(self.radius).ok(),
            "square" => rect_polygon(self.side, self.side)
                .and_then(|p| cheeger_constant(&p))
                .ok()
                .map(|r| r.h),
            "rectangle" => rect_polygon(self.width, self.height)
                .and_then(|p| cheeger_constant(&p))
                .ok()
                .map(|r| r.h),
            "polygon" => {
                let path = self.polygon_file.as_deref()?;
                let poly = read_polygon(path).ok()?;
                cheeger_constant(&poly).ok().map(|r| r.h)
            }
            _ => None,
        }
    }
}

/// Counterclockwise rectangle `(0, w) × (0, h)` as a polygon.
pub fn rect_polygon(w: f64, h: f64) -> one_lap_core::Result<ConvexPolygon> {
    ConvexPolygon::new(vec![(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)])
}

/// Parse a polygon vertex file: `x y` per line, `#` starts a comment.
pub fn read_polygon(path: &Path) -> Result<ConvexPolygon> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading polygon file {}", path.display()))?;
    let mut vertices = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 2 {
            bail!(
                "{}:{lineno}: expected `x y`, got {} fields",
                path.display(),
                tok.len()
            );
        }
        let x: f64 = tok[0]
            .parse()
            .with_context(|| format!("{}:{lineno}: bad x coordinate", path.display()))?;
        let y: f64 = tok[1]
            .parse()
            .with_context(|| format!("{}:{lineno}: bad y coordinate", path.display()))?;
        vertices.push((x, y));
    }
    ConvexPolygon::new(vertices)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}
