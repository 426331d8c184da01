//! On-disk artifact formats: text grids, CSV tables, atomic writes.
//!
//! The grid format is one header line `# nx ny h ox oy` followed by `ny`
//! rows of `nx` space-separated values, row-major from the bottom row up —
//! the same order the solver stores fields in memory. Floats are printed
//! with Rust's shortest round-trip formatting, so write-then-read restores
//! every value bit-exactly. `nan` is forbidden in both directions.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use one_lap_core::grid::{GridDomain, ScalarField, VectorField};

/// Write `text` to `path` atomically: temp file in the same directory, then
/// rename. A crashed run leaves either the old artifact or none.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temp file in {}", dir.display()))?;
    tmp.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("renaming into place: {}", path.display()))?;
    Ok(())
}

/// Render a grid with the standard header. Rejects non-finite entries.
pub fn format_grid(
    nx: usize,
    ny: usize,
    h: f64,
    origin: (f64, f64),
    values: &[f64],
) -> Result<String> {
    if values.len() != nx * ny {
        bail!("grid has {} values, expected {}x{}", values.len(), nx, ny);
    }
    let mut s = String::with_capacity(values.len() * 8 + 32);
    writeln!(s, "# {nx} {ny} {h} {} {}", origin.0, origin.1).unwrap();
    for j in 0..ny {
        for i in 0..nx {
            if i > 0 {
                s.push(' ');
            }
            let v = values[j * nx + i];
            if !v.is_finite() {
                bail!("non-finite value at cell ({i}, {j}); refusing to write");
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

/// A parsed grid file: header plus raw values.
pub struct RawGrid {
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: (f64, f64),
    pub values: Vec<f64>,
}

impl RawGrid {
    fn header_matches(&self, other: &RawGrid) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.h == other.h
            && self.origin == other.origin
    }
}

/// Parse the text grid format. Errors carry the offending line number.
pub fn parse_grid(text: &str, name: &str) -> Result<RawGrid> {
    let mut lines = text.lines();
    let header = lines.next().with_context(|| format!("{name}: empty file"))?;
    let rest = header
        .strip_prefix('#')
        .with_context(|| format!("{name}:1: header must start with `#`"))?;
    let tok: Vec<&str> = rest.split_whitespace().collect();
    if tok.len() != 5 {
        bail!("{name}:1: header needs 5 fields `# nx ny h ox oy`, got {}", tok.len());
    }
    let nx: usize = tok[0].parse().with_context(|| format!("{name}:1: bad nx"))?;
    let ny: usize = tok[1].parse().with_context(|| format!("{name}:1: bad ny"))?;
    let h: f64 = tok[2].parse().with_context(|| format!("{name}:1: bad h"))?;
    let ox: f64 = tok[3].parse().with_context(|| format!("{name}:1: bad ox"))?;
    let oy: f64 = tok[4].parse().with_context(|| format!("{name}:1: bad oy"))?;
    let mut values = Vec::with_capacity(nx * ny);
    let mut rows = 0usize;
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .with_context(|| format!("{name}:{lineno}: bad value `{tok}`"))?;
            if !v.is_finite() {
                bail!("{name}:{lineno}: non-finite value `{tok}`");
            }
            values.push(v);
        }
        if values.len() - before != nx {
            bail!(
                "{name}:{lineno}: row has {} values, expected {nx}",
                values.len() - before
            );
        }
        rows += 1;
    }
    if rows != ny {
        bail!("{name}: found {rows} data rows, header says {ny}");
    }
    Ok(RawGrid { nx, ny, h, origin: (ox, oy), values })
}

/// Rebuild a scalar field from a grid file.
///
/// The original interior mask is not stored in the file; the field is
/// re-hosted on the largest legal domain (everything off the one-cell
/// left/bottom margin). All the diagnostics downstream — total variation,
/// mass, certificate residuals, level sweeps — read stored values, not the
/// mask, so they are unchanged by the re-hosting as long as the field
/// vanishes on the margin; a nonzero margin cell is rejected as corrupt.
pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let raw = parse_grid(&text, &path.display().to_string())?;
    for j in 0..raw.ny {
        for i in 0..raw.nx {
            if (i == 0 || j == 0) && raw.values[j * raw.nx + i] != 0.0 {
                bail!(
                    "{}: nonzero value at margin cell ({i}, {j}); \
                     fields are zero-extended with a one-cell margin",
                    path.display()
                );
            }
        }
    }
    let mask: Vec<bool> = (0..raw.nx * raw.ny)
        .map(|c| c % raw.nx != 0 && c / raw.nx != 0)
        .collect();
    let dom = GridDomain::from_mask(raw.nx, raw.ny, raw.h, raw.origin, mask)
        .with_context(|| format!("rebuilding the domain of {}", path.display()))?;
    ScalarField::from_values(&dom, raw.values)
        .with_context(|| format!("validating {}", path.display()))
}

/// Rebuild a vector field from its two component files, on `dom`.
pub fn read_vector(dom: &Arc<GridDomain>, px: &Path, py: &Path) -> Result<VectorField> {
    let tx = fs::read_to_string(px).with_context(|| format!("reading {}", px.display()))?;
    let ty = fs::read_to_string(py).with_context(|| format!("reading {}", py.display()))?;
    let rx = parse_grid(&tx, &px.display().to_string())?;
    let ry = parse_grid(&ty, &py.display().to_string())?;
    if !rx.header_matches(&ry) {
        bail!("{} and {} have different headers", px.display(), py.display());
    }
    if rx.nx != dom.nx() || rx.ny != dom.ny() || rx.h != dom.h() || rx.origin != dom.origin() {
        bail!(
            "{}: header does not match the scalar field's grid ({}x{}, h = {})",
            px.display(),
            dom.nx(),
            dom.ny(),
            dom.h()
        );
    }
    VectorField::from_components(dom, rx.values, ry.values)
        .with_context(|| format!("validating {} / {}", px.display(), py.display()))
}
