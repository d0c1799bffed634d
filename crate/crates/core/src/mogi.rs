//! Point-source (Mogi) surface displacement model.
//!
//! Geometry is in km at every interface, volume change in m³ and
//! displacements in mm. Evaluation happens in meters. Vertical
//! displacement is positive up, so inflation (ΔV > 0) lifts the surface
//! and pushes stations radially outward.
//!
//! Observation vectors are flattened as the east block, then the north
//! block, then the vertical block, each in station order.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{seeded, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_POISSON: f64 = 0.25;
pub const NUM_VARIABLES: usize = 4;

const M_PER_KM: f64 = 1e3;
const MM_PER_M: f64 = 1e3;

/// One of the four inferred source variables, in normalized-vector order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    XM,
    YM,
    Depth,
    DeltaV,
}

impl Variable {
    pub const ALL: [Variable; 4] = [Variable::XM, Variable::YM, Variable::Depth, Variable::DeltaV];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::XM => "x_m",
            Variable::YM => "y_m",
            Variable::Depth => "depth",
            Variable::DeltaV => "dv",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x_m" | "xm" | "x" => Ok(Variable::XM),
            "y_m" | "ym" | "y" => Ok(Variable::YM),
            "depth" | "d" => Ok(Variable::Depth),
            "dv" | "delta_v" | "volume" => Ok(Variable::DeltaV),
            _ => Err(Error::UnknownVariable {
                name: s.to_string(),
                valid: "x_m, y_m, depth, dv".to_string(),
            }),
        }
    }
}

/// Physical range of each variable; ΔV bounds are in m³.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableBounds {
    pub x_m: [f64; 2],
    pub y_m: [f64; 2],
    pub depth: [f64; 2],
    pub dv: [f64; 2],
}

impl Default for VariableBounds {
    fn default() -> Self {
        Self {
            x_m: [-9.33, 14.35],
            y_m: [-5.80, 7.62],
            depth: [2.0, 20.0],
            dv: [-10e6, 10e6],
        }
    }
}

impl VariableBounds {
    pub fn get(&self, v: Variable) -> [f64; 2] {
        match v {
            Variable::XM => self.x_m,
            Variable::YM => self.y_m,
            Variable::Depth => self.depth,
            Variable::DeltaV => self.dv,
        }
    }

    pub fn lower(&self) -> [f64; 4] {
        Variable::ALL.map(|v| self.get(v)[0])
    }

    pub fn span(&self) -> [f64; 4] {
        Variable::ALL.map(|v| {
            let [lo, hi] = self.get(v);
            hi - lo
        })
    }

    pub fn validate(&self) -> Result<()> {
        for v in Variable::ALL {
            let [lo, hi] = self.get(v);
            if !(lo < hi) {
                return Err(Error::Config(format!("bounds for {v}: min {lo} must be < max {hi}")));
            }
        }
        if self.depth[0] <= 0.0 {
            return Err(Error::Config("depth bounds must be positive".into()));
        }
        Ok(())
    }

    /// Diagonal of the horizontal box, km.
    pub fn horizontal_diagonal(&self) -> f64 {
        (self.x_m[1] - self.x_m[0]).hypot(self.y_m[1] - self.y_m[0])
    }

    pub fn contains(&self, p: &MogiParams) -> bool {
        let inside = |v: f64, [lo, hi]: [f64; 2]| (lo..=hi).contains(&v);
        inside(p.x_m, self.x_m)
            && inside(p.y_m, self.y_m)
            && inside(p.depth, self.depth)
            && inside(p.dv, self.dv)
    }

    /// Inverse of [`rescale`].
    pub fn normalize(&self, p: &MogiParams) -> [f64; 4] {
        let z = p.as_array();
        let lo = self.lower();
        let span = self.span();
        std::array::from_fn(|i| (z[i] - lo[i]) / span[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MogiParams {
    /// km
    pub x_m: f64,
    /// km
    pub y_m: f64,
    /// km, positive down
    pub depth: f64,
    /// m³
    pub dv: f64,
    pub poisson: f64,
}

impl MogiParams {
    pub fn new(x_m: f64, y_m: f64, depth: f64, dv: f64) -> Self {
        Self {
            x_m,
            y_m,
            depth,
            dv,
            poisson: DEFAULT_POISSON,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_m, self.y_m, self.depth, self.dv]
    }

    pub fn get(&self, v: Variable) -> f64 {
        self.as_array()[v.index()]
    }

    pub fn set(&mut self, v: Variable, value: f64) {
        match v {
            Variable::XM => self.x_m = value,
            Variable::YM => self.y_m = value,
            Variable::Depth => self.depth = value,
            Variable::DeltaV => self.dv = value,
        }
    }

    /// α = (1 − ν)·ΔV/π, m³.
    pub fn strength(&self) -> f64 {
        (1.0 - self.poisson) * self.dv / PI
    }
}

/// Maps normalized variables in [0, 1] to physical units.
pub fn rescale(eta: &[f64; 4], bounds: &VariableBounds) -> Result<MogiParams> {
    for (index, &value) in eta.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfUnitRange { index, value });
        }
    }
    let lo = bounds.lower();
    let span = bounds.span();
    let z: [f64; 4] = std::array::from_fn(|i| span[i] * eta[i] + lo[i]);
    Ok(MogiParams::new(z[0], z[1], z[2], z[3]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub x_km: f64,
    pub y_km: f64,
}

/// Ordered station list; the order fixes observation-vector flattening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationGeometry {
    stations: Vec<Station>,
}

impl StationGeometry {
    pub fn new(stations: Vec<Station>) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::Config("station geometry is empty".into()));
        }
        let mut seen = HashSet::new();
        for s in &stations {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("duplicate station id `{}`", s.id)));
            }
            if !(s.x_km.is_finite() && s.y_km.is_finite()) {
                return Err(Error::Config(format!("station `{}` has non-finite coordinates", s.id)));
            }
        }
        Ok(Self { stations })
    }

    /// `n` stations on a jittered grid covering the horizontal box.
    pub fn default_layout(n: usize, bounds: &VariableBounds, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("station count must be positive".into()));
        }
        let mut rng = seeded(seed, 0x57a7);
        let cols = (n as f64).sqrt().ceil() as usize + 1;
        let rows = n.div_ceil(cols);
        let [x0, x1] = bounds.x_m;
        let [y0, y1] = bounds.y_m;
        let (cw, rh) = ((x1 - x0) / cols as f64, (y1 - y0) / rows as f64);
        let stations = (0..n)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                let jx: f64 = rng.random_range(0.15..0.85);
                let jy: f64 = rng.random_range(0.15..0.85);
                Station {
                    id: format!("ST{:02}", k + 1),
                    x_km: x0 + (c as f64 + jx) * cw,
                    y_km: y0 + (r as f64 + jy) * rh,
                }
            })
            .collect();
        Self::new(stations)
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    /// 3 × station count.
    pub fn obs_dim(&self) -> usize {
        3 * self.stations.len()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// Reads `station,x_km,y_km`.
    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            station: String,
            x_km: f64,
            y_km: f64,
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["station", "x_km", "y_km"] {
            return Err(Error::parse(path, "expected header `station,x_km,y_km`"));
        }
        let mut stations = Vec::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            stations.push(Station {
                id: row.station,
                x_km: row.x_km,
                y_km: row.y_km,
            });
        }
        Self::new(stations).map_err(|e| Error::parse(path, e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "station,x_km,y_km")?;
        for s in &self.stations {
            writeln!(out, "{},{},{}", s.id, s.x_km, s.y_km)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Label of flattened observation index `j`, e.g. `ST03_north`.
    pub fn dim_label(&self, j: usize) -> String {
        let n = self.len();
        let dir = ["east", "north", "up"][j / n];
        format!("{}_{dir}", self.stations[j % n].id)
    }
}

/// Surface displacement per station, mm.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    pub east: Vec<f64>,
    pub north: Vec<f64>,
    pub up: Vec<f64>,
}

impl DisplacementField {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(3 * self.east.len());
        v.extend_from_slice(&self.east);
        v.extend_from_slice(&self.north);
        v.extend_from_slice(&self.up);
        v
    }

    pub fn from_slice(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % 3, 0, "flattened field length {} not divisible by 3", flat.len());
        let n = flat.len() / 3;
        Self {
            east: flat[..n].to_vec(),
            north: flat[n..2 * n].to_vec(),
            up: flat[2 * n..].to_vec(),
        }
    }
}

/// Closed-form displacements at every station.
pub fn mogi_forward(params: &MogiParams, geom: &StationGeometry) -> DisplacementField {
    let alpha = params.strength();
    let (xm, ym, d) = (
        params.x_m * M_PER_KM,
        params.y_m * M_PER_KM,
        params.depth * M_PER_KM,
    );
    let n = geom.len();
    let mut field = DisplacementField {
        east: Vec::with_capacity(n),
        north: Vec::with_capacity(n),
        up: Vec::with_capacity(n),
    };
    for s in geom.stations() {
        let dx = s.x_km * M_PER_KM - xm;
        let dy = s.y_km * M_PER_KM - ym;
        let r2 = dx * dx + dy * dy + d * d;
        let inv_r3 = 1.0 / (r2 * r2.sqrt());
        field.east.push(MM_PER_M * alpha * dx * inv_r3);
        field.north.push(MM_PER_M * alpha * dy * inv_r3);
        field.up.push(MM_PER_M * alpha * d * inv_r3);
    }
    field
}

/// ∂u/∂(x_m [km], y_m [km], d [km], ΔV [m³]) as a `3N × 4` matrix in
/// observation order, u in mm.
pub fn mogi_jacobian(params: &MogiParams, geom: &StationGeometry) -> Tensor {
    let n = geom.len();
    let alpha = params.strength();
    let per_dv = (1.0 - params.poisson) / PI;
    let (xm, ym, d) = (
        params.x_m * M_PER_KM,
        params.y_m * M_PER_KM,
        params.depth * M_PER_KM,
    );
    // meters of source motion per km, mm of output per m
    let len_scale = MM_PER_M * M_PER_KM;
    let mut jac = Tensor::zeros(&[3 * n, 4]);
    let data = jac.data_mut();
    for (i, s) in geom.stations().iter().enumerate() {
        let dx = s.x_km * M_PER_KM - xm;
        let dy = s.y_km * M_PER_KM - ym;
        let r2 = dx * dx + dy * dy + d * d;
        let r = r2.sqrt();
        let inv_r3 = 1.0 / (r2 * r);
        let inv_r5 = inv_r3 / r2;
        let rows = [
            // east
            [
                alpha * (-inv_r3 + 3.0 * dx * dx * inv_r5),
                alpha * 3.0 * dx * dy * inv_r5,
                -alpha * 3.0 * dx * d * inv_r5,
                per_dv * dx * inv_r3,
            ],
            // north
            [
                alpha * 3.0 * dx * dy * inv_r5,
                alpha * (-inv_r3 + 3.0 * dy * dy * inv_r5),
                -alpha * 3.0 * dy * d * inv_r5,
                per_dv * dy * inv_r3,
            ],
            // up
            [
                alpha * 3.0 * d * dx * inv_r5,
                alpha * 3.0 * d * dy * inv_r5,
                alpha * (inv_r3 - 3.0 * d * d * inv_r5),
                per_dv * d * inv_r3,
            ],
        ];
        for (block, row) in rows.iter().enumerate() {
            let at = (block * n + i) * 4;
            for k in 0..3 {
                data[at + k] = len_scale * row[k];
            }
            data[at + 3] = MM_PER_M * row[3];
        }
    }
    jac
}

/// Rescales normalized `eta` (n×4) on the tape and evaluates the Mogi
/// field for every row, giving an n×3N displacement matrix in mm.
pub fn mogi_forward_tape(
    tape: &mut Tape,
    eta: Var,
    bounds: &VariableBounds,
    geom: &StationGeometry,
    poisson: f64,
) -> Var {
    let span = tape.leaf(Tensor::vector(bounds.span().to_vec()));
    let lower = tape.leaf(Tensor::vector(bounds.lower().to_vec()));
    let scaled = tape.mul(eta, span);
    let z = tape.add(scaled, lower);
    forward_from_physical(tape, z, geom, poisson)
}

/// Mogi field for physical-unit rows `z` (n×4: km, km, km, m³).
pub fn forward_from_physical(tape: &mut Tape, z: Var, geom: &StationGeometry, poisson: f64) -> Var {
    let sx = tape.leaf(Tensor::vector(
        geom.stations().iter().map(|s| s.x_km * M_PER_KM).collect(),
    ));
    let sy = tape.leaf(Tensor::vector(
        geom.stations().iter().map(|s| s.y_km * M_PER_KM).collect(),
    ));
    let xm = tape.slice_cols(z, 0, 1);
    let ym = tape.slice_cols(z, 1, 1);
    let d = tape.slice_cols(z, 2, 1);
    let dv = tape.slice_cols(z, 3, 1);
    let xm = tape.scale(xm, M_PER_KM);
    let ym = tape.scale(ym, M_PER_KM);
    let d = tape.scale(d, M_PER_KM);

    let dx = tape.sub(sx, xm);
    let dy = tape.sub(sy, ym);
    let dx2 = tape.square(dx);
    let dy2 = tape.square(dy);
    let d2 = tape.square(d);
    let h2 = tape.add(dx2, dy2);
    let r2 = tape.add(h2, d2);
    let inv_r3 = tape.powf(r2, -1.5);
    // α in mm·m², folded with the m → mm conversion
    let alpha = tape.scale(dv, MM_PER_M * (1.0 - poisson) / PI);
    let k = tape.mul(inv_r3, alpha);
    let east = tape.mul(dx, k);
    let north = tape.mul(dy, k);
    let up = tape.mul(k, d);
    tape.concat_cols(&[east, north, up])
}

/// Which variables to sweep and where to hold the rest.
#[derive(Clone, Debug)]
pub struct GridSpec {
    /// One or two swept variables with their `[lo, hi]` range and point count.
    pub sweeps: Vec<(Variable, [f64; 2], usize)>,
    /// Values for variables not swept (physical units).
    pub fixed: MogiParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityRow {
    pub coords: Vec<f64>,
    pub output_dim: usize,
    /// Standardized ∂X_F/∂η for each swept variable.
    pub grads: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTable {
    pub swept: Vec<Variable>,
    pub labels: Vec<String>,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityTable {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.swept.iter().map(|v| v.name().to_string()).collect();
        header.push("output_dim".into());
        header.push("output_label".into());
        header.extend(self.swept.iter().map(|v| format!("grad_{v}")));
        out.write_record(&header)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.coords.iter().map(f64::to_string).collect();
            rec.push(row.output_dim.to_string());
            rec.push(self.labels[row.output_dim].clone());
            rec.extend(row.grads.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn linspace([lo, hi]: [f64; 2], steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

/// Standardized gradients of the Mogi field with respect to normalized
/// variables over a grid: `∂X_F/∂Z · (Z_max − Z_min) / std_j`.
pub fn sensitivity_profile(
    bounds: &VariableBounds,
    geom: &StationGeometry,
    grid: &GridSpec,
    output_std: &[f64],
) -> Result<SensitivityTable> {
    if grid.sweeps.is_empty() || grid.sweeps.len() > 2 {
        return Err(Error::Config("sensitivity sweeps one or two variables".into()));
    }
    if output_std.len() != geom.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} standard deviations for {} outputs",
            output_std.len(),
            geom.obs_dim()
        )));
    }
    let span = bounds.span();
    let axes: Vec<Vec<f64>> = grid.sweeps.iter().map(|(_, r, n)| linspace(*r, *n)).collect();
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    let swept: Vec<Variable> = grid.sweeps.iter().map(|(v, _, _)| *v).collect();
    let mut rows = Vec::with_capacity(points.len() * geom.obs_dim());
    for coords in points {
        let mut p = grid.fixed;
        for (v, &c) in swept.iter().zip(&coords) {
            p.set(*v, c);
        }
        let jac = mogi_jacobian(&p, geom);
        for (j, &std) in output_std.iter().enumerate() {
            let grads = swept
                .iter()
                .map(|v| jac.get(j, v.index()) * span[v.index()] / std)
                .collect();
            rows.push(SensitivityRow {
                coords: coords.clone(),
                output_dim: j,
                grads,
            });
        }
    }
    let labels = (0..geom.obs_dim()).map(|j| geom.dim_label(j)).collect();
    Ok(SensitivityTable { swept, labels, rows })
}

#[cfg(test)]
mod tests;
