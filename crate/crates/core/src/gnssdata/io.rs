use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{Dataset, GroundTruth};
use crate::error::{Error, Result};
use crate::mogi::{MogiParams, StationGeometry};

const OBS_HEADER: [&str; 5] = ["date", "station", "east_mm", "north_mm", "up_mm"];

#[derive(Deserialize)]
struct ObsRow {
    date: NaiveDate,
    station: String,
    east_mm: f64,
    north_mm: f64,
    up_mm: f64,
}

/// Reads `date,station,east_mm,north_mm,up_mm` into a daily matrix over the
/// span shared by all stations. Interior gaps are filled by linear
/// interpolation; every column is de-meaned and the means are recorded in
/// `offsets`.
pub fn load_series(path: &Path, geometry: &StationGeometry) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()?.iter().collect::<Vec<_>>() != OBS_HEADER {
        return Err(Error::parse(path, format!("expected header `{}`", OBS_HEADER.join(","))));
    }
    let n = geometry.len();
    let mut series: Vec<BTreeMap<NaiveDate, [f64; 3]>> = vec![BTreeMap::new(); n];
    for row in reader.deserialize() {
        let row: ObsRow = row?;
        let k = geometry
            .position(&row.station)
            .ok_or_else(|| Error::UnknownStation(row.station.clone()))?;
        let v = [row.east_mm, row.north_mm, row.up_mm];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(path, format!("non-finite value for {} on {}", row.station, row.date)));
        }
        if series[k].insert(row.date, v).is_some() {
            return Err(Error::parse(path, format!("duplicate row for {} on {}", row.station, row.date)));
        }
    }

    let mut first = NaiveDate::MIN;
    let mut last = NaiveDate::MAX;
    for (k, s) in series.iter().enumerate() {
        match (s.keys().next(), s.keys().next_back()) {
            (Some(&a), Some(&b)) => {
                first = first.max(a);
                last = last.min(b);
            }
            _ => {
                return Err(Error::SparseStation {
                    station: geometry.stations()[k].id.clone(),
                    missing: 1,
                    total: 1,
                })
            }
        }
    }
    if first > last {
        return Err(Error::parse(path, "station spans do not overlap"));
    }
    let total = (last - first).num_days() as usize + 1;
    for (k, s) in series.iter().enumerate() {
        let present = s.range(first..=last).count();
        let missing = total - present;
        if 2 * missing > total {
            return Err(Error::SparseStation {
                station: geometry.stations()[k].id.clone(),
                missing,
                total,
            });
        }
    }

    let mut samples = vec![vec![0.0; 3 * n]; total];
    for (k, s) in series.iter().enumerate() {
        for (d, row) in samples.iter_mut().enumerate() {
            let date = first + chrono::Days::new(d as u64);
            let v = interpolate(s, date);
            for dir in 0..3 {
                row[dir * n + k] = v[dir];
            }
        }
    }
    let mut offsets = vec![0.0; 3 * n];
    for row in &samples {
        for (o, v) in offsets.iter_mut().zip(row) {
            *o += v;
        }
    }
    offsets.iter_mut().for_each(|o| *o /= total as f64);
    for row in samples.iter_mut() {
        for (v, o) in row.iter_mut().zip(&offsets) {
            *v -= o;
        }
    }
    Ok(Dataset {
        geometry: geometry.clone(),
        start_date: first,
        days: (0..total as i64).collect(),
        samples,
        truth: None,
        offsets: Some(offsets),
    })
}

/// `date` lies within the series' first and last keys.
fn interpolate(s: &BTreeMap<NaiveDate, [f64; 3]>, date: NaiveDate) -> [f64; 3] {
    if let Some(v) = s.get(&date) {
        return *v;
    }
    let (d0, v0) = s.range(..date).next_back().expect("date after first key");
    let (d1, v1) = s.range(date..).next().expect("date before last key");
    let w = (date - *d0).num_days() as f64 / (*d1 - *d0).num_days() as f64;
    std::array::from_fn(|i| v0[i] + w * (v1[i] - v0[i]))
}

/// Writes samples (plus offsets, when present) in the long format read by
/// [`load_series`].
pub fn write_observations_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{}", OBS_HEADER.join(","))?;
    let n = data.geometry.len();
    let zeros = vec![0.0; data.obs_dim()];
    let off = data.offsets.as_deref().unwrap_or(&zeros);
    for (i, row) in data.samples.iter().enumerate() {
        let date = data.date(i);
        for (k, st) in data.geometry.stations().iter().enumerate() {
            let v = |dir: usize| row[dir * n + k] + off[dir * n + k];
            writeln!(out, "{date},{},{},{},{}", st.id, v(0), v(1), v(2))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes `geometry.csv`, `observations.csv` and, for synthetic data,
/// `truth_params.csv` and `components.csv`.
pub fn write_dataset_dir(data: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    data.geometry.write_csv(&dir.join("geometry.csv"))?;
    write_observations_csv(data, &dir.join("observations.csv"))?;
    let Some(truth) = &data.truth else {
        return Ok(());
    };
    let mut out = BufWriter::new(File::create(dir.join("truth_params.csv"))?);
    writeln!(out, "date,x_m,y_m,depth,dv")?;
    for (i, p) in truth.params.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", data.date(i), p.x_m, p.y_m, p.depth, p.dv)?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(dir.join("components.csv"))?);
    writeln!(out, "date,station,component,east_mm,north_mm,up_mm")?;
    let n = data.geometry.len();
    for i in 0..data.len() {
        let date = data.date(i);
        for (name, rows) in [
            ("volcanic", &truth.volcanic),
            ("background", &truth.background),
            ("seasonal", &truth.seasonal),
            ("noise", &truth.noise),
        ] {
            let row = &rows[i];
            for (k, st) in data.geometry.stations().iter().enumerate() {
                writeln!(out, "{date},{},{name},{},{},{}", st.id, row[k], row[n + k], row[2 * n + k])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a directory written by [`write_dataset_dir`]. Observations are
/// de-meaned as in [`load_series`]; truth files, when present, are attached
/// unchanged on the observation dates.
pub fn read_dataset_dir(dir: &Path) -> Result<Dataset> {
    let geometry = StationGeometry::read_csv(&dir.join("geometry.csv"))?;
    let mut data = load_series(&dir.join("observations.csv"), &geometry)?;
    let params_path = dir.join("truth_params.csv");
    let comp_path = dir.join("components.csv");
    if !(params_path.exists() && comp_path.exists()) {
        return Ok(data);
    }

    #[derive(Deserialize)]
    struct ParamRow {
        date: NaiveDate,
        x_m: f64,
        y_m: f64,
        depth: f64,
        dv: f64,
    }
    let mut params = HashMap::new();
    for row in csv::Reader::from_path(&params_path)?.deserialize() {
        let r: ParamRow = row?;
        params.insert(r.date, MogiParams::new(r.x_m, r.y_m, r.depth, r.dv));
    }

    #[derive(Deserialize)]
    struct CompRow {
        date: NaiveDate,
        station: String,
        component: String,
        east_mm: f64,
        north_mm: f64,
        up_mm: f64,
    }
    let n = geometry.len();
    let mut comps: HashMap<(NaiveDate, usize), Vec<f64>> = HashMap::new();
    for row in csv::Reader::from_path(&comp_path)?.deserialize() {
        let r: CompRow = row?;
        let k = geometry
            .position(&r.station)
            .ok_or_else(|| Error::UnknownStation(r.station.clone()))?;
        let c = match r.component.as_str() {
            "volcanic" => 0,
            "background" => 1,
            "noise" => 2,
            "seasonal" => 3,
            other => return Err(Error::parse(&comp_path, format!("unknown component `{other}`"))),
        };
        let row = comps.entry((r.date, c)).or_insert_with(|| vec![0.0; 3 * n]);
        row[k] = r.east_mm;
        row[n + k] = r.north_mm;
        row[2 * n + k] = r.up_mm;
    }
    let mut truth = GroundTruth {
        volcanic: Vec::new(),
        background: Vec::new(),
        seasonal: Vec::new(),
        noise: Vec::new(),
        params: Vec::new(),
    };
    for i in 0..data.len() {
        let date = data.date(i);
        let missing = || Error::parse(dir, format!("truth files lack {date}"));
        truth.params.push(*params.get(&date).ok_or_else(missing)?);
        for (c, rows) in [
            &mut truth.volcanic,
            &mut truth.background,
            &mut truth.noise,
            &mut truth.seasonal,
        ]
            .into_iter()
            .enumerate()
        {
            rows.push(comps.remove(&(date, c)).ok_or_else(missing)?);
        }
    }
    data.truth = Some(truth);
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnssdata::{generate, ScenarioConfig, SyntheticScenario};
    use crate::mogi::Station;

    fn two_stations() -> StationGeometry {
        StationGeometry::new(vec![
            Station { id: "A".into(), x_km: 0.0, y_km: 0.0 },
            Station { id: "B".into(), x_km: 1.0, y_km: 2.0 },
        ])
        .unwrap()
    }

    fn write(dir: &Path, body: &str) -> std::path::PathBuf {
        let p = dir.join("obs.csv");
        std::fs::write(&p, format!("date,station,east_mm,north_mm,up_mm\n{body}")).unwrap();
        p
    }

    #[test]
    fn gap_free_file_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(
            tmp.path(),
            "2020-01-01,A,1,2,3\n2020-01-01,B,4,5,6\n2020-01-02,A,3,2,1\n2020-01-02,B,6,5,4\n",
        );
        let d = load_series(&p, &two_stations()).unwrap();
        assert_eq!(d.len(), 2);
        let off = d.offsets.as_ref().unwrap();
        assert_eq!(off, &vec![2.0, 5.0, 2.0, 5.0, 2.0, 5.0]);
        let restored: Vec<f64> = d.samples[0].iter().zip(off).map(|(v, o)| v + o).collect();
        assert_eq!(restored, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn interior_gap_is_interpolated() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(
            tmp.path(),
            "2020-01-01,A,1,0,0\n2020-01-03,A,3,0,0\n\
             2020-01-01,B,0,0,0\n2020-01-02,B,0,0,0\n2020-01-03,B,0,0,0\n",
        );
        let d = load_series(&p, &two_stations()).unwrap();
        let off = d.offsets.as_ref().unwrap()[0];
        assert_eq!(d.samples[1][0] + off, 2.0);
    }

    #[test]
    fn span_is_the_intersection() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(
            tmp.path(),
            "2020-01-01,A,0,0,0\n2020-01-02,A,0,0,0\n2020-01-03,A,0,0,0\n\
             2020-01-02,B,0,0,0\n2020-01-03,B,0,0,0\n2020-01-04,B,0,0,0\n",
        );
        let d = load_series(&p, &two_stations()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.start_date, NaiveDate::from_ymd_opt(2020, 1, 2).unwrap());
    }

    #[test]
    fn unknown_station_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        let p = write(tmp.path(), "2020-01-01,Z,0,0,0\n");
        let err = load_series(&p, &two_stations()).unwrap_err();
        assert!(matches!(err, Error::UnknownStation(ref s) if s == "Z"), "{err}");
    }

    #[test]
    fn sparse_station_is_named() {
        let tmp = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for d in 1..=10 {
            body += &format!("2020-01-{d:02},A,0,0,0\n");
        }
        body += "2020-01-01,B,0,0,0\n2020-01-10,B,0,0,0\n";
        let p = write(tmp.path(), &body);
        let err = load_series(&p, &two_stations()).unwrap_err();
        assert!(err.to_string().contains('B'), "{err}");
        assert!(matches!(err, Error::SparseStation { missing: 8, total: 10, .. }));
    }

    #[test]
    fn generated_dataset_round_trips() {
        let cfg = ScenarioConfig {
            stations: 5,
            days: 60,
            test_window: [10, 20],
            ..ScenarioConfig::default()
        };
        let data = generate(&SyntheticScenario::from_config(&cfg, 4).unwrap());
        let tmp = tempfile::tempdir().unwrap();
        write_dataset_dir(&data, tmp.path()).unwrap();
        let back = read_dataset_dir(tmp.path()).unwrap();
        let off = back.offsets.as_ref().unwrap();
        for (a, b) in back.samples.iter().zip(&data.samples) {
            for ((x, o), y) in a.iter().zip(off).zip(b) {
                assert!((x + o - y).abs() < 1e-9);
            }
        }
        assert_eq!(back.truth, data.truth);
        assert_eq!(back.start_date, data.start_date);
    }
}
