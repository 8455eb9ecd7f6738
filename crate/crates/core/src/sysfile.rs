//! JSON system files, matrix (de)serialization helpers and the small text
//! parsers used by the command line (ε grids, method names).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::est_design::{EstMode, EstPathway};
use crate::linsolve::Mat;
use crate::stab_design::{log_grid, StabMode, StabPathway};
use crate::systems::{Driver, Plant};

pub type Rows = Vec<Vec<f64>>;

pub fn mat_to_rows(m: &Mat) -> Rows {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn ser_mat<S: Serializer>(m: &Mat, s: S) -> std::result::Result<S::Ok, S::Error> {
    mat_to_rows(m).serialize(s)
}

pub fn ser_opt_mat<S: Serializer>(m: &Option<Mat>, s: S) -> std::result::Result<S::Ok, S::Error> {
    m.as_ref().map(mat_to_rows).serialize(s)
}

/// Row-major nested array to matrix; every row must have the same length.
pub fn rows_to_mat(rows: &Rows, path: &str) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(Error::ShapeMismatch(format!(
            "{path}: row {i} has {} entries, expected {c}",
            row.len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch(format!("{path}: non-finite entry")));
    }
    Ok(Mat::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawPlant {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawDriver {
    #[serde(rename = "F")]
    f: Rows,
    #[serde(rename = "G", default, skip_serializing_if = "Option::is_none")]
    g: Option<Rows>,
    #[serde(rename = "H", default, skip_serializing_if = "Option::is_none")]
    h: Option<Rows>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    j: Option<Rows>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawGains {
    #[serde(rename = "K_eta", default, skip_serializing_if = "Option::is_none")]
    k_eta: Option<Rows>,
    #[serde(rename = "L_eta", default, skip_serializing_if = "Option::is_none")]
    l_eta: Option<Rows>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawTuning {
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    q: Option<Rows>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    r: Option<Rows>,
    #[serde(rename = "Q_eta", default, skip_serializing_if = "Option::is_none")]
    q_eta: Option<Rows>,
    #[serde(rename = "R_eta", default, skip_serializing_if = "Option::is_none")]
    r_eta: Option<Rows>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    metadata: Metadata,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    plant: Option<RawPlant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    driver: Option<RawDriver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gains: Option<RawGains>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tuning: Option<RawTuning>,
}

/// Optional LQR weights carried by a system file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tuning {
    pub q: Option<Mat>,
    pub r: Option<Mat>,
    pub q_eta: Option<Mat>,
    pub r_eta: Option<Mat>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SystemFile {
    pub metadata: Metadata,
    pub plant: Option<Plant>,
    pub driver: Option<Driver>,
    /// Given driver gain `K_η` (stabilizer designs with fixed gain).
    pub k_eta: Option<Mat>,
    /// Given estimator gain `L_η`.
    pub l_eta: Option<Mat>,
    pub tuning: Tuning,
}

fn opt_mat(rows: &Option<Rows>, path: &str) -> Result<Option<Mat>> {
    rows.as_ref().map(|r| rows_to_mat(r, path)).transpose()
}

fn expect_shape(m: &Mat, r: usize, c: usize, path: &str) -> Result<()> {
    if m.shape() != (r, c) {
        return Err(Error::ShapeMismatch(format!(
            "{path}: expected {r}x{c}, found {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_at(text, "<input>")
    }

    fn from_json_at(text: &str, path: &str) -> Result<Self> {
        let raw: RawFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        let plant = match &raw.plant {
            Some(p) => {
                let a = rows_to_mat(&p.a, "plant.A")?;
                let b = rows_to_mat(&p.b, "plant.B")?;
                let c = rows_to_mat(&p.c, "plant.C")?;
                let d = match opt_mat(&p.d, "plant.D")? {
                    Some(d) => d,
                    None => Mat::zeros(c.nrows(), b.ncols()),
                };
                Some(Plant::new(a, b, c, d)?)
            }
            None => None,
        };
        let driver = match &raw.driver {
            Some(dr) => {
                let f = rows_to_mat(&dr.f, "driver.F")?;
                let nu = f.nrows();
                let g = match opt_mat(&dr.g, "driver.G")? {
                    Some(g) => g,
                    None => Mat::zeros(nu, plant.as_ref().map_or(0, |p| p.p())),
                };
                let h = match opt_mat(&dr.h, "driver.H")? {
                    Some(h) => h,
                    None => Mat::zeros(plant.as_ref().map_or(0, |p| p.m()), nu),
                };
                let j = match opt_mat(&dr.j, "driver.J")? {
                    Some(j) => j,
                    None => Mat::zeros(h.nrows(), g.ncols()),
                };
                Some(Driver::new(f, g, h, j)?)
            }
            None => None,
        };
        if let (Some(p), Some(d)) = (&plant, &driver) {
            if dr_h_given(&raw) {
                expect_shape(&d.h, p.m(), d.nu(), "driver.H")?;
            }
        }
        let gains = raw.gains.clone().unwrap_or_default();
        let k_eta = opt_mat(&gains.k_eta, "gains.K_eta")?;
        let l_eta = opt_mat(&gains.l_eta, "gains.L_eta")?;
        if let (Some(p), Some(d)) = (&plant, &driver) {
            if let Some(k) = &k_eta {
                expect_shape(k, p.m(), d.nu(), "gains.K_eta")?;
            }
            if let Some(l) = &l_eta {
                expect_shape(l, d.nu(), p.p(), "gains.L_eta")?;
            }
        }
        let t = raw.tuning.clone().unwrap_or_default();
        let tuning = Tuning {
            q: opt_mat(&t.q, "tuning.Q")?,
            r: opt_mat(&t.r, "tuning.R")?,
            q_eta: opt_mat(&t.q_eta, "tuning.Q_eta")?,
            r_eta: opt_mat(&t.r_eta, "tuning.R_eta")?,
        };
        for (m, path) in [
            (&tuning.q, "tuning.Q"),
            (&tuning.r, "tuning.R"),
            (&tuning.q_eta, "tuning.Q_eta"),
            (&tuning.r_eta, "tuning.R_eta"),
        ] {
            if let Some(m) = m {
                if m.nrows() != m.ncols() {
                    return Err(Error::NonSquare {
                        what: path.into(),
                        rows: m.nrows(),
                        cols: m.ncols(),
                    });
                }
            }
        }
        Ok(SystemFile {
            metadata: raw.metadata,
            plant,
            driver,
            k_eta,
            l_eta,
            tuning,
        })
    }

    pub fn to_json(&self) -> String {
        let raw = RawFile {
            metadata: self.metadata.clone(),
            plant: self.plant.as_ref().map(|p| RawPlant {
                a: mat_to_rows(&p.a),
                b: mat_to_rows(&p.b),
                c: mat_to_rows(&p.c),
                d: nonempty_rows(&p.d),
            }),
            driver: self.driver.as_ref().map(|d| RawDriver {
                f: mat_to_rows(&d.f),
                g: nonempty_rows(&d.g),
                h: nonempty_rows(&d.h),
                j: nonempty_rows(&d.j),
            }),
            gains: if self.k_eta.is_some() || self.l_eta.is_some() {
                Some(RawGains {
                    k_eta: self.k_eta.as_ref().map(mat_to_rows),
                    l_eta: self.l_eta.as_ref().map(mat_to_rows),
                })
            } else {
                None
            },
            tuning: if self.tuning == Tuning::default() {
                None
            } else {
                Some(RawTuning {
                    q: self.tuning.q.as_ref().map(mat_to_rows),
                    r: self.tuning.r.as_ref().map(mat_to_rows),
                    q_eta: self.tuning.q_eta.as_ref().map(mat_to_rows),
                    r_eta: self.tuning.r_eta.as_ref().map(mat_to_rows),
                })
            },
        };
        serde_json::to_string_pretty(&raw).expect("plain data serializes")
    }

    pub fn require_plant(&self) -> Result<&Plant> {
        self.plant.as_ref().ok_or_else(|| Error::Parse {
            path: "plant".into(),
            message: "missing plant section".into(),
        })
    }

    pub fn require_driver(&self) -> Result<&Driver> {
        self.driver.as_ref().ok_or_else(|| Error::Parse {
            path: "driver".into(),
            message: "missing driver section".into(),
        })
    }
}

/// Empty matrices are left out; parsing rebuilds them from the defaults.
fn nonempty_rows(m: &Mat) -> Option<Rows> {
    (m.nrows() > 0 && m.ncols() > 0).then(|| mat_to_rows(m))
}

fn dr_h_given(raw: &RawFile) -> bool {
    raw.driver.as_ref().is_some_and(|d| d.h.is_some())
}

pub fn parse_system_file(path: &Path) -> Result<SystemFile> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    SystemFile::from_json_at(&text, &shown)
}

/// `lo:hi:npts`, log-spaced, with `0 < lo < hi` and `npts ≥ 2`.
pub fn parse_eps_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Parse {
        path: "--eps-grid".into(),
        message: format!("{m} in '{s}' (expected lo:hi:npts)"),
    };
    let parts: Vec<&str> = s.trim().split(':').collect();
    if parts.len() != 3 {
        return Err(bad("need three fields"));
    }
    let lo: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| bad("bad lower bound"))?;
    let hi: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| bad("bad upper bound"))?;
    let n: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| bad("bad point count"))?;
    if !(lo > 0.0 && hi.is_finite() && lo < hi) {
        return Err(bad("bounds must satisfy 0 < lo < hi"));
    }
    if !(2..=10_000).contains(&n) {
        return Err(bad("point count must be in 2..=10000"));
    }
    Ok(log_grid(lo, hi, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReduceSide {
    Right,
    Left,
    Two,
}

impl FromStr for ReduceSide {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "right" => Ok(ReduceSide::Right),
            "left" => Ok(ReduceSide::Left),
            "two" | "two-sided" | "two_sided" => Ok(ReduceSide::Two),
            _ => Err(format!("unknown side '{s}' (expected right, left or two)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Stab(StabPathway),
    Est(EstPathway),
}

/// Any stabilizer or estimator pathway name.
pub fn parse_method(s: &str) -> Result<Method> {
    if let Ok(p) = s.parse::<StabPathway>() {
        return Ok(Method::Stab(p));
    }
    s.parse::<EstPathway>()
        .map(Method::Est)
        .map_err(|_| Error::Parse {
            path: "--method".into(),
            message: format!("unknown method '{s}'"),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fix {
    /// Fixed driver matrix (`G` for stabilizers, `H` for estimators).
    Dynamics,
    /// Fixed driver gain `K_η`.
    Gain,
    /// Fixed injection gain `L_η`.
    Injection,
}

impl FromStr for Fix {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dynamics" => Ok(Fix::Dynamics),
            "gain" => Ok(Fix::Gain),
            "injection" => Ok(Fix::Injection),
            _ => Err(format!(
                "unknown --fix value '{s}' (expected gain, injection or dynamics)"
            )),
        }
    }
}

/// Resolves `--method` together with `--fix`. A full name (`3a2b`, `b1a`)
/// must agree with `--fix` when both are given; a family name (`3a2`,
/// `b1`) needs `--fix`.
pub fn resolve_method(method: &str, fix: Option<&str>) -> Result<Method> {
    let bad = |m: String| Error::Parse {
        path: "--method".into(),
        message: m,
    };
    let fix = fix
        .map(|f| {
            f.parse::<Fix>().map_err(|m| Error::Parse {
                path: "--fix".into(),
                message: m,
            })
        })
        .transpose()?;
    let name = method.trim();
    if name.is_empty() || !name.is_ascii() {
        return Err(bad(format!("unknown method '{method}'")));
    }
    let full = match parse_method(name) {
        Ok(m) => m,
        Err(_) => {
            let Some(f) = fix else {
                return Err(bad(format!(
                    "'{method}' is neither a method nor a family used with --fix"
                )));
            };
            let is_est = name.to_ascii_lowercase().starts_with('b');
            let suffix = match (f, is_est) {
                (Fix::Dynamics, _) => "a",
                (Fix::Gain, false) | (Fix::Injection, true) => "b",
                (Fix::Gain, true) => {
                    return Err(bad("--fix gain applies to stabilizer methods".into()))
                }
                (Fix::Injection, false) => {
                    return Err(bad("--fix injection applies to estimator methods".into()))
                }
            };
            return parse_method(&format!("{name}{suffix}"));
        }
    };
    if let Some(f) = fix {
        let ok = match full {
            Method::Stab(p) => matches!(
                (p.mode(), f),
                (StabMode::FixG, Fix::Dynamics) | (StabMode::FixKeta, Fix::Gain)
            ),
            Method::Est(p) => matches!(
                (p.mode(), f),
                (EstMode::FixH, Fix::Dynamics) | (EstMode::FixLeta, Fix::Injection)
            ),
        };
        if !ok {
            return Err(bad(format!("method '{method}' conflicts with --fix {f:?}")));
        }
    }
    Ok(full)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scalar_plant() {
        let f =
            SystemFile::from_json(r#"{"plant": {"A": [[-1]], "B": [[1]], "C": [[1]]}}"#).unwrap();
        let p = f.plant.unwrap();
        assert_eq!((p.n(), p.m(), p.p()), (1, 1, 1));
        assert_eq!(p.d, Mat::zeros(1, 1));
    }

    #[test]
    fn ragged_rows_report_field_path() {
        let err =
            SystemFile::from_json(r#"{"plant": {"A": [[1, 2], [3]], "B": [[1]], "C": [[1]]}}"#)
                .unwrap_err();
        assert!(err.to_string().contains("plant.A"), "{err}");
    }

    #[test]
    fn inconsistent_dimensions_report_field_path() {
        let err = SystemFile::from_json(
            r#"{"plant": {"A": [[1, 0], [0, 1]], "B": [[1]], "C": [[1, 0]]}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("plant.B"), "{err}");
    }

    #[test]
    fn round_trip() {
        let text = r#"{"metadata": {"name": "x"}, "plant": {"A": [[-1]], "B": [[1]], "C": [[2]]},
            "driver": {"F": [[0]], "G": [[1]]}, "gains": {"K_eta": [[3]]}, "tuning": {"R": [[0.5]]}}"#;
        let a = SystemFile::from_json(text).unwrap();
        let b = SystemFile::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eps_grid_parses() {
        let g = parse_eps_grid("1e-4:1e-1:4").unwrap();
        assert_eq!(g.len(), 4);
        assert!((g[0] - 1e-4).abs() < 1e-18 && (g[3] - 0.1).abs() < 1e-15);
        assert!(parse_eps_grid("0:1:4").is_err());
        assert!(parse_eps_grid("1:0.1:4").is_err());
        assert!(parse_eps_grid("1e-3:1").is_err());
    }

    #[test]
    fn method_with_fix() {
        assert_eq!(
            resolve_method("3a2", Some("gain")).unwrap(),
            Method::Stab(StabPathway::P3A2b)
        );
        assert_eq!(
            resolve_method("3A1", Some("dynamics")).unwrap(),
            Method::Stab(StabPathway::P3A1a)
        );
        assert_eq!(
            resolve_method("b3", Some("injection")).unwrap(),
            Method::Est(EstPathway::B3b)
        );
        assert_eq!(
            resolve_method("b2a", None).unwrap(),
            Method::Est(EstPathway::B2a)
        );
        assert!(resolve_method("3a1a", Some("gain")).is_err());
        assert!(resolve_method("b1", Some("gain")).is_err());
        assert!(resolve_method("3a1", None).is_err());
        assert!(resolve_method("3a1", Some("bogus")).is_err());
    }

    #[test]
    fn method_names() {
        assert_eq!(
            parse_method("3A2b").unwrap(),
            Method::Stab(StabPathway::P3A2b)
        );
        assert_eq!(parse_method("b3a").unwrap(), Method::Est(EstPathway::B3a));
        assert!(parse_method("c1").is_err());
    }
}
