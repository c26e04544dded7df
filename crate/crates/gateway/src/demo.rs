//! Synthetic city for demos and end-to-end tests.
//!
//! 178 census tracts whose columns follow the published city summary
//! (means, standard deviations and Spearman correlations with obesity)
//! through a one-factor Gaussian copula. Tract 47157010300 carries the
//! worked-example values. Everything is a pure function of the seed.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use upho_core::tabledata::{write_manifest, ColumnBinding, GeoLevel, Units};

use crate::error::{AtStage, Stage, StageError};
use crate::request::{Aim, AnalysisRequest, Granularity, Level, Role};
use crate::workspace::{write_atomic, Workspace};

pub const DEMO_SEED: u64 = 20_190_601;
pub const DEMO_CITY: &str = "Memphis";
pub const DEMO_TRACTS: usize = 178;
pub const EXAMPLE_TRACT: &str = "47157010300";
pub const EXAMPLE_ZIP: &str = "38127";

struct Spec {
    column: &'static str,
    term: &'static str,
    units: Units,
    description: &'static str,
    mean: f64,
    sd: f64,
    /// Target Spearman correlation with obesity.
    rho: f64,
}

const SDOH: [Spec; 6] = [
    Spec { column: "low_access_supermarket", term: "HIO:CountLowAccessSupermarket", units: Units::Count, description: "residents with low access to a supermarket", mean: 1382.2, sd: 108.37, rho: 0.37 },
    Spec { column: "black", term: "HIO:PctPopBlack", units: Units::Percent, description: "share of the population that is Black", mean: 63.17, sd: 32.7, rho: 0.77 },
    Spec { column: "poverty", term: "HIO:PctUnderPovertyLine", units: Units::Percent, description: "share below the poverty line", mean: 28.65, sd: 16.28, rho: 0.83 },
    Spec { column: "unemployment", term: "HIO:PctUnemployed", units: Units::Percent, description: "unemployment rate", mean: 15.73, sd: 9.31, rho: 0.73 },
    Spec { column: "no_hs_diploma", term: "HIO:PctPopNoHighSchoolDiploma", units: Units::Percent, description: "adults without a high school diploma", mean: 10.38, sd: 6.59, rho: 0.81 },
    Spec { column: "crime", term: "HIO:CrimeRatePerThousand", units: Units::RatePer1000, description: "reported crimes per 1000 residents", mean: 350.2, sd: 126.26, rho: 0.37 },
];

const ACTIVITY: Spec = Spec {
    column: "lack_physical_activity",
    term: "HIO:PctPopWLackOfPhysicalActivity",
    units: Units::Percent,
    description: "adults reporting no leisure-time physical activity",
    mean: 36.16,
    sd: 9.80,
    rho: 0.92,
};

const OBESITY: (f64, f64) = (37.5, 7.84);
const NO_INSURANCE: (f64, f64) = (20.21, 6.78);

/// Files of a generated city, as written by [`write_city`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemoCity {
    pub health_csv: String,
    pub health_manifest: String,
    pub sdoh_csv: String,
    pub sdoh_manifest: String,
    pub crosswalk_csv: String,
    pub requests: Vec<(String, AnalysisRequest)>,
}

pub fn tract_code(i: usize) -> String {
    format!("47157{:06}", (i + 1) * 100)
}

/// Latent loading that yields Spearman `rho` under a Gaussian copula.
fn loading(rho: f64) -> f64 {
    2.0 * (PI * rho / 6.0).sin()
}

/// Maps a standard normal score to a percentage with roughly the given
/// mean and sd, kept inside (0, 100) by a logistic link.
fn percent(mean: f64, sd: f64, z: f64) -> f64 {
    let p = mean / 100.0;
    let k = sd / (100.0 * p * (1.0 - p));
    let logit = (p / (1.0 - p)).ln();
    100.0 / (1.0 + (-(logit + k * z)).exp())
}

fn scale(spec: &Spec, z: f64) -> f64 {
    match spec.units {
        Units::Percent => percent(spec.mean, spec.sd, z),
        _ => (spec.mean + spec.sd * z).max(0.0),
    }
}

fn round_to(v: f64, digits: i32) -> f64 {
    let f = 10f64.powi(digits);
    (v * f).round() / f
}

fn standardized(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    v.iter().map(|x| (x - m) / sd).collect()
}

fn binding(s: &Spec) -> ColumnBinding {
    ColumnBinding { column_name: s.column.into(), term: s.term.into(), units: s.units, description: s.description.into() }
}

fn csv(columns: &[(&str, &[f64], i32)]) -> String {
    let mut out = String::from("geo_code");
    for (name, _, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..DEMO_TRACTS {
        out.push_str(&tract_code(i));
        for (_, values, digits) in columns {
            out.push_str(&format!(",{:.*}", *digits as usize, values[i]));
        }
        out.push('\n');
    }
    out
}

fn crosswalk() -> String {
    let example = (0..DEMO_TRACTS).position(|i| tract_code(i) == EXAMPLE_TRACT).expect("example tract in range");
    let block = (example - 2)..(example + 6);
    let mut out = String::from("zip,tract_fips\n");
    let mut zip = 38100;
    let mut in_zip = 0;
    for i in 0..DEMO_TRACTS {
        let z = if block.contains(&i) {
            EXAMPLE_ZIP.to_string()
        } else {
            if in_zip == 6 {
                zip += 1;
                in_zip = 0;
            }
            if zip.to_string() == EXAMPLE_ZIP {
                zip += 1;
            }
            in_zip += 1;
            zip.to_string()
        };
        out.push_str(&format!("{z},{}\n", tract_code(i)));
    }
    out
}

fn requests() -> Vec<(String, AnalysisRequest)> {
    let patient = AnalysisRequest {
        outcome: "HIO:ObesityPrevalence".into(),
        aim: Aim::CausalPathway,
        level: Level::Patient,
        location: EXAMPLE_TRACT.into(),
        granularity: Granularity::CensusTract,
        sdoh_filters: vec!["COPE:lackOfPhysicalActivity".into()],
        seed: 42,
        importance_mode: None,
        r2_mode: None,
        role: Role::Physician,
    };
    let population = AnalysisRequest {
        level: Level::Population,
        location: DEMO_CITY.into(),
        sdoh_filters: vec![],
        role: Role::Researcher,
        ..patient.clone()
    };
    let unknown = AnalysisRequest { location: "47157999900".into(), ..patient.clone() };
    let public = AnalysisRequest { role: Role::Public, ..patient.clone() };
    vec![
        ("patient_tract_10300.json".into(), patient),
        ("population_city.json".into(), population),
        ("unknown_tract.json".into(), unknown),
        ("public_patient.json".into(), public),
    ]
}

pub fn synthetic_city(seed: u64) -> DemoCity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let latent: Vec<f64> = (0..DEMO_TRACTS).map(|_| normal()).collect();
    let mut column = |spec: &Spec| -> Vec<f64> {
        let a = loading(spec.rho);
        let b = (1.0 - a * a).sqrt();
        latent.iter().map(|z0| scale(spec, a * z0 + b * normal())).collect()
    };
    let activity = column(&ACTIVITY);
    let sdoh: Vec<Vec<f64>> = SDOH.iter().map(&mut column).collect();
    let obesity: Vec<f64> = latent.iter().map(|z| percent(OBESITY.0, OBESITY.1, *z)).collect();
    // Uninsurance is nearly a linear blend of poverty, inactivity and
    // unemployment, so the collinearity screen has something to remove.
    let blend: Vec<f64> = {
        let parts = [standardized(&sdoh[2]), standardized(&activity), standardized(&sdoh[3])];
        let raw: Vec<f64> = (0..DEMO_TRACTS).map(|i| parts.iter().map(|p| p[i]).sum::<f64>() + 0.08 * normal()).collect();
        standardized(&raw)
    };
    let no_insurance: Vec<f64> = blend.iter().map(|z| (NO_INSURANCE.0 + NO_INSURANCE.1 * z).clamp(0.5, 99.5)).collect();

    let mut activity = activity;
    let mut sdoh = sdoh;
    let mut obesity = obesity;
    let ex = (0..DEMO_TRACTS).position(|i| tract_code(i) == EXAMPLE_TRACT).expect("example tract in range");
    activity[ex] = 49.0;
    sdoh[4][ex] = 21.0;
    sdoh[2][ex] = 60.0;
    obesity[ex] = 46.0;

    let digits = |u: Units| if u == Units::Count { 0 } else { 2 };
    let round = |v: &[f64], d: i32| v.iter().map(|x| round_to(*x, d)).collect::<Vec<_>>();
    let obesity = round(&obesity, 2);
    let activity = round(&activity, 2);
    let no_insurance = round(&no_insurance, 2);
    let sdoh: Vec<Vec<f64>> = SDOH.iter().zip(&sdoh).map(|(s, v)| round(v, digits(s.units))).collect();

    let health_bindings = vec![
        ColumnBinding {
            column_name: "obesity".into(),
            term: "HIO:ObesityPrevalence".into(),
            units: Units::Percent,
            description: "adults with BMI of 30 or more".into(),
        },
        binding(&ACTIVITY),
        ColumnBinding {
            column_name: "no_insurance".into(),
            term: "HIO:PctPopNoInsurance".into(),
            units: Units::Percent,
            description: "residents without health insurance".into(),
        },
    ];
    let health_csv = csv(&[("obesity", &obesity, 2), (ACTIVITY.column, &activity, 2), ("no_insurance", &no_insurance, 2)]);
    let sdoh_cols: Vec<(&str, &[f64], i32)> =
        SDOH.iter().zip(&sdoh).map(|(s, v)| (s.column, v.as_slice(), digits(s.units))).collect();
    DemoCity {
        health_csv,
        health_manifest: write_manifest(&health_bindings),
        sdoh_csv: csv(&sdoh_cols),
        sdoh_manifest: write_manifest(&SDOH.iter().map(binding).collect::<Vec<_>>()),
        crosswalk_csv: crosswalk(),
        requests: requests(),
    }
}

/// Writes the city as plain files: two tables with manifests, the
/// crosswalk and example requests under `requests/`.
pub fn write_city(dir: &Path, city: &DemoCity) -> Result<(), StageError> {
    fs::create_dir_all(dir.join("requests")).at(Stage::Ingest)?;
    let files = [
        ("health.csv", &city.health_csv),
        ("health.manifest.tsv", &city.health_manifest),
        ("sdoh.csv", &city.sdoh_csv),
        ("sdoh.manifest.tsv", &city.sdoh_manifest),
        ("crosswalk.csv", &city.crosswalk_csv),
    ];
    for (name, text) in files {
        write_atomic(&dir.join(name), text.as_bytes()).at(Stage::Ingest)?;
    }
    for (name, req) in &city.requests {
        let mut text = serde_json::to_string_pretty(req).at(Stage::Ingest)?;
        text.push('\n');
        write_atomic(&dir.join("requests").join(name), text.as_bytes()).at(Stage::Ingest)?;
    }
    Ok(())
}

/// Initialises `root` as a workspace holding the synthetic city.
pub fn init_workspace(root: &Path, city: &DemoCity) -> Result<Workspace, StageError> {
    Workspace::init(root, DEMO_CITY, GeoLevel::CensusTract)?;
    Workspace::ingest_table(root, "health", city.health_csv.as_bytes(), &city.health_manifest)?;
    Workspace::ingest_table(root, "sdoh", city.sdoh_csv.as_bytes(), &city.sdoh_manifest)?;
    Workspace::ingest_crosswalk(root, city.crosswalk_csv.as_bytes())?;
    Workspace::open(root)
}
