//! Frozen outputs of independent reference implementations.

use skynow::clearsky::{self, RenoThresholds};
use skynow::geometry::{self, Site};

/// Zenith and azimuth from pvlib's SPA implementation (refraction on),
/// degrees.
const SPA: &[(&str, i64, f64, f64)] = &[
    ("folsom", 1466539560, 15.206626, 179.53246),
    ("folsom", 1466524800, 53.899008, 87.282782),
    ("folsom", 1482350400, 62.050691, 179.209747),
    ("folsom", 1458516600, 59.302488, 242.222117),
    ("folsom", 1675278000, 58.56187, 157.998331),
    ("folsom", 2540572200, 26.404586, 119.637175),
    ("sirta", 1466524800, 54.137328, 265.462912),
    ("sirta", 1568548800, 45.758564, 184.719659),
    ("sirta", 946728000, 71.708478, 181.343681),
    ("sirta", 2540572200, 78.351652, 291.482295),
    ("nrel", 1466539560, 21.089448, 224.074382),
    ("nrel", 1466524800, 41.623487, 99.025505),
    ("nrel", 1482350400, 64.718151, 195.431875),
    ("nrel", 1458516600, 71.163634, 254.014225),
    ("nrel", 1675278000, 56.828059, 175.927151),
    ("nrel", 2540572200, 18.519878, 153.557272),
    ("equator", 1466524800, 62.237084, 296.697867),
    ("equator", 1568548800, 3.25039, 338.797011),
    ("equator", 946728000, 23.040138, 178.068953),
];

fn site(name: &str) -> Site {
    match name {
        "folsom" => Site::folsom(),
        "sirta" => Site::sirta(),
        "nrel" => Site::nrel(),
        _ => Site::new("equator", 0.0, 0.0, 0.0, 0).unwrap(),
    }
}

fn separation_deg((z1, a1): (f64, f64), (z2, a2): (f64, f64)) -> f64 {
    let v = |z: f64, a: f64| {
        let (z, a) = (z.to_radians(), a.to_radians());
        [z.sin() * a.sin(), z.sin() * a.cos(), z.cos()]
    };
    let (p, q) = (v(z1, a1), v(z2, a2));
    let dot: f64 = p.iter().zip(&q).map(|(x, y)| x * y).sum();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

#[test]
fn solar_position_matches_spa_within_a_tenth_of_a_degree() {
    for &(name, t, zen, az) in SPA {
        let pos = geometry::solar_position(&site(name), t).unwrap();
        assert!(
            (pos.zenith - zen).abs() < 0.1,
            "{name} {t}: zenith {} vs {zen}",
            pos.zenith
        );
        // azimuth alone is ill-conditioned near the zenith
        let sep = separation_deg((pos.zenith, pos.azimuth), (zen, az));
        assert!(
            sep < 0.1,
            "{name} {t}: ({}, {}) is {sep} deg from ({zen}, {az})",
            pos.zenith,
            pos.azimuth
        );
    }
}

#[test]
fn reno_flags_match_pvlib_detect_clearsky() {
    let text = include_str!("data/reno_pvlib_oracle.csv");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let (mut times, mut meas, mut clear, mut expected) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let f = |i: usize| rec[i].parse::<f64>().unwrap();
        times.push(1_466_500_000 + 60 * rec[0].parse::<i64>().unwrap());
        meas.push(f(1));
        clear.push(f(2));
        expected.push(&rec[3] == "1");
    }
    let got =
        clearsky::detect_clear_samples(&times, &meas, &clear, &RenoThresholds::default()).unwrap();
    let mismatched: Vec<usize> = (0..got.len()).filter(|&i| got[i] != expected[i]).collect();
    assert!(
        mismatched.is_empty(),
        "minutes differing from pvlib: {mismatched:?}"
    );
}
