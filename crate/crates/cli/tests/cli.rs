use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const AGES: [&str; 4] = ["R15_64", "R65_74", "R75_84", "R85p"];

/// Writes a wide STMF-style CSV with 52 weeks per year starting in 2015.
/// Southern countries peak in mid-year.
fn write_panel(dir: &Path, countries: &[(&str, bool)], years: i32) -> PathBuf {
    let mut s = String::from("CountryCode,Year,Week,Sex,R15_64,R65_74,R75_84,R85p\n");
    for (j, (code, south)) in countries.iter().enumerate() {
        for t in 0..(years as usize * 52) {
            let year = 2015 + (t / 52) as i32;
            let week = t % 52 + 1;
            let phase = if *south { std::f64::consts::PI } else { 0.0 };
            let angle = 2.0 * std::f64::consts::PI * (week as f64 - 0.5) / 52.0 + phase;
            let mut row = format!("{code},{year},{week},b");
            for x in 0..AGES.len() {
                let level = [-7.5, -5.0, -4.0, -2.6][x] + 0.05 * j as f64;
                let season = (0.08 + 0.03 * x as f64) * angle.cos() + 0.02 * (2.0 * angle).sin();
                let noise = 0.015 * ((t * 31 + x * 17 + j * 101) as f64 * 0.618).sin();
                let rate = (level - 0.0004 * t as f64 + season + noise).exp();
                let _ = write!(row, ",{rate:.10e}");
            }
            s.push_str(&row);
            s.push('\n');
        }
    }
    let path = dir.join("stmf.csv");
    std::fs::write(&path, s).unwrap();
    path
}

fn gbll(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gbll"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_gbll_writes_model_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[("AAA", false), ("BBB", false), ("CCC", true)], 3);
    let out = dir.path().join("run1");
    let o = gbll(&[
        "fit", "--model", "gbll", "--data", s(&data), "--out", s(&out), "--southern", "CCC", "--max-iter", "5",
    ]);
    ok(&o);
    assert!(out.join("model.gbll").is_file());
    let (header, rows) = read_csv(&out.join("whitenoise.csv"));
    assert_eq!(header, ["model", "15-64", "65-74", "75-84", "85+", "total"]);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "GBLL");
    let (header, rows) = read_csv(&out.join("components.csv"));
    assert_eq!(header[..3], ["model", "stage", "gamma"]);
    assert!(rows.iter().any(|r| r[3] == "common" && r[4] == "kappa"));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("stage 1: gamma"), "{stderr}");
}

#[test]
fn fit_ll_single_country() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[("AAA", false)], 3);
    let out = dir.path().join("ll");
    ok(&gbll(&["fit", "--model", "ll", "--data", s(&data), "--out", s(&out)]));
    assert!(out.join("model.ll").is_file());
}

#[test]
fn hby_order_truncation_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[("AAA", false), ("BBB", false)], 3);
    let out = dir.path().join("hby");
    let o = gbll(&["fit", "--model", "hby", "--order", "6", "--data", s(&data), "--out", s(&out)]);
    ok(&o);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("order truncated to 4"), "{stderr}");
    assert!(out.join("model.hby").is_file());
}

#[test]
fn forecast_rows_back_transform_and_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[("AAA", false), ("SSS", true)], 3);
    let out = dir.path().join("run");
    ok(&gbll(&[
        "fit", "--model", "gbll", "--data", s(&data), "--out", s(&out), "--southern", "SSS", "--max-iter", "3",
    ]));
    let model = out.join("model.gbll");

    let fc = dir.path().join("fc");
    ok(&gbll(&["forecast", "--artifact", s(&model), "--h", "52", "--out", s(&fc)]));
    let (header, rows) = read_csv(&fc.join("forecast.csv"));
    assert_eq!(header, ["country", "age", "week", "horizon", "rate"]);
    assert_eq!(rows.len(), 52 * 2 * 4);
    assert_eq!(rows[0][2], "2018-W01");
    // The oldest age group of the southern country sits near exp(-2.6).
    for r in rows.iter().filter(|r| r[0] == "SSS" && r[1] == "85+") {
        let rate: f64 = r[4].parse().unwrap();
        assert!(rate > 0.02 && rate < 0.2, "{rate}");
    }
    // Southern rates peak in mid-year, not at the turn of the year.
    let sss: Vec<f64> = rows
        .iter()
        .filter(|r| r[0] == "SSS" && r[1] == "85+")
        .map(|r| r[4].parse().unwrap())
        .collect();
    assert!(sss[26] > sss[0]);

    let frozen = dir.path().join("frozen");
    ok(&gbll(&["forecast", "--artifact", s(&model), "--h", "104", "--frozen-kappa", "--out", s(&frozen)]));
    let (_, rows) = read_csv(&frozen.join("forecast.csv"));
    for block in rows.chunks(104) {
        for u in 0..52 {
            assert_eq!(block[u][4], block[u + 52][4]);
        }
    }
}

#[test]
fn cluster_with_fixed_k() {
    let dir = tempfile::tempdir().unwrap();
    let countries: Vec<(String, bool)> = (0..6).map(|j| (format!("C{j:02}"), j % 3 == 0)).collect();
    let refs: Vec<(&str, bool)> = countries.iter().map(|(c, s)| (c.as_str(), *s)).collect();
    let data = write_panel(dir.path(), &refs, 4);
    let out = dir.path().join("cl");
    ok(&gbll(&["cluster", "--method", "2", "--k", "3", "--data", s(&data), "--out", s(&out)]));
    let (header, rows) = read_csv(&out.join("clusters.csv"));
    assert_eq!(header, ["country", "method", "cluster_id"]);
    assert_eq!(rows.len(), 6);
    let mut ids: Vec<&str> = rows.iter().map(|r| r[2].as_str()).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids, ["1", "2", "3"]);
}

#[test]
fn backtest_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[("AAA", false), ("BBB", false), ("CCC", true)], 5);
    let out = dir.path().join("bt");
    ok(&gbll(&[
        "backtest", "--models", "ll,hby,gbll", "--max-iter", "2", "--order", "2", "--data", s(&data), "--southern",
        "CCC", "--out", s(&out),
    ]));
    let (header, rows) = read_csv(&out.join("table2.csv"));
    assert_eq!(header, ["h", "LL", "HBY", "GBLL"]);
    assert_eq!(rows.len(), 12);
    for r in &rows {
        for v in &r[1..] {
            let v: f64 = v.parse().unwrap();
            assert!(v.is_finite() && v >= 0.0);
        }
    }
    let (_, rows) = read_csv(&out.join("table3.csv"));
    assert_eq!(rows.len(), 4 * 12);
    let (header, rows) = read_csv(&out.join("mape_tidy.csv"));
    assert_eq!(header, ["model", "method", "fold", "country", "age", "h", "mape"]);
    assert_eq!(rows.len(), 3 * 10 * 3 * 4 * 12);
    assert!(std::fs::read_to_string(out.join("table2.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn clustered_backtest_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let countries: Vec<(String, bool)> = (0..5).map(|j| (format!("C{j:02}"), j == 4)).collect();
    let refs: Vec<(&str, bool)> = countries.iter().map(|(c, s)| (c.as_str(), *s)).collect();
    let data = write_panel(dir.path(), &refs, 5);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&gbll(&[
            "backtest", "--models", "ll", "--clustering", "1,2,3", "--k", "2", "--max-iter", "2", "--data",
            s(&data), "--out", s(&out), "--jobs", "2",
        ]));
        out
    };
    let a = run("a");
    let (header, rows) = read_csv(&a.join("table8.csv"));
    assert_eq!(header, ["h", "method1 LL", "method2 LL", "method3 LL", "GBLL unclustered"]);
    assert_eq!(rows.len(), 12);
    let b = run("b");
    for f in ["table2.csv", "table8.csv", "clusters.csv", "mape_tidy.csv", "table8.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_panel(dir.path(), &[("AAA", false)], 3);
    let out = dir.path().join("x");

    let o = gbll(&["fit", "--model", "nope", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = gbll(&["fit", "--model", "ll", "--lb-alpha", "2", "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(2));
    let o = gbll(&["fit", "--model", "ll", "--data", s(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    let o = gbll(&["forecast", "--artifact", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let o = gbll(&["backtest", "--models", "ll", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));

    // Two ages moving in opposite directions have loadings summing to zero.
    let mut csv = String::from("CountryCode,Year,Week,Sex,R15_64,R65_74,R75_84,R85p\n");
    for t in 0..156 {
        let s = 0.1 * (t as f64 * 0.37).sin();
        let _ = writeln!(
            csv,
            "AAA,{},{},b,{:e},{:e},{:e},{:e}",
            2015 + t / 52,
            t % 52 + 1,
            (-7.0 + s).exp(),
            (-5.0 - s).exp(),
            (-4.0f64).exp(),
            (-3.0f64).exp()
        );
    }
    let degenerate = dir.path().join("degenerate.csv");
    std::fs::write(&degenerate, csv).unwrap();
    let o = gbll(&["fit", "--model", "ll", "--data", s(&degenerate), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}
