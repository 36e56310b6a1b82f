//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use common::*;
use eoli_cli::config::{ImputerSettings, MiceBase};
use eoli_core::benchmark::{gaussian_kde, linear_grid, run_benchmark, silverman_bandwidth, Imputer, Method};
use eoli_core::imputation::{mean_impute, mice_impute, MiceConfig};
use eoli_core::index::{
    categorize_levels, compose_eoli, rank_year, CompositeIndex, CompositeWeights, SubIndexSeries, CATEGORIES_HEADER,
    RANKINGS_HEADER, SUBINDEX_HEADER,
};
use eoli_core::panel::{Pillar, LONG_HEADER, MISSINGNESS_HEADER};
use eoli_core::reduction::{
    correlation_matrix, kmo_from_correlation, pca, pca_from_correlation, varimax, zscore, Verdict,
    FACTOR_REPORT_HEADER, KMO_REPORT_HEADER, PCA_REPORT_HEADER, VARIMAX_MAX_ITER, VARIMAX_TOL,
};
use eoli_core::synthetic::benchmark_matrix;
use eoli_core::{FeatureMatrix, FeatureMatrixF64, RowKey, Stream};
use ndarray::{array, Array2, ArrayView2};
use serde_json::json;

type Outcome = Result<String, String>;

fn check(ok: bool, pass: String, fail: String) -> Outcome {
    if ok {
        Ok(pass)
    } else {
        Err(fail)
    }
}

fn gaussian(s: &mut Stream) -> f64 {
    let u = s.next_f64().max(1e-300);
    let v = s.next_f64();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn random_data(n: usize, p: usize, s: &mut Stream) -> FeatureMatrixF64 {
    let z: Vec<f64> = (0..n).map(|_| gaussian(s)).collect();
    let w: Vec<f64> = (0..p).map(|_| 2.0 * s.next_f64() - 1.0).collect();
    let dense = Array2::from_shape_fn((n, p), |(i, j)| w[j] * z[i] + gaussian(s));
    let names = (0..p).map(|j| format!("v{j}")).collect();
    FeatureMatrix::anonymous(names, dense.mapv(Some)).unwrap()
}

fn orthonormality_error(v: ArrayView2<f64>) -> f64 {
    let g = v.t().dot(&v);
    g.indexed_iter().map(|((i, j), x)| (x - if i == j { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max)
}

fn varimax_criterion(l: ArrayView2<f64>) -> f64 {
    let (p, k) = l.dim();
    let mut b = l.to_owned();
    for mut row in b.rows_mut() {
        let h = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if h > 0.0 {
            row.mapv_inplace(|v| v / h);
        }
    }
    (0..k)
        .map(|j| {
            let m4 = b.column(j).iter().map(|v| v.powi(4)).sum::<f64>() / p as f64;
            let m2 = b.column(j).iter().map(|v| v.powi(2)).sum::<f64>() / p as f64;
            m4 - m2 * m2
        })
        .sum()
}

fn random_orthogonal(k: usize, s: &mut Stream) -> Array2<f64> {
    let mut q = Array2::from_shape_fn((k, k), |_| gaussian(s));
    for j in 0..k {
        for i in 0..j {
            let d = q.column(i).dot(&q.column(j));
            let ci = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-d, &ci);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    q
}

fn composite(values: &[[f64; 4]], weights: &CompositeWeights) -> CompositeIndex {
    let subs: Vec<SubIndexSeries> = Pillar::ALL
        .iter()
        .map(|&p| {
            let scores: BTreeMap<RowKey, f64> = values
                .iter()
                .enumerate()
                .map(|(c, v)| (RowKey::new(format!("C{c:02}"), 2000), v[p.position()]))
                .collect();
            SubIndexSeries::from_normalized(p, scores).unwrap()
        })
        .collect();
    compose_eoli(&subs, weights).unwrap()
}

fn c1_benchmark() -> Outcome {
    let start = Instant::now();
    let m: FeatureMatrixF64 = benchmark_matrix(0);
    let cols = m.column_keys().to_vec();
    let settings = ImputerSettings::default();
    let methods = vec![
        Method::new("mean", Imputer::Mean),
        Method::new("mice_linear", Imputer::Mice(settings.mice_config(MiceBase::Linear, 0))),
        Method::new("mice_boost", Imputer::Mice(settings.mice_config(MiceBase::Boost, 0))),
        Method::new("forest", Imputer::Forest(settings.forest_config(0))),
    ];
    let report = run_benchmark(&m, &methods, 0.4, &cols, 30, 0).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).map_err(|e| e.to_string())?;
    let rows = String::from_utf8(buf).unwrap().lines().count() - 1;
    let rmse = |method: &str, col: &str| {
        report.summaries.iter().find(|s| s.method == method && s.attribute == col).map(|s| s.rmse_mean)
    };
    let mut worst = f64::INFINITY;
    let mut worst_at = String::new();
    for method in ["mice_linear", "mice_boost", "forest"] {
        for col in &cols {
            let gain =
                1.0 - rmse(method, col).ok_or("missing summary")? / rmse("mean", col).ok_or("missing summary")?;
            if gain < worst {
                worst = gain;
                worst_at = format!("{method}/{col}");
            }
        }
    }
    let ok = rows == 24 && report.n_runs == 30 && worst >= 0.15 && secs < 120.0;
    let detail =
        format!("{rows} summary rows, smallest RMSE gain over mean {:.1}% ({worst_at}), {secs:.1} s", 100.0 * worst);
    check(ok, detail.clone(), detail)
}

fn c2_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path(), 5);
    patch_config(&cfg, json!({ "imputer": quick_imputer(), "benchmark": quick_benchmark() }));
    let mut details = Vec::new();
    let mut ok = true;
    for cmd in ["run", "benchmark"] {
        let (a, b) = (tmp.path().join(format!("{cmd}_a")), tmp.path().join(format!("{cmd}_b")));
        for out in [&a, &b] {
            if run(&[cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]) != 0 {
                return Err(format!("`{cmd}` failed"));
            }
        }
        let (da, db) = (digests(&a), digests(&b));
        ok &= da == db && !da.is_empty();
        details.push(format!("{cmd}: {} files {}", da.len(), if da == db { "identical" } else { "differ" }));
    }
    check(ok, details.join(", "), details.join(", "))
}

fn c3_pca() -> Outcome {
    let r: Array2<f64> = array![[1.0, 0.6], [0.6, 1.0]];
    let exact = pca_from_correlation(r.view(), 2).map_err(|e| e.to_string())?;
    let err2 = (exact.explained_ratio[0] - 0.8).abs().max((exact.explained_ratio[1] - 0.2).abs());
    let mut s = Stream::new(3);
    let (mut sum_err, mut orth_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (n, p) = (10 + s.index_below(60), 2 + s.index_below(9));
        let z = zscore(&random_data(n, p, &mut s), false).unwrap().matrix;
        let out = pca(&z, p).map_err(|e| e.to_string())?;
        sum_err = sum_err.max((out.explained_ratio.sum() - 1.0).abs());
        orth_err = orth_err.max(orthonormality_error(out.components.view()));
    }
    let ok = err2 <= 1e-10 && sum_err <= 1e-9 && orth_err <= 1e-8;
    let d = format!(
        "2x2 error {err2:.1e}, ratio-sum error {sum_err:.1e}, orthonormality error {orth_err:.1e} over 200 inputs"
    );
    check(ok, d.clone(), d)
}

fn c4_kmo() -> Outcome {
    let r: Array2<f64> = Array2::from_shape_fn((3, 3), |(i, j)| if i == j { 1.0 } else { 0.5 });
    let k3 = kmo_from_correlation(r.view()).map_err(|e| e.to_string())?.kmo;
    let mut s = Stream::new(4);
    let mut out_of_range = 0;
    for _ in 0..1000 {
        let (n, p) = (8 + s.index_below(50), 2 + s.index_below(9));
        let r = correlation_matrix(&zscore(&random_data(n, p, &mut s), false).unwrap().matrix).unwrap();
        let k = kmo_from_correlation(r.view()).map_err(|e| e.to_string())?.kmo;
        if !(0.0..=1.0).contains(&k) {
            out_of_range += 1;
        }
    }
    let verdicts =
        [(0.49, Verdict::Inadequate), (0.55, Verdict::Mediocre), (0.7, Verdict::Adequate), (0.85, Verdict::Excellent)];
    let verdicts_ok = verdicts.iter().all(|&(v, want)| Verdict::from_kmo(v) == want);
    let ok = (k3 - 0.6923).abs() <= 1e-3 && out_of_range == 0 && verdicts_ok;
    let d = format!(
        "equicorrelated KMO {k3:.6}, {out_of_range}/1000 outside [0, 1], verdicts {}",
        if verdicts_ok { "match" } else { "differ" }
    );
    check(ok, d.clone(), d)
}

fn c5_varimax() -> Outcome {
    let mut s = Stream::new(5);
    let (mut orth, mut comm, mut drops) = (0.0f64, 0.0f64, 0);
    for _ in 0..200 {
        let k = 2 + s.index_below(3);
        let p = k + s.index_below(13 - k);
        let l = Array2::from_shape_fn((p, k), |_| 0.6 * gaussian(&mut s));
        let input = l.dot(&random_orthogonal(k, &mut s));
        let out = varimax(input.view(), VARIMAX_MAX_ITER, VARIMAX_TOL).map_err(|e| e.to_string())?;
        orth = orth.max(orthonormality_error(out.rotation.view()));
        for i in 0..p {
            let a: f64 = input.row(i).iter().map(|v| v * v).sum();
            let b: f64 = out.rotated.row(i).iter().map(|v| v * v).sum();
            comm = comm.max((a - b).abs());
        }
        if varimax_criterion(out.rotated.view()) < varimax_criterion(input.view()) {
            drops += 1;
        }
    }
    let ok = orth <= 1e-8 && comm <= 1e-8 && drops == 0;
    let d = format!("orthogonality error {orth:.1e}, communality error {comm:.1e}, {drops}/200 criterion decreases");
    check(ok, d.clone(), d)
}

fn c6_mice() -> Outcome {
    let mut s = Stream::new(6);
    let n = 300;
    let mut cells = Array2::from_elem((n, 2), None);
    for i in 0..n {
        let x = 20.0 * s.next_f64() - 5.0;
        cells[[i, 0]] = if s.next_f64() < 0.2 { None } else { Some(x) };
        cells[[i, 1]] = Some(2.0 * x);
    }
    let m = FeatureMatrix::anonymous(vec!["x".into(), "y".into()], cells).unwrap();
    let holes = m.column_missing_count(0);
    let out = mice_impute(&m, &MiceConfig::default()).map_err(|e| e.to_string())?.completed;
    let err = (0..n)
        .filter(|&i| m.is_missing(i, 0))
        .map(|i| (out.get(i, 0).unwrap() - out.get(i, 1).unwrap() / 2.0).abs())
        .fold(0.0, f64::max);
    let zero = mice_impute(&m, &MiceConfig { n_cycles: 0, ..Default::default() }).map_err(|e| e.to_string())?.completed;
    let mean = mean_impute(&m).map_err(|e| e.to_string())?.completed;
    let same = zero.values() == mean.values();
    let ok = err <= 1e-6 && same && holes > 0;
    let d = format!(
        "{holes} holes, max |x - y/2| {err:.1e}, zero cycles {} mean imputation",
        if same { "equals" } else { "differs from" }
    );
    check(ok, d.clone(), d)
}

fn c7_composition() -> Outcome {
    let hand = composite(&[[0.8, 0.6, 0.7, 0.4]], &CompositeWeights::default());
    let v = hand.eoli[&RowKey::new("C00", 2000)];
    let rejected =
        CompositeWeights::new(0.3, 0.3, 0.3, 0.3).is_err() && CompositeWeights::new(0.5, 0.5, 0.5, -0.5).is_err();
    let mut s = Stream::new(7);
    let mut outside = 0;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..4).map(|_| s.next_f64() + 1e-3).collect();
        let t: f64 = raw.iter().sum();
        let (a, b, c) = (raw[0] / t, raw[1] / t, raw[2] / t);
        let w = CompositeWeights::new(a, b, c, 1.0 - a - b - c).map_err(|e| e.to_string())?;
        let vals: Vec<[f64; 4]> =
            (0..1 + s.index_below(10)).map(|_| [s.next_f64(), s.next_f64(), s.next_f64(), s.next_f64()]).collect();
        outside += composite(&vals, &w).eoli.values().filter(|v| !(0.0..=1.0).contains(*v)).count();
    }
    let ok = (v - 0.655).abs() <= 1e-12 && rejected && outside == 0;
    let d = format!(
        "hand example {v:.15}, bad weights {}, {outside} scores outside [0, 1]",
        if rejected { "rejected" } else { "accepted" }
    );
    check(ok, d.clone(), d)
}

fn c8_ranking() -> Outcome {
    let mut s = Stream::new(8);
    let w = CompositeWeights::default();
    let (mut mono_fail, mut affine_fail, mut inversions) = (0, 0, 0);
    for _ in 0..1000 {
        let n = 4 + s.index_below(20);
        let mut vals: Vec<[f64; 4]> =
            (0..n).map(|_| [s.next_f64(), s.next_f64(), s.next_f64(), s.next_f64()]).collect();
        let who = s.index_below(n);
        let name = format!("C{who:02}");
        let idx = composite(&vals, &w);
        let before = rank_year(&idx, 2000).unwrap().rank_of(&name).unwrap();

        let (a, b) = (0.01 + 10.0 * s.next_f64(), 10.0 * s.next_f64() - 5.0);
        let mapped = idx.map_scores(|_, v| a * v + b);
        let order =
            |i: &CompositeIndex| rank_year(i, 2000).unwrap().entries.into_iter().map(|e| e.country).collect::<Vec<_>>();
        if order(&idx) != order(&mapped) {
            affine_fail += 1;
        }

        let levels = categorize_levels(&idx, 2000).unwrap();
        for (x, lx) in &levels {
            for (y, ly) in &levels {
                if idx.eoli[&RowKey::new(x.as_str(), 2000)] < idx.eoli[&RowKey::new(y.as_str(), 2000)] && lx > ly {
                    inversions += 1;
                }
            }
        }

        for v in vals[who].iter_mut() {
            *v += (1.0 - *v) * s.next_f64();
        }
        let after = rank_year(&composite(&vals, &w), 2000).unwrap().rank_of(&name).unwrap();
        if after > before {
            mono_fail += 1;
        }
    }
    let ok = mono_fail == 0 && affine_fail == 0 && inversions == 0;
    let d = format!(
        "{mono_fail}/1000 monotonicity failures, {affine_fail}/1000 affine changes, {inversions} level inversions"
    );
    check(ok, d.clone(), d)
}

fn c9_kde() -> Outcome {
    let h = 0.7;
    let est = gaussian_kde(&[2.0], &[2.0], Some(h)).map_err(|e| e.to_string())?;
    let peak_err = (est.density[0] - 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).abs();
    let mut s = Stream::new(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 2 + s.index_below(100);
        let scale = 0.1 + 20.0 * s.next_f64();
        let xs: Vec<f64> = (0..n).map(|_| scale * gaussian(&mut s)).collect();
        let bw = silverman_bandwidth(&xs).map_err(|e| e.to_string())?;
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min) - 5.0 * bw;
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 5.0 * bw;
        let grid = linear_grid(lo, hi, 4001);
        let d = gaussian_kde(&xs, &grid, Some(bw)).map_err(|e| e.to_string())?.density;
        let integral: f64 = grid.windows(2).zip(d.windows(2)).map(|(g, y)| (g[1] - g[0]) * (y[0] + y[1]) / 2.0).sum();
        worst = worst.max((integral - 1.0).abs());
    }
    let ok = peak_err <= 1e-9 && worst <= 1e-3;
    let d = format!("peak error {peak_err:.1e}, worst integral error {worst:.1e} over 100 samples");
    check(ok, d.clone(), d)
}

fn c10_smoke() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(tmp.path(), 0);
    let out = tmp.path().join("out");
    let start = Instant::now();
    let code = run(&["run", "--config", cfg.to_str().unwrap()]);
    let secs = start.elapsed().as_secs_f64();
    if code != 0 {
        return Err(format!("exit code {code}"));
    }
    let expected = [
        ("missingness_report.csv", MISSINGNESS_HEADER.to_string()),
        ("imputed.csv", LONG_HEADER.join(",")),
        ("pca_report.csv", PCA_REPORT_HEADER.to_string()),
        ("factor_report.csv", FACTOR_REPORT_HEADER.to_string()),
        ("kmo_report.csv", KMO_REPORT_HEADER.to_string()),
        ("subindex.csv", SUBINDEX_HEADER.to_string()),
        ("rankings.csv", RANKINGS_HEADER.to_string()),
        ("categories.csv", CATEGORIES_HEADER.to_string()),
    ];
    let listed: Vec<String> = manifest(&out)["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["file"].as_str().unwrap().to_string())
        .collect();
    let mut bad_headers = Vec::new();
    for (file, h) in &expected {
        if !listed.contains(&file.to_string()) || header(&out.join(file)) != *h {
            bad_headers.push(file.to_string());
        }
    }
    let text = fs::read_to_string(out.join("subindex.csv")).unwrap();
    let mut spans = [(f64::INFINITY, f64::NEG_INFINITY); 4];
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        for (j, span) in spans.iter_mut().enumerate() {
            let v: f64 = f[2 + j].parse().unwrap();
            *span = (span.0.min(v), span.1.max(v));
        }
    }
    let span_err = spans.iter().map(|(lo, hi)| lo.abs().max((hi - 1.0).abs())).fold(0.0, f64::max);
    let ok = secs < 60.0 && bad_headers.is_empty() && listed.len() == 8 && span_err <= 1e-12;
    let d = format!(
        "{secs:.1} s, {} artifacts, header mismatches {:?}, sub-index span error {span_err:.1e}",
        listed.len(),
        bad_headers
    );
    check(ok, d.clone(), d)
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("imputation benchmark", c1_benchmark),
        ("determinism", c2_determinism),
        ("pca oracle", c3_pca),
        ("kmo oracle", c4_kmo),
        ("varimax", c5_varimax),
        ("mice exact relation", c6_mice),
        ("composition", c7_composition),
        ("ranking properties", c8_ranking),
        ("kde", c9_kde),
        ("end-to-end smoke", c10_smoke),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
