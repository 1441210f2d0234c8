use crate::analysis::{NoisePoint, PathEval, SimplexGrid};

fn table(schema: &str, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = format!("# schema: {schema}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("writing to memory")).expect("utf-8"));
    out
}

/// One row per path point; `alpha = 1` is the first endpoint.
pub fn path_csv(p: &PathEval) -> String {
    table(
        &format!("alpha weight on {}, remainder on {}", p.endpoints.0, p.endpoints.1),
        &["alpha", "loss", "accuracy"],
        (0..p.alphas.len()).map(|i| vec![p.alphas[i].to_string(), p.losses[i].to_string(), p.accuracies[i].to_string()]),
    )
}

pub fn grid_csv(g: &SimplexGrid) -> String {
    table(
        &format!("barycentric grid, resolution {}", g.resolution),
        &["alpha_1", "alpha_2", "alpha_3", "loss", "accuracy"],
        g.points.iter().map(|p| {
            let mut r: Vec<String> = p.alpha.iter().map(f64::to_string).collect();
            r.push(p.loss.to_string());
            r.push(p.accuracy.to_string());
            r
        }),
    )
}

pub fn noise_csv(points: &[NoisePoint]) -> String {
    table(
        "multiplicative weight noise",
        &["sigma", "mean_accuracy", "std_accuracy", "trials"],
        points.iter().map(|p| {
            vec![
                p.sigma.to_string(),
                p.mean_accuracy.to_string(),
                p.std_accuracy.to_string(),
                p.accuracies.len().to_string(),
            ]
        }),
    )
}
